// sftcast: batch CLI for synthetic radar-echo data generation, model
// training, evaluation against a persistence baseline, and single-sequence
// prediction with plot emission.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "sft/plotting.hpp"
#include "sft/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sft;

static constexpr const char* kVersion = "sftcast-0.1.0";

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

ModelConfig load_config(const std::string& path) {
    ModelConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw config_error("bad config file " + path + ": " + e.what());
    }
    cfg = j.get<ModelConfig>();
    return cfg;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const ModelConfig& cfg,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    double wall_ms) {
    json m = {{"command", command},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed},
              {"inputs", inputs},
              {"outputs", outputs},
              {"version", kVersion},
              {"wall_ms", wall_ms}};
    std::ofstream f(out_dir / "run_manifest.json");
    if (!f) throw std::runtime_error("cannot write manifest in " + out_dir.string());
    f << m.dump(2) << "\n";
}

// dataset directory = one subdirectory per sequence container
std::vector<fs::path> list_sequence_dirs(const fs::path& data_dir) {
    if (!fs::is_directory(data_dir))
        throw config_error("data directory does not exist: " + data_dir.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty())
        throw config_error("no sequence containers found under " + data_dir.string());
    return dirs;
}

std::vector<SequenceWindow> load_windows(const fs::path& data_dir, const ModelConfig& cfg) {
    std::vector<SequenceWindow> windows;
    for (const auto& d : list_sequence_dirs(data_dir)) {
        auto seq = read_sequence(d);
        auto w = build_windows(seq, cfg.t_in + cfg.t_out, cfg.window_stride, cfg.t_in);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    if (windows.empty())
        throw config_error("dataset yields no windows of width " +
                           std::to_string(cfg.t_in + cfg.t_out));
    return windows;
}

EchoSequence predict_window(const Model<float>& model, const EchoSequence& input) {
    NoGradGuard ng;
    auto fw = model.forward(constant(sequence_to_tensor<float>(input), "x"));
    return tensor_to_sequence(fw.pred->value, input.interval_min, input.source_id);
}

// ---------------------------------------------------------------------------

int cmd_synth(uint64_t seed, int count, int64_t frames, int64_t size, const fs::path& out) {
    Timer timer;
    ModelConfig cfg;
    cfg.seed = seed;
    cfg.height = cfg.width = size;
    cfg.validate();  // rejects sizes the default latent/window plan cannot tile
    fs::create_directories(out);
    auto seqs = generate_synthetic(seed, count, frames, size, size);
    std::vector<std::string> outputs;
    for (size_t i = 0; i < seqs.size(); ++i) {
        char name[32];
        snprintf(name, sizeof(name), "seq_%05zu", i);
        write_sequence(seqs[i], out / name);
        outputs.push_back(name);
    }
    write_manifest(out, "synth", cfg, {}, outputs, timer.ms());
    std::cout << "wrote " << seqs.size() << " sequences to " << out.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& data, const ModelConfig& cfg, const fs::path& out,
              const std::string& resume) {
    Timer timer;
    cfg.validate();
    auto windows = load_windows(data, cfg);
    fs::create_directories(out);

    Model<float> model(cfg);
    Trainer<float> trainer(model);
    if (!resume.empty()) trainer.load(resume);

    std::ofstream log(out / "train_log.jsonl", resume.empty() ? std::ios::out : std::ios::app);
    if (!log) throw std::runtime_error("cannot open train log in " + out.string());
    {
        std::ofstream cf(out / "config.json");
        cf << json(cfg).dump(2) << "\n";
    }
    fs::path ckpt_dir = out;
    auto trace = trainer.train(windows, cfg.steps, &log, &ckpt_dir);
    fs::path final_ckpt = out / "checkpoint_final.sftckpt";
    trainer.save(final_ckpt);

    write_manifest(out, "train", cfg, {data.string(), resume},
                   {"train_log.jsonl", "config.json", final_ckpt.filename().string()}, timer.ms());
    std::cout << "trained " << trace.size() << " steps; first loss " << trace.front().loss
              << ", last loss " << trace.back().loss << "\n";
    return 0;
}

struct EvalArtifacts {
    MetricReport model_rep, persist_rep;
    double model_mse = 0, persist_mse = 0;
};

EvalArtifacts run_eval(const Model<float>& model, const std::vector<SequenceWindow>& windows,
                       const std::vector<double>& pixel_thresholds) {
    std::vector<std::pair<EchoSequence, EchoSequence>> model_pairs, persist_pairs;
    double mmse = 0, pmse = 0;
    for (const auto& w : windows) {
        auto pred = predict_window(model, w.input);
        auto persist = persistence_baseline(w.input, w.target.t);
        mmse += sequence_mse(pred, w.target);
        pmse += sequence_mse(persist, w.target);
        model_pairs.push_back({std::move(pred), w.target});
        persist_pairs.push_back({std::move(persist), w.target});
    }
    EvalArtifacts a;
    a.model_rep = evaluate(model_pairs, pixel_thresholds);
    a.persist_rep = evaluate(persist_pairs, pixel_thresholds);
    a.model_mse = mmse / static_cast<double>(windows.size());
    a.persist_mse = pmse / static_cast<double>(windows.size());
    return a;
}

json report_json(const MetricReport& rep, const std::string& who) {
    json rows = json::array();
    auto opt = [](const std::optional<double>& v) {
        return v ? json(*v) : json(nullptr);
    };
    for (size_t ti = 0; ti < rep.thresholds.size(); ++ti)
        for (int64_t lead = 1; lead <= rep.lead_times; ++lead) {
            const auto& c = rep.cell(ti, lead);
            rows.push_back({{"forecast", who},
                            {"threshold", c.threshold},
                            {"lead", c.lead},
                            {"tp", c.counts.tp},
                            {"fp", c.counts.fp},
                            {"fn", c.counts.fn},
                            {"tn", c.counts.tn},
                            {"csi", opt(c.csi)},
                            {"gss", opt(c.gss)},
                            {"hss", opt(c.hss)},
                            {"ets", opt(c.ets)}});
        }
    return rows;
}

int cmd_eval(const fs::path& data, const fs::path& ckpt_path, const std::string& config_path,
             std::vector<double> rain_thresholds, std::vector<double> pixel_thresholds,
             const fs::path& out) {
    Timer timer;
    auto ck = load_checkpoint<float>(ckpt_path);
    if (!config_path.empty()) {
        auto given = load_config(config_path);
        if (config_hash(given) != config_hash(ck.config))
            throw config_error("checkpoint/config mismatch: checkpoint " +
                               config_hash(ck.config) + " vs config " + config_hash(given));
    }
    if (pixel_thresholds.empty()) {
        if (rain_thresholds.empty())
            for (const auto& t : default_thresholds()) pixel_thresholds.push_back(t.pixel_threshold);
        else
            for (double r : rain_thresholds) pixel_thresholds.push_back(rate_to_pixel(r));
    }

    Model<float> model(ck.config);
    restore_params(ck, model.params());
    auto windows = load_windows(data, ck.config);
    fs::create_directories(out);

    auto a = run_eval(model, windows, pixel_thresholds);

    json report = {{"pixel_thresholds", pixel_thresholds},
                   {"lead_times", a.model_rep.lead_times},
                   {"windows", windows.size()},
                   {"model_mse", a.model_mse},
                   {"persistence_mse", a.persist_mse},
                   {"rows", json::array()}};
    for (auto& r : report_json(a.model_rep, "model")) report["rows"].push_back(r);
    for (auto& r : report_json(a.persist_rep, "persistence")) report["rows"].push_back(r);
    {
        std::ofstream f(out / "report.json");
        f << report.dump(2) << "\n";
    }

    std::vector<std::string> outputs = {"report.json"};
    struct MetricDef {
        const char* name;
        std::optional<double> (*get)(const MetricCell&);
    };
    static const MetricDef defs[] = {
        {"csi", [](const MetricCell& c) { return c.csi; }},
        {"gss", [](const MetricCell& c) { return c.gss; }},
        {"hss", [](const MetricCell& c) { return c.hss; }},
    };
    for (size_t ti = 0; ti < pixel_thresholds.size(); ++ti) {
        char tag[48];
        snprintf(tag, sizeof(tag), "tau%.4f", pixel_thresholds[ti]);
        for (const auto& d : defs) {
            CurveSeries ms{std::string("model_") + d.name, {}, 200, 40, 40};
            CurveSeries ps{std::string("persistence_") + d.name, {}, 40, 40, 200};
            for (int64_t lead = 1; lead <= a.model_rep.lead_times; ++lead) {
                ms.values.push_back(d.get(a.model_rep.cell(ti, lead)));
                ps.values.push_back(d.get(a.persist_rep.cell(ti, lead)));
            }
            std::string base = std::string(d.name) + "_" + tag;
            write_curve_csv({ms, ps}, out / (base + ".csv"));
            write_ppm(curve_plot({ms, ps}, d.name == std::string("csi") ? 0.0 : -1.0, 1.0),
                      out / (base + ".ppm"));
            outputs.push_back(base + ".csv");
            outputs.push_back(base + ".ppm");
        }
    }

    write_manifest(out, "eval", ck.config, {data.string(), ckpt_path.string()}, outputs,
                   timer.ms());
    auto mcsi = a.model_rep.mean_csi(0), pcsi = a.persist_rep.mean_csi(0);
    std::cout << "eval over " << windows.size() << " windows: model mse " << a.model_mse
              << ", persistence mse " << a.persist_mse;
    if (mcsi && pcsi)
        std::cout << "; mean csi @" << pixel_thresholds[0] << ": model " << *mcsi
                  << " vs persistence " << *pcsi;
    std::cout << "\n";
    return 0;
}

int cmd_predict(const fs::path& input, const fs::path& ckpt_path, const fs::path& out) {
    Timer timer;
    auto ck = load_checkpoint<float>(ckpt_path);
    auto seq = read_sequence(input);
    if (seq.t < ck.config.t_in)
        throw config_error("input has " + std::to_string(seq.t) + " frames, model needs " +
                           std::to_string(ck.config.t_in));
    Model<float> model(ck.config);
    restore_params(ck, model.params());

    // first t_in frames drive the model; later frames, if present, are truth
    EchoSequence in_part;
    in_part.t = ck.config.t_in;
    in_part.h = seq.h;
    in_part.w = seq.w;
    in_part.interval_min = seq.interval_min;
    in_part.convention = seq.convention;
    in_part.source_id = seq.source_id;
    in_part.frames.assign(seq.frames.begin(),
                          seq.frames.begin() + ck.config.t_in * seq.h * seq.w);
    auto pred = predict_window(model, in_part);
    write_sequence(pred, out / "prediction");

    std::vector<const EchoSequence*> rows = {&in_part};
    EchoSequence truth;
    int64_t avail = seq.t - ck.config.t_in;
    if (avail > 0) {
        truth.t = std::min(avail, ck.config.t_out);
        truth.h = seq.h;
        truth.w = seq.w;
        truth.frames.assign(seq.frames.begin() + ck.config.t_in * seq.h * seq.w,
                            seq.frames.begin() + (ck.config.t_in + truth.t) * seq.h * seq.w);
        rows.push_back(&truth);
    }
    rows.push_back(&pred);
    write_pgm(frame_grid(rows), out / "frames.pgm");

    write_manifest(out, "predict", ck.config, {input.string(), ckpt_path.string()},
                   {"prediction", "frames.pgm"}, timer.ms());
    std::cout << "predicted " << pred.t << " frames of " << pred.h << "x" << pred.w << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radar echo extrapolation: synth / train / eval / predict"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    uint64_t s_seed = 0;
    int s_count = 32;
    int64_t s_frames = 20, s_size = 128;
    std::string s_out;
    synth->add_option("--seed", s_seed, "RNG seed");
    synth->add_option("--count", s_count, "number of sequences")->check(CLI::PositiveNumber);
    synth->add_option("--frames", s_frames, "frames per sequence")->check(CLI::PositiveNumber);
    synth->add_option("--size", s_size, "frame height and width")->check(CLI::PositiveNumber);
    synth->add_option("--out", s_out, "output dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string t_data, t_config, t_out, t_resume;
    uint64_t t_seed = 0;
    int64_t t_steps = 0, t_batch = 0;
    double t_lr = 0, t_lambda = -1;
    train->add_option("--data", t_data, "dataset directory")->required();
    train->add_option("--config", t_config, "model/training config JSON");
    train->add_option("--out", t_out, "output directory")->required();
    train->add_option("--resume", t_resume, "checkpoint to resume from");
    train->add_option("--seed", t_seed, "override config seed");
    train->add_option("--steps", t_steps, "override config steps");
    train->add_option("--batch-size", t_batch, "override config batch size");
    train->add_option("--lr-max", t_lr, "override config peak learning rate");
    train->add_option("--lambda", t_lambda, "override reconstruction loss weight");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against persistence");
    std::string e_data, e_ckpt, e_config, e_out;
    std::vector<double> e_rain, e_pixel;
    eval->add_option("--data", e_data, "dataset directory")->required();
    eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    eval->add_option("--config", e_config, "config JSON to verify against the checkpoint");
    eval->add_option("--thresholds", e_rain, "rain-rate thresholds, mm/h");
    eval->add_option("--pixel-thresholds", e_pixel, "pixel thresholds in [0,1]");
    eval->add_option("--out", e_out, "output directory")->required();

    // predict
    auto* predict = app.add_subcommand("predict", "run one sequence through a checkpoint");
    std::string p_input, p_ckpt, p_out;
    predict->add_option("--input", p_input, "input sequence container")->required();
    predict->add_option("--checkpoint", p_ckpt, "checkpoint file")->required();
    predict->add_option("--out", p_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(s_seed, s_count, s_frames, s_size, s_out);
        if (*train) {
            auto cfg = load_config(t_config);
            if (train->count("--seed")) cfg.seed = t_seed;
            if (train->count("--steps")) cfg.steps = t_steps;
            if (train->count("--batch-size")) cfg.batch_size = t_batch;
            if (train->count("--lr-max")) cfg.lr_max = t_lr;
            if (train->count("--lambda")) cfg.lambda = t_lambda;
            return cmd_train(t_data, cfg, t_out, t_resume);
        }
        if (*eval) return cmd_eval(e_data, e_ckpt, e_config, e_rain, e_pixel, e_out);
        if (*predict) return cmd_predict(p_input, p_ckpt, p_out);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
