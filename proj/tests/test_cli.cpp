#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <fstream>

#include "sft/data_io.hpp"
#include "sft/model.hpp"

// exercises the built binary end to end through /bin/sh; the test runs from
// the build directory, next to the executable

using namespace sft;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
    std::string cmd = "./sftcast " + args + " >/dev/null 2>&1";
    int st = std::system(cmd.c_str());
    REQUIRE(st != -1);
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path temp_root() {
    static fs::path root = [] {
        auto d = fs::temp_directory_path() / ("sft_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return root;
}

json tiny_config_json() {
    ModelConfig c;
    c.channels = 4;
    c.depth_n = 2;
    c.t_in = c.t_out = 2;
    c.height = c.width = 32;
    c.window_size = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.d_feb = 4;
    c.gn_groups = 2;
    c.batch_size = 2;
    c.steps = 3;
    c.window_width = 4;
    c.window_stride = 2;
    c.checkpoint_every = 0;
    return json(c);
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("cli end to end") {
    auto root = temp_root();
    auto data = root / "data";
    auto cfg_path = root / "config.json";
    std::ofstream(cfg_path) << tiny_config_json().dump(2);

    SUBCASE("synth writes deterministic containers") {
        CHECK(run("synth --seed 5 --count 3 --frames 4 --size 32 --out " +
                  (root / "a").string()) == 0);
        CHECK(run("synth --seed 5 --count 3 --frames 4 --size 32 --out " +
                  (root / "b").string()) == 0);
        int dirs = 0;
        for (const auto& e : fs::directory_iterator(root / "a"))
            if (e.is_directory()) ++dirs;
        CHECK(dirs == 3);
        CHECK(read_file(root / "a/seq_00000/frames.bin") ==
              read_file(root / "b/seq_00000/frames.bin"));
        CHECK(fs::exists(root / "a/run_manifest.json"));
    }

    SUBCASE("synth rejects sizes the window plan cannot tile") {
        CHECK(run("synth --seed 1 --count 1 --frames 4 --size 48 --out " +
                  (root / "bad").string()) == 2);
    }

    SUBCASE("missing data directory is a usage error") {
        CHECK(run("train --data " + (root / "nope").string() + " --config " + cfg_path.string() +
                  " --out " + (root / "t0").string()) == 2);
    }

    SUBCASE("unknown flags are a usage error") {
        CHECK(run("train --definitely-not-a-flag 1") == 2);
    }

    SUBCASE("train, eval, predict pipeline") {
        REQUIRE(run("synth --seed 9 --count 4 --frames 4 --size 32 --out " + data.string()) == 0);
        auto tdir = root / "train";
        REQUIRE(run("train --data " + data.string() + " --config " + cfg_path.string() +
                    " --out " + tdir.string()) == 0);
        auto ckpt = tdir / "checkpoint_final.sftckpt";
        REQUIRE(fs::exists(ckpt));
        // log has exactly `steps` records and the loss moved
        std::ifstream log(tdir / "train_log.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(log, line)) {
            CHECK(json::parse(line).contains("loss"));
            ++lines;
        }
        CHECK(lines == 3);

        // eval with a mismatching config exits 2
        auto bad_cfg = root / "bad_config.json";
        auto j = tiny_config_json();
        j["channels"] = 8;
        std::ofstream(bad_cfg) << j.dump(2);
        CHECK(run("eval --data " + data.string() + " --checkpoint " + ckpt.string() +
                  " --config " + bad_cfg.string() + " --out " + (root / "e0").string()) == 2);

        auto edir = root / "eval";
        REQUIRE(run("eval --data " + data.string() + " --checkpoint " + ckpt.string() +
                    " --pixel-thresholds 0.3 --out " + edir.string()) == 0);
        auto report = json::parse(read_file(edir / "report.json"));
        // one row per threshold x lead x {model, persistence}
        CHECK(report["rows"].size() == 1 * 2 * 2);
        CHECK(fs::exists(edir / "csi_tau0.3000.csv"));
        CHECK(fs::exists(edir / "csi_tau0.3000.ppm"));

        // identical inputs give identical reports
        auto edir2 = root / "eval2";
        REQUIRE(run("eval --data " + data.string() + " --checkpoint " + ckpt.string() +
                    " --pixel-thresholds 0.3 --out " + edir2.string()) == 0);
        CHECK(read_file(edir / "report.json") == read_file(edir2 / "report.json"));

        auto pdir = root / "pred";
        REQUIRE(run("predict --input " + (data / "seq_00000").string() + " --checkpoint " +
                    ckpt.string() + " --out " + pdir.string()) == 0);
        auto pred = read_sequence(pdir / "prediction");
        CHECK(pred.t == 2);
        CHECK(pred.h == 32);
        CHECK(pred.w == 32);
        // grid: input + truth + prediction rows, T columns
        std::ifstream pgm(pdir / "frames.pgm", std::ios::binary);
        std::string magic;
        int64_t w = 0, h = 0, maxv = 0;
        pgm >> magic >> w >> h >> maxv;
        CHECK(magic == "P5");
        CHECK(w == 2 * 32);
        CHECK(h == 3 * 32);

        // input shorter than the model horizon exits 2
        EchoSequence shorty;
        shorty.t = 1;
        shorty.h = shorty.w = 32;
        shorty.frames.assign(1024, 0.f);
        write_sequence(shorty, root / "short");
        CHECK(run("predict --input " + (root / "short").string() + " --checkpoint " +
                  ckpt.string() + " --out " + (root / "p2").string()) == 2);
    }
}
