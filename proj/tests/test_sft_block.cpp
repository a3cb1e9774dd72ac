#include <doctest.h>

#include "oracles.hpp"
#include "sft/sft_block.hpp"
#include "sft/train.hpp"

using namespace sft;
using D = double;

namespace {

SFTBlock<D> tiny_block(uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    // T=2, C=2, 4x4 grid, 2 heads, window 2, mlp ratio 2, d_feb 4, all modes
    return SFTBlock<D>(2, 2, 4, 4, 2, 2, 2, 4, 0, rng);
}

}  // namespace

TEST_CASE("spacetime token grid round-trips") {
    std::mt19937_64 rng(2);
    auto z = constant(Tensor<D>::randn({3, 5, 4, 4}, rng));
    auto grid = to_st_grid(z);
    REQUIRE(grid->value.shape == std::vector<int64_t>({1, 4, 4, 15}));
    auto back = from_st_grid(grid, 3, 5);
    CHECK(oracle::max_abs_diff(back->value, z->value) == 0.0);
    // token (y,x) carries frame-major channel features
    // grid[0,y,x,t*C+c] == z[t,c,y,x]
    CHECK(grid->value[0 * 15 + 2 * 5 + 3] == z->value[((2 * 5 + 3) * 4 + 0) * 4 + 0]);
}

TEST_CASE("block preserves shape") {
    auto blk = tiny_block();
    std::mt19937_64 rng(3);
    auto z = constant(Tensor<D>::randn({2, 2, 4, 4}, rng));
    auto out = blk.forward(z);
    CHECK(out->value.shape == z->value.shape);
    CHECK(out->value.all_finite());
}

TEST_CASE("forward equals the residual sum of the three branches") {
    auto blk = tiny_block();
    std::mt19937_64 rng(4);
    auto z = constant(Tensor<D>::randn({2, 2, 4, 4}, rng));
    auto full = blk.forward(z)->value;
    auto f_st = blk.st_correlation(z)->value;
    auto f_s = blk.spatial_refinement(z)->value;
    auto f_t = blk.t_layer.forward(z)->value;
    for (int64_t i = 0; i < full.numel(); ++i)
        CHECK(full[i] ==
              doctest::Approx(z->value[i] + f_st[i] + f_s[i] + f_t[i]).epsilon(1e-12));
}

TEST_CASE("spatiotemporal correlation mixes frames") {
    auto blk = tiny_block();
    std::mt19937_64 rng(5);
    auto z = Tensor<D>::randn({2, 2, 4, 4}, rng);
    auto base = blk.st_correlation(constant(z))->value;
    Tensor<D> z2 = z;
    z2[3] += 1.0;  // perturb frame 0 only
    auto pert = blk.st_correlation(constant(z2))->value;
    int64_t fsz = 2 * 4 * 4;
    double frame1_diff = 0;
    for (int64_t i = 0; i < fsz; ++i)
        frame1_diff = std::max(frame1_diff, std::abs(pert[fsz + i] - base[fsz + i]));
    CHECK(frame1_diff > 1e-8);  // frame 0 perturbation reaches frame 1
}

TEST_CASE("spatial refinement never mixes frames") {
    auto blk = tiny_block();
    std::mt19937_64 rng(6);
    auto z = Tensor<D>::randn({2, 2, 4, 4}, rng);
    auto base = blk.spatial_refinement(constant(z))->value;
    Tensor<D> z2 = z;
    for (int64_t i = 0; i < 2 * 4 * 4; ++i) z2[i] += 0.5;  // perturb all of frame 0
    auto pert = blk.spatial_refinement(constant(z2))->value;
    int64_t fsz = 2 * 4 * 4;
    for (int64_t i = 0; i < fsz; ++i)
        CHECK(pert[fsz + i] == doctest::Approx(base[fsz + i]).epsilon(1e-12));
}

TEST_CASE("temporal branch output is channel-uniform") {
    auto blk = tiny_block();
    std::mt19937_64 rng(7);
    auto z = constant(Tensor<D>::randn({2, 2, 4, 4}, rng));
    auto f_t = blk.t_layer.forward(z)->value;
    for (int64_t t = 0; t < 2; ++t)
        for (int64_t i = 0; i < 16; ++i)
            CHECK(f_t[(t * 2 + 0) * 16 + i] == f_t[(t * 2 + 1) * 16 + i]);
}

TEST_CASE("stacking applies blocks in order") {
    std::mt19937_64 rng(8);
    std::vector<SFTBlock<D>> blocks;
    blocks.push_back(tiny_block(10));
    blocks.push_back(tiny_block(11));
    auto z = constant(Tensor<D>::randn({2, 2, 4, 4}, rng));
    auto stacked = stack_forward(z, blocks)->value;
    auto manual = blocks[1].forward(blocks[0].forward(z))->value;
    CHECK(oracle::max_abs_diff(stacked, manual) == 0.0);
}

TEST_CASE("full block gradcheck") {
    auto blk = tiny_block(12);
    std::mt19937_64 rng(9);
    auto z = leaf(Tensor<D>::randn({2, 2, 4, 4}, rng), "z");
    NamedParams<D> checked{{"z", z}};
    blk.collect(checked, "blk");
    checked = unique_params(checked);
    std::mt19937_64 wrng(44);
    auto wts = constant(Tensor<D>::randn({2, 2, 4, 4}, wrng));
    auto rep = gradcheck<D>([&] { return sum_all(mul(blk.forward(z), wts)); }, checked, 1e-5,
                            1e-3, 4);
    for (const auto& e : rep.entries) {
        INFO(e.name, " rel err ", e.max_rel_err);
        CHECK(e.pass);
    }
}
