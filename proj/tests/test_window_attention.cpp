#include <doctest.h>

#include "oracles.hpp"
#include "sft/train.hpp"

using namespace sft;
using D = double;

TEST_CASE("window partition places the expected tokens and round-trips") {
    Tensor<D> g({1, 4, 4, 1});
    for (int64_t i = 0; i < 16; ++i) g[i] = static_cast<D>(i);
    auto grid = constant(g);
    auto w = window_partition(grid, 2);
    REQUIRE(w->value.shape == std::vector<int64_t>({4, 4, 1}));
    // window 0 = top-left 2x2 = {0, 1, 4, 5}
    CHECK(w->value[0] == 0);
    CHECK(w->value[1] == 1);
    CHECK(w->value[2] == 4);
    CHECK(w->value[3] == 5);

    std::mt19937_64 rng(1);
    auto g2 = constant(Tensor<D>::randn({3, 8, 8, 5}, rng));
    auto back = window_reverse(window_partition(g2, 4), 4, 3, 8, 8);
    CHECK(oracle::max_abs_diff(back->value, g2->value) == 0.0);
}

TEST_CASE("partition rejects grids the window does not tile") {
    std::mt19937_64 rng(2);
    auto g = constant(Tensor<D>::randn({1, 6, 6, 2}, rng));
    CHECK_THROWS_AS(window_partition(g, 4), config_error);
}

TEST_CASE("window attention equals the dense oracle when one window covers the grid") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 3; ++trial) {
        WindowAttention<D> wa(16, 4, 8, rng, /*rel_bias=*/false);
        auto grid = constant(Tensor<D>::randn({1, 8, 8, 16}, rng));
        auto out = wa.forward(window_partition(grid, 8));
        auto expect = oracle::dense_attention(
            Tensor<D>({64, 16}, grid->value.data), wa);
        CHECK(oracle::max_abs_diff(Tensor<D>({64, 16}, out->value.data), expect) < 1e-10);
    }
}

TEST_CASE("swin block equals a dense transformer block at full-grid window") {
    std::mt19937_64 rng(4);
    SwinBlock<D> blk(16, 4, 8, 2, rng, /*rel_bias=*/false);
    CHECK(blk.shift == 4);  // shift configured but inert when the window covers the grid
    for (int trial = 0; trial < 3; ++trial) {
        auto grid = constant(Tensor<D>::randn({1, 8, 8, 16}, rng));
        auto out = blk.forward(grid);
        auto expect = oracle::dense_block(Tensor<D>({64, 16}, grid->value.data), blk);
        CHECK(oracle::max_abs_diff(Tensor<D>({64, 16}, out->value.data), expect) < 1e-9);
    }
}

TEST_CASE("swin block preserves shape and differentiates under shift") {
    std::mt19937_64 rng(5);
    SwinBlock<D> blk(8, 2, 2, 2, rng);
    auto grid = constant(Tensor<D>::randn({2, 4, 4, 8}, rng));
    auto out = blk.forward(grid);
    CHECK(out->value.shape == grid->value.shape);
    CHECK(out->value.all_finite());
}

TEST_CASE("relative position index is symmetric under token swap reflection") {
    auto idx = relative_position_index(3);
    REQUIRE(idx.size() == 81);
    int64_t table = 5 * 5;
    for (auto v : idx) {
        CHECK(v >= 0);
        CHECK(v < table);
    }
    // (a,b) and (b,a) map to reflected displacements
    for (int64_t a = 0; a < 9; ++a)
        for (int64_t b = 0; b < 9; ++b) {
            int64_t ab = idx[a * 9 + b], ba = idx[b * 9 + a];
            int64_t dy = ab / 5 - 2, dx = ab % 5 - 2;
            int64_t ry = ba / 5 - 2, rx = ba % 5 - 2;
            CHECK(dy == -ry);
            CHECK(dx == -rx);
        }
    // center diagonal: zero displacement
    for (int64_t a = 0; a < 9; ++a) CHECK(idx[a * 9 + a] == 2 * 5 + 2);
}

TEST_CASE("shifted-window mask blocks exactly the cross-region pairs") {
    int64_t h = 8, w = 8, ws = 4, shift = 2;
    auto mask = shifted_window_mask<D>(h, w, ws, shift);
    REQUIRE(mask.shape == std::vector<int64_t>({4, 16, 16}));

    auto ids = shift_region_ids(h, w, ws, shift);
    for (int64_t wy = 0; wy < 2; ++wy)
        for (int64_t wx = 0; wx < 2; ++wx) {
            std::vector<int> rid(16);
            for (int64_t a = 0; a < 16; ++a) {
                int64_t y = wy * ws + a / ws;
                int64_t x = wx * ws + a % ws;
                rid[a] = ids[y * w + x];
            }
            for (int64_t a = 0; a < 16; ++a)
                for (int64_t b = 0; b < 16; ++b) {
                    D m = mask[((wy * 2 + wx) * 16 + a) * 16 + b];
                    if (rid[a] == rid[b])
                        CHECK(m == 0.0);
                    else
                        CHECK(m == -1e9);
                }
        }
    // the window untouched by the shift boundary is fully unmasked
    bool all_zero = true;
    for (int64_t i = 0; i < 256; ++i) all_zero = all_zero && mask[i] == 0.0;
    CHECK(all_zero);
}

TEST_CASE("masked attention never leaks weight across regions") {
    // two tokens in separate regions: forcing the mask on a full window makes
    // row a ignore column b entirely, so changing v_b leaves output row a fixed
    std::mt19937_64 rng(6);
    WindowAttention<D> wa(4, 1, 2, rng, false);
    Tensor<D> mask({1, 4, 4});
    for (auto& v : mask.data) v = -1e9;
    for (int64_t i = 0; i < 4; ++i) mask[i * 4 + i] = 0;  // attend to self only

    auto win = Tensor<D>::randn({1, 4, 4}, rng);
    auto out1 = wa.forward(constant(win), &mask);
    Tensor<D> win2 = win;
    for (int64_t d = 0; d < 4; ++d) win2[3 * 4 + d] += 5.0;  // perturb token 3
    auto out2 = wa.forward(constant(win2), &mask);
    for (int64_t tok = 0; tok < 3; ++tok)
        for (int64_t d = 0; d < 4; ++d)
            CHECK(out1->value[tok * 4 + d] == doctest::Approx(out2->value[tok * 4 + d]).epsilon(1e-12));
}

TEST_CASE("swin block gradcheck on a tiny shifted grid") {
    std::mt19937_64 rng(7);
    SwinBlock<D> blk(4, 2, 2, 2, rng);
    auto grid = leaf(Tensor<D>::randn({1, 4, 4, 4}, rng), "grid");
    NamedParams<D> checked{{"grid", grid}};
    blk.collect(checked, "blk");
    std::mt19937_64 wrng(99);
    auto wts = constant(Tensor<D>::randn({1, 4, 4, 4}, wrng));
    auto rep = gradcheck<D>([&] { return sum_all(mul(blk.forward(grid), wts)); }, checked, 1e-5,
                            1e-3, 6);
    for (const auto& e : rep.entries) {
        INFO(e.name, " rel err ", e.max_rel_err);
        CHECK(e.pass);
    }
}
