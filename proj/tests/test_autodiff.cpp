#include <doctest.h>

#include "sft/train.hpp"

using namespace sft;
using D = double;

namespace {

std::mt19937_64 rng(12345);

Var<D> rand_leaf(std::vector<int64_t> shape, const char* name) {
    return leaf(Tensor<D>::randn(std::move(shape), rng), name);
}

// scalar probe that weights every output element differently
Var<D> probe(const Var<D>& out) {
    std::mt19937_64 r(777);
    return sum_all(mul(out, constant(Tensor<D>::randn(out->value.shape, r))));
}

void expect_gradcheck_ok(const NamedParams<D>& checked, std::function<Var<D>()> make_loss,
                         double tol = 1e-6) {
    auto rep = gradcheck<D>(make_loss, checked, 1e-5, tol, 12);
    for (const auto& e : rep.entries) {
        INFO(e.name, " max_rel_err=", e.max_rel_err);
        CHECK(e.pass);
    }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    auto a = rand_leaf({3, 4}, "a");
    auto b = rand_leaf({3, 4}, "b");
    expect_gradcheck_ok({{"a", a}, {"b", b}}, [&] {
        auto x = add(mul(a, b), scale(sub(a, b), 0.7));
        x = leaky_relu(x, 0.2);
        x = sigmoid(x);
        return probe(x);
    });
}

TEST_CASE("matmul value and gradient") {
    auto a = leaf(Tensor<D>({2, 2}, {1, 2, 3, 4}), "a");
    auto b = leaf(Tensor<D>({2, 2}, {5, 6, 7, 8}), "b");
    auto c = matmul(a, b);
    CHECK(c->value[0] == doctest::Approx(19));
    CHECK(c->value[1] == doctest::Approx(22));
    CHECK(c->value[2] == doctest::Approx(43));
    CHECK(c->value[3] == doctest::Approx(50));

    auto x = rand_leaf({3, 5}, "x");
    auto w = rand_leaf({5, 4}, "w");
    auto bias = rand_leaf({4}, "bias");
    expect_gradcheck_ok({{"x", x}, {"w", w}, {"bias", bias}},
                        [&] { return probe(linear(x, w, bias)); });
}

TEST_CASE("bmm and transpose gradients") {
    auto a = rand_leaf({4, 3, 5}, "a");
    auto b = rand_leaf({4, 5, 2}, "b");
    expect_gradcheck_ok({{"a", a}, {"b", b}},
                        [&] { return probe(bmm(a, transpose_last2(transpose_last2(b)))); });
}

TEST_CASE("softmax rows sum to one and gradient checks") {
    auto x = rand_leaf({5, 7}, "x");
    auto y = softmax_lastdim(x);
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int c = 0; c < 7; ++c) s += y->value[r * 7 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    expect_gradcheck_ok({{"x", x}}, [&] { return probe(softmax_lastdim(x)); });
}

TEST_CASE("layer_norm gradient") {
    auto x = rand_leaf({4, 6}, "x");
    auto g = rand_leaf({6}, "g");
    auto b = rand_leaf({6}, "b");
    expect_gradcheck_ok({{"x", x}, {"g", g}, {"b", b}},
                        [&] { return probe(layer_norm(x, g, b)); }, 1e-5);
}

TEST_CASE("group_norm gradient") {
    auto x = rand_leaf({2, 4, 3, 3}, "x");
    auto g = rand_leaf({4}, "g");
    auto b = rand_leaf({4}, "b");
    expect_gradcheck_ok({{"x", x}, {"g", g}, {"b", b}},
                        [&] { return probe(group_norm(x, int64_t{2}, g, b)); }, 1e-5);
}

TEST_CASE("conv2d matches a direct loop and finite differences") {
    auto x = rand_leaf({2, 3, 5, 5}, "x");
    auto w = rand_leaf({4, 3, 3, 3}, "w");
    auto b = rand_leaf({4}, "b");
    auto y = conv2d(x, w, b, 1, 1);
    REQUIRE(y->value.shape == std::vector<int64_t>({2, 4, 5, 5}));

    // direct oracle
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t co = 0; co < 4; ++co)
            for (int64_t oy : {0, 2, 4})
                for (int64_t ox : {1, 3}) {
                    double s = b->value[co];
                    for (int64_t ci = 0; ci < 3; ++ci)
                        for (int64_t i = 0; i < 3; ++i)
                            for (int64_t j = 0; j < 3; ++j) {
                                int64_t iy = oy - 1 + i, ix = ox - 1 + j;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                                s += x->value[((n * 3 + ci) * 5 + iy) * 5 + ix] *
                                     w->value[((co * 3 + ci) * 3 + i) * 3 + j];
                            }
                    CHECK(y->value[((n * 4 + co) * 5 + oy) * 5 + ox] ==
                          doctest::Approx(s).epsilon(1e-10));
                }

    expect_gradcheck_ok({{"x", x}, {"w", w}, {"b", b}},
                        [&] { return probe(conv2d(x, w, b, 1, 1)); });
    expect_gradcheck_ok({{"x", x}, {"w", w}, {"b", b}},
                        [&] { return probe(conv2d(x, w, b, 2, 1)); });
}

TEST_CASE("conv_transpose2d shapes and gradient") {
    auto x = rand_leaf({2, 3, 4, 4}, "x");
    auto w = rand_leaf({3, 2, 4, 4}, "w");
    auto b = rand_leaf({2}, "b");
    auto y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y->value.shape == std::vector<int64_t>({2, 2, 8, 8}));
    expect_gradcheck_ok({{"x", x}, {"w", w}, {"b", b}},
                        [&] { return probe(conv_transpose2d(x, w, b, 2, 1)); });

    auto w3 = rand_leaf({3, 2, 3, 3}, "w3");
    auto y1 = conv_transpose2d(x, w3, b, 1, 1);
    CHECK(y1->value.shape == std::vector<int64_t>({2, 2, 4, 4}));
    expect_gradcheck_ok({{"x", x}, {"w3", w3}},
                        [&] { return probe(conv_transpose2d(x, w3, Var<D>(), 1, 1)); });
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // <conv(x), y> == <x, conv_transpose(y)> for bias-free shared weights
    std::mt19937_64 r(9);
    auto w = leaf(Tensor<D>::randn({2, 3, 3, 3}, r), "w");       // conv weight (Co,Ci,k,k)
    auto wt = leaf(Tensor<D>(w->value.shape, w->value.data), "wt");  // same values as (Ci',Co',k,k)
    auto x = constant(Tensor<D>::randn({1, 3, 6, 6}, r));
    auto y = constant(Tensor<D>::randn({1, 2, 3, 3}, r));
    auto cx = conv2d(x, w, Var<D>(), 2, 1);  // (1,2,3,3)
    double lhs = 0;
    for (int64_t i = 0; i < cx->value.numel(); ++i) lhs += cx->value[i] * y->value[i];
    auto cty = conv_transpose2d(y, wt, Var<D>(), 2, 1);  // (1,3,5,5) -> pads differ
    // choose pad so output is 6: (3-1)*2 - 2p + 3 = 6 -> p = 0.5 not integral; use k=4
    auto w4 = leaf(Tensor<D>::randn({2, 3, 4, 4}, r), "w4");
    auto wt4 = leaf(Tensor<D>(w4->value.shape, w4->value.data), "wt4");
    auto cx4 = conv2d(x, w4, Var<D>(), 2, 1);  // (1,2,3,3)
    lhs = 0;
    for (int64_t i = 0; i < cx4->value.numel(); ++i) lhs += cx4->value[i] * y->value[i];
    auto cty4 = conv_transpose2d(y, wt4, Var<D>(), 2, 1);  // back to (1,3,6,6)? (3-1)*2-2+4=8-2+...
    REQUIRE(cty4->value.shape == std::vector<int64_t>({1, 3, 6, 6}));
    double rhs = 0;
    for (int64_t i = 0; i < x->value.numel(); ++i) rhs += x->value[i] * cty4->value[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    (void)cty;
}

TEST_CASE("shape ops round-trip and gradients") {
    auto x = rand_leaf({2, 3, 4}, "x");
    expect_gradcheck_ok({{"x", x}}, [&] { return probe(permute(x, {2, 0, 1})); });
    expect_gradcheck_ok({{"x", x}}, [&] { return probe(reshape(x, {4, 6})); });
    expect_gradcheck_ok({{"x", x}}, [&] { return probe(take_axis0(x, {1, 0, 1})); });

    auto y = rand_leaf({2, 2, 4}, "y");
    expect_gradcheck_ok({{"x", x}, {"y", y}}, [&] { return probe(concat_axis(1, x, y)); });

    auto g = rand_leaf({2, 4, 4, 3}, "g");
    auto rolled = roll_hw(g, -1, -2);
    auto back = roll_hw(rolled, 1, 2);
    for (int64_t i = 0; i < g->value.numel(); ++i) CHECK(back->value[i] == g->value[i]);
    expect_gradcheck_ok({{"g", g}}, [&] { return probe(roll_hw(g, -1, 2)); });

    auto s = rand_leaf({3, 1, 2, 2}, "s");
    expect_gradcheck_ok({{"s", s}}, [&] { return probe(broadcast_axis(s, 1, 5)); });
}

TEST_CASE("channel / bias helpers") {
    auto x = rand_leaf({2, 3, 4, 4}, "x");
    auto gate = rand_leaf({2, 3}, "gate");
    expect_gradcheck_ok({{"x", x}, {"gate", gate}}, [&] { return probe(mul_channels(x, gate)); });
    expect_gradcheck_ok({{"x", x}}, [&] { return probe(mean_hw(x)); });
    auto e = rand_leaf({2, 3}, "e");
    expect_gradcheck_ok({{"x", x}, {"e", e}}, [&] { return probe(add_tc_bias(x, e)); });
}

TEST_CASE("mse and joint loss arithmetic") {
    auto a = leaf(Tensor<D>::full({2, 2}, 1.5), "a");
    auto b = constant(Tensor<D>::full({2, 2}, 1.0));
    auto l = mse(a, b);
    CHECK(l->value[0] == doctest::Approx(0.25));
    // y_hat - y = 0.5 everywhere, recon 2, lambda 0.01 -> 0.25 + 0.02
    auto recon = constant(Tensor<D>({1}, {2.0}));
    auto joint = add(l, scale(recon, 0.01));
    CHECK(joint->value[0] == doctest::Approx(0.27));
    expect_gradcheck_ok({{"a", a}}, [&] { return mse(a, b); });
}

TEST_CASE("grad accumulates across repeated use of one leaf") {
    auto x = leaf(Tensor<D>({1}, {3.0}), "x");
    auto y = mul(x, x);  // d/dx = 2x = 6
    backward(sum_all(y));
    CHECK(x->grad[0] == doctest::Approx(6.0));
}
