#pragma once

// Reverse-mode autodiff over dense tensors. Each op computes its value
// eagerly and records a backprop closure; backward() walks the graph in
// reverse topological order. Single-threaded by design so loss traces and
// gradients are bit-reproducible.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "sft/tensor.hpp"

namespace sft {

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatX<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatX<S>>;

template <typename S>
Var<S> leaf(Tensor<S> v, std::string name = "", bool requires_grad = true) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->name = std::move(name);
    n->requires_grad = requires_grad;
    return n;
}

template <typename S>
Var<S> constant(Tensor<S> v, std::string name = "") {
    return leaf(std::move(v), std::move(name), false);
}

template <typename S>
Tensor<S>& grad_of(Node<S>& n) {
    if (!n.has_grad) {
        n.grad = Tensor<S>::zeros(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

// inference switch: while disabled, new nodes drop their parents so the
// graph is never retained and intermediates free as they go out of scope
inline bool& grad_recording() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_recording()) { grad_recording() = false; }
    ~NoGradGuard() { grad_recording() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
Var<S> make_var(Tensor<S> v, std::vector<Var<S>> parents, std::function<void(Node<S>&)> bp) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    bool rg = false;
    if (grad_recording())
        for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return n;
}

template <typename S>
void zero_grad(const Var<S>& v) {
    v->has_grad = false;
    v->grad = Tensor<S>();
}

template <typename S>
void backward(const Var<S>& root) {
    check(root->value.numel() == 1, "backward: root must be scalar");
    // iterative post-order DFS
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<S>* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    grad_of(*root)[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backprop && n->has_grad) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    check(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_var<S>(std::move(out), {a, b}, [](Node<S>& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            auto& g = grad_of(p);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    check(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_var<S>(std::move(out), {a, b}, [](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = grad_of(*n.parents[0]);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = grad_of(*n.parents[1]);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    check(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_var<S>(std::move(out), {a, b}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        if (a.requires_grad) {
            auto& g = grad_of(a);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b.value[i];
        }
        if (b.requires_grad) {
            auto& g = grad_of(b);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a.value[i];
        }
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v *= c;
    return make_var<S>(std::move(out), {a}, [c](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * n.grad[i];
    });
}

template <typename S>
Var<S> add_const(const Var<S>& a, const Tensor<S>& c) {
    check(a->value.same_shape(c), "add_const: shape mismatch");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    return make_var<S>(std::move(out), {a}, [](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = v > S(0) ? v : slope * v;
    return make_var<S>(std::move(out), {a}, [slope](Node<S>& n) {
        auto& p = *n.parents[0];
        auto& g = grad_of(p);
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] += n.grad[i] * (p.value[i] > S(0) ? S(1) : slope);
    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
    Tensor<S> saved = out;
    return make_var<S>(std::move(out), {a}, [saved](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] += n.grad[i] * saved[i] * (S(1) - saved[i]);
    });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<int64_t> shape) {
    check(Tensor<S>::count(shape) == a->value.numel(), "reshape: element count mismatch");
    Tensor<S> out(std::move(shape), a->value.data);
    return make_var<S>(std::move(out), {a}, [](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
    return st;
}

// permutation mapping: out index (i0..ik) = in index at (i_{perm[0]}..)
// out.shape[d] = in.shape[perm[d]]
template <typename S>
std::vector<int64_t> permute_index_map(const std::vector<int64_t>& in_shape,
                                       const std::vector<int>& perm) {
    std::vector<int64_t> out_shape(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) out_shape[d] = in_shape[perm[d]];
    auto in_st = strides_of(in_shape);
    auto out_st = strides_of(out_shape);
    int64_t n = 1;
    for (auto d : out_shape) n *= d;
    std::vector<int64_t> map(n);
    std::vector<int64_t> idx(perm.size(), 0);
    for (int64_t o = 0; o < n; ++o) {
        int64_t src = 0;
        for (size_t d = 0; d < perm.size(); ++d) src += idx[d] * in_st[perm[d]];
        map[o] = src;
        for (int d = static_cast<int>(perm.size()) - 1; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return map;
}

template <typename S>
Var<S> permute(const Var<S>& a, std::vector<int> perm) {
    check(perm.size() == a->value.shape.size(), "permute: rank mismatch");
    std::vector<int64_t> out_shape(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) out_shape[d] = a->value.shape[perm[d]];
    auto map = permute_index_map<S>(a->value.shape, perm);
    Tensor<S> out(out_shape);
    for (int64_t o = 0; o < out.numel(); ++o) out[o] = a->value[map[o]];
    auto map_sp = std::make_shared<std::vector<int64_t>>(std::move(map));
    return make_var<S>(std::move(out), {a}, [map_sp](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t o = 0; o < n.grad.numel(); ++o) g[(*map_sp)[o]] += n.grad[o];
    });
}

// gather slices along axis 0; indices may repeat (backward scatter-adds)
template <typename S>
Var<S> take_axis0(const Var<S>& a, std::vector<int64_t> idx) {
    check(!a->value.shape.empty(), "take_axis0: rank 0");
    int64_t slice = a->value.numel() / a->value.shape[0];
    std::vector<int64_t> out_shape = a->value.shape;
    out_shape[0] = static_cast<int64_t>(idx.size());
    Tensor<S> out(out_shape);
    for (size_t k = 0; k < idx.size(); ++k) {
        check(idx[k] >= 0 && idx[k] < a->value.shape[0], "take_axis0: index out of range");
        std::copy_n(a->value.data.begin() + idx[k] * slice, slice,
                    out.data.begin() + static_cast<int64_t>(k) * slice);
    }
    auto idx_sp = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return make_var<S>(std::move(out), {a}, [idx_sp, slice](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (size_t k = 0; k < idx_sp->size(); ++k) {
            int64_t src = static_cast<int64_t>(k) * slice;
            int64_t dst = (*idx_sp)[k] * slice;
            for (int64_t i = 0; i < slice; ++i) g[dst + i] += n.grad[src + i];
        }
    });
}

template <typename S>
Var<S> concat_axis(int axis, const Var<S>& a, const Var<S>& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    check(sa.size() == sb.size(), "concat: rank mismatch");
    for (size_t d = 0; d < sa.size(); ++d)
        check(static_cast<int>(d) == axis || sa[d] == sb[d], "concat: shape mismatch");
    std::vector<int64_t> out_shape = sa;
    out_shape[axis] += sb[axis];
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= sa[d];
    int64_t inner = 1;
    for (size_t d = axis + 1; d < sa.size(); ++d) inner *= sa[d];
    int64_t wa = sa[axis] * inner, wb = sb[axis] * inner;
    Tensor<S> out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(a->value.data.begin() + o * wa, wa, out.data.begin() + o * (wa + wb));
        std::copy_n(b->value.data.begin() + o * wb, wb, out.data.begin() + o * (wa + wb) + wa);
    }
    return make_var<S>(std::move(out), {a, b}, [outer, wa, wb](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = grad_of(*n.parents[0]);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < wa; ++i) g[o * wa + i] += n.grad[o * (wa + wb) + i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = grad_of(*n.parents[1]);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < wb; ++i) g[o * wb + i] += n.grad[o * (wa + wb) + wa + i];
        }
    });
}

// cyclic shift of dims 1,2 of a (B, h, w, D) grid
template <typename S>
Var<S> roll_hw(const Var<S>& a, int64_t sh, int64_t sw) {
    check(a->value.rank() == 4, "roll_hw: expects rank 4");
    int64_t B = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2), D = a->value.dim(3);
    auto wrap = [](int64_t i, int64_t n) { return ((i % n) + n) % n; };
    Tensor<S> out(a->value.shape);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                int64_t sy = wrap(y - sh, h), sx = wrap(x - sw, w);
                std::copy_n(a->value.data.begin() + ((b * h + sy) * w + sx) * D, D,
                            out.data.begin() + ((b * h + y) * w + x) * D);
            }
    return make_var<S>(std::move(out), {a}, [B, h, w, D, sh, sw, wrap](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    int64_t sy = wrap(y - sh, h), sx = wrap(x - sw, w);
                    int64_t src = ((b * h + y) * w + x) * D, dst = ((b * h + sy) * w + sx) * D;
                    for (int64_t d = 0; d < D; ++d) g[dst + d] += n.grad[src + d];
                }
    });
}

// broadcast a singleton axis to `reps` copies
template <typename S>
Var<S> broadcast_axis(const Var<S>& a, int axis, int64_t reps) {
    check(a->value.shape[axis] == 1, "broadcast_axis: axis must have extent 1");
    std::vector<int64_t> out_shape = a->value.shape;
    out_shape[axis] = reps;
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= a->value.shape[d];
    int64_t inner = a->value.numel() / outer;
    Tensor<S> out(out_shape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t r = 0; r < reps; ++r)
            std::copy_n(a->value.data.begin() + o * inner, inner,
                        out.data.begin() + (o * reps + r) * inner);
    return make_var<S>(std::move(out), {a}, [outer, inner, reps](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t r = 0; r < reps; ++r)
                for (int64_t i = 0; i < inner; ++i)
                    g[o * inner + i] += n.grad[(o * reps + r) * inner + i];
    });
}

// gather rows of a table by constant indices: (R, D), idx(N) -> (N, D)
template <typename S>
Var<S> rows_lookup(const Var<S>& table, std::vector<int64_t> idx) {
    check(table->value.rank() == 2, "rows_lookup: table must be rank 2");
    return take_axis0(table, std::move(idx));
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    S s = S(0);
    for (S v : a->value.data) s += v;
    return make_var<S>(Tensor<S>({1}, {s}), {a}, [](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a->value.numel()));
}

template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// (B, C, H, W) -> (B, C) spatial mean (SE squeeze)
template <typename S>
Var<S> mean_hw(const Var<S>& a) {
    check(a->value.rank() == 4, "mean_hw: expects rank 4");
    int64_t B = a->value.dim(0), C = a->value.dim(1), HW = a->value.dim(2) * a->value.dim(3);
    Tensor<S> out({B, C});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        S s = S(0);
        for (int64_t i = 0; i < HW; ++i) s += a->value[bc * HW + i];
        out[bc] = s / static_cast<S>(HW);
    }
    return make_var<S>(std::move(out), {a}, [HW](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        S inv = S(1) / static_cast<S>(HW);
        for (int64_t bc = 0; bc < n.grad.numel(); ++bc)
            for (int64_t i = 0; i < HW; ++i) g[bc * HW + i] += n.grad[bc] * inv;
    });
}

// x (B,C,H,W) scaled per (b,c) by gate (B,C)
template <typename S>
Var<S> mul_channels(const Var<S>& x, const Var<S>& gate) {
    check(x->value.rank() == 4 && gate->value.rank() == 2, "mul_channels: bad ranks");
    check(x->value.dim(0) == gate->value.dim(0) && x->value.dim(1) == gate->value.dim(1),
          "mul_channels: shape mismatch");
    int64_t HW = x->value.dim(2) * x->value.dim(3);
    Tensor<S> out = x->value;
    for (int64_t bc = 0; bc < gate->value.numel(); ++bc)
        for (int64_t i = 0; i < HW; ++i) out[bc * HW + i] *= gate->value[bc];
    return make_var<S>(std::move(out), {x, gate}, [HW](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& gate = *n.parents[1];
        if (x.requires_grad) {
            auto& g = grad_of(x);
            for (int64_t bc = 0; bc < gate.value.numel(); ++bc)
                for (int64_t i = 0; i < HW; ++i) g[bc * HW + i] += n.grad[bc * HW + i] * gate.value[bc];
        }
        if (gate.requires_grad) {
            auto& g = grad_of(gate);
            for (int64_t bc = 0; bc < gate.value.numel(); ++bc) {
                S s = S(0);
                for (int64_t i = 0; i < HW; ++i) s += n.grad[bc * HW + i] * x.value[bc * HW + i];
                g[bc] += s;
            }
        }
    });
}

// x (T,C,h,w) + emb (T,C) broadcast over h,w
template <typename S>
Var<S> add_tc_bias(const Var<S>& x, const Var<S>& emb) {
    check(x->value.rank() == 4 && emb->value.rank() == 2, "add_tc_bias: bad ranks");
    check(x->value.dim(0) == emb->value.dim(0) && x->value.dim(1) == emb->value.dim(1),
          "add_tc_bias: shape mismatch");
    int64_t HW = x->value.dim(2) * x->value.dim(3);
    Tensor<S> out = x->value;
    for (int64_t tc = 0; tc < emb->value.numel(); ++tc)
        for (int64_t i = 0; i < HW; ++i) out[tc * HW + i] += emb->value[tc];
    return make_var<S>(std::move(out), {x, emb}, [HW](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = grad_of(*n.parents[0]);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = grad_of(*n.parents[1]);
            for (int64_t tc = 0; tc < g.numel(); ++tc) {
                S s = S(0);
                for (int64_t i = 0; i < HW; ++i) s += n.grad[tc * HW + i];
                g[tc] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    check(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank 2 expected");
    int64_t m = a->value.dim(0), k = a->value.dim(1), n_ = b->value.dim(1);
    check(b->value.dim(0) == k, "matmul: inner dims differ");
    Tensor<S> out({m, n_});
    MapM<S>(out.data.data(), m, n_) =
        CMapM<S>(a->value.data.data(), m, k) * CMapM<S>(b->value.data.data(), k, n_);
    return make_var<S>(std::move(out), {a, b}, [m, k, n_](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        CMapM<S> G(n.grad.data.data(), m, n_);
        if (a.requires_grad)
            MapM<S>(grad_of(a).data.data(), m, k).noalias() +=
                G * CMapM<S>(b.value.data.data(), k, n_).transpose();
        if (b.requires_grad)
            MapM<S>(grad_of(b).data.data(), k, n_).noalias() +=
                CMapM<S>(a.value.data.data(), m, k).transpose() * G;
    });
}

// batched matmul: (B,m,k) x (B,k,n) -> (B,m,n)
template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
    check(a->value.rank() == 3 && b->value.rank() == 3, "bmm: rank 3 expected");
    int64_t B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n_ = b->value.dim(2);
    check(b->value.dim(0) == B && b->value.dim(1) == k, "bmm: shape mismatch");
    Tensor<S> out({B, m, n_});
    for (int64_t i = 0; i < B; ++i)
        MapM<S>(out.data.data() + i * m * n_, m, n_) =
            CMapM<S>(a->value.data.data() + i * m * k, m, k) *
            CMapM<S>(b->value.data.data() + i * k * n_, k, n_);
    return make_var<S>(std::move(out), {a, b}, [B, m, k, n_](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        for (int64_t i = 0; i < B; ++i) {
            CMapM<S> G(n.grad.data.data() + i * m * n_, m, n_);
            if (a.requires_grad)
                MapM<S>(grad_of(a).data.data() + i * m * k, m, k).noalias() +=
                    G * CMapM<S>(b.value.data.data() + i * k * n_, k, n_).transpose();
            if (b.requires_grad)
                MapM<S>(grad_of(b).data.data() + i * k * n_, k, n_).noalias() +=
                    CMapM<S>(a.value.data.data() + i * m * k, m, k).transpose() * G;
        }
    });
}

template <typename S>
Var<S> transpose_last2(const Var<S>& a) {
    check(a->value.rank() == 3, "transpose_last2: rank 3 expected");
    return permute(a, {0, 2, 1});
}

// x (N,in) * W (in,out) + b(out)
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& W, const Var<S>& b = nullptr) {
    auto y = matmul(x, W);
    if (!b) return y;
    check(b->value.rank() == 1 && b->value.dim(0) == y->value.dim(1), "linear: bad bias");
    int64_t N = y->value.dim(0), D = y->value.dim(1);
    Tensor<S> out = y->value;
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < D; ++c) out[r * D + c] += b->value[c];
    return make_var<S>(std::move(out), {y, b}, [N, D](Node<S>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = grad_of(*n.parents[0]);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = grad_of(*n.parents[1]);
            for (int64_t r = 0; r < N; ++r)
                for (int64_t c = 0; c < D; ++c) g[c] += n.grad[r * D + c];
        }
    });
}

// softmax over the last dimension, any rank
template <typename S>
Var<S> softmax_lastdim(const Var<S>& a) {
    int64_t D = a->value.shape.back();
    int64_t rows = a->value.numel() / D;
    Tensor<S> out = a->value;
    for (int64_t r = 0; r < rows; ++r) {
        S* p = out.data.data() + r * D;
        S mx = *std::max_element(p, p + D);
        S sum = S(0);
        for (int64_t i = 0; i < D; ++i) {
            p[i] = std::exp(p[i] - mx);
            sum += p[i];
        }
        for (int64_t i = 0; i < D; ++i) p[i] /= sum;
    }
    Tensor<S> saved = out;
    return make_var<S>(std::move(out), {a}, [saved, rows, D](Node<S>& n) {
        auto& g = grad_of(*n.parents[0]);
        for (int64_t r = 0; r < rows; ++r) {
            const S* y = saved.data.data() + r * D;
            const S* dy = n.grad.data.data() + r * D;
            S dot = S(0);
            for (int64_t i = 0; i < D; ++i) dot += dy[i] * y[i];
            for (int64_t i = 0; i < D; ++i) g[r * D + i] += y[i] * (dy[i] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// normalization

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
    int64_t D = x->value.shape.back();
    check(gamma->value.numel() == D && beta->value.numel() == D, "layer_norm: bad affine shape");
    int64_t rows = x->value.numel() / D;
    Tensor<S> out(x->value.shape);
    Tensor<S> xhat(x->value.shape);
    std::vector<S> inv_std(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const S* p = x->value.data.data() + r * D;
        S mean = S(0);
        for (int64_t i = 0; i < D; ++i) mean += p[i];
        mean /= static_cast<S>(D);
        S var = S(0);
        for (int64_t i = 0; i < D; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= static_cast<S>(D);
        S istd = S(1) / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (int64_t i = 0; i < D; ++i) {
            S xh = (p[i] - mean) * istd;
            xhat[r * D + i] = xh;
            out[r * D + i] = gamma->value[i] * xh + beta->value[i];
        }
    }
    auto xhat_sp = std::make_shared<Tensor<S>>(std::move(xhat));
    auto istd_sp = std::make_shared<std::vector<S>>(std::move(inv_std));
    return make_var<S>(std::move(out), {x, gamma, beta}, [xhat_sp, istd_sp, rows, D](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& gamma = *n.parents[1];
        auto& beta = *n.parents[2];
        const auto& xh = *xhat_sp;
        if (x.requires_grad) {
            auto& g = grad_of(x);
            for (int64_t r = 0; r < rows; ++r) {
                S sum_dxh = S(0), sum_dxh_xh = S(0);
                for (int64_t i = 0; i < D; ++i) {
                    S dxh = n.grad[r * D + i] * gamma.value[i];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[r * D + i];
                }
                S invD = S(1) / static_cast<S>(D);
                for (int64_t i = 0; i < D; ++i) {
                    S dxh = n.grad[r * D + i] * gamma.value[i];
                    g[r * D + i] += (*istd_sp)[r] *
                                    (dxh - sum_dxh * invD - xh[r * D + i] * sum_dxh_xh * invD);
                }
            }
        }
        if (gamma.requires_grad) {
            auto& g = grad_of(gamma);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < D; ++i) g[i] += n.grad[r * D + i] * xh[r * D + i];
        }
        if (beta.requires_grad) {
            auto& g = grad_of(beta);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < D; ++i) g[i] += n.grad[r * D + i];
        }
    });
}

// GroupNorm over (B,C,H,W); statistics per (b, group)
template <typename S>
Var<S> group_norm(const Var<S>& x, int64_t groups, const Var<S>& gamma, const Var<S>& beta,
                  S eps = S(1e-5)) {
    check(x->value.rank() == 4, "group_norm: expects rank 4");
    int64_t B = x->value.dim(0), C = x->value.dim(1), HW = x->value.dim(2) * x->value.dim(3);
    check(C % groups == 0, "group_norm: channels not divisible by groups");
    check(gamma->value.numel() == C && beta->value.numel() == C, "group_norm: bad affine shape");
    int64_t Cg = C / groups, gsz = Cg * HW;
    Tensor<S> out(x->value.shape);
    Tensor<S> xhat(x->value.shape);
    std::vector<S> inv_std(B * groups);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < groups; ++g) {
            const S* p = x->value.data.data() + (b * C + g * Cg) * HW;
            S mean = S(0);
            for (int64_t i = 0; i < gsz; ++i) mean += p[i];
            mean /= static_cast<S>(gsz);
            S var = S(0);
            for (int64_t i = 0; i < gsz; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<S>(gsz);
            S istd = S(1) / std::sqrt(var + eps);
            inv_std[b * groups + g] = istd;
            int64_t base = (b * C + g * Cg) * HW;
            for (int64_t c = 0; c < Cg; ++c) {
                S ga = gamma->value[g * Cg + c], be = beta->value[g * Cg + c];
                for (int64_t i = 0; i < HW; ++i) {
                    S xh = (p[c * HW + i] - mean) * istd;
                    xhat[base + c * HW + i] = xh;
                    out[base + c * HW + i] = ga * xh + be;
                }
            }
        }
    auto xhat_sp = std::make_shared<Tensor<S>>(std::move(xhat));
    auto istd_sp = std::make_shared<std::vector<S>>(std::move(inv_std));
    return make_var<S>(std::move(out), {x, gamma, beta},
                       [xhat_sp, istd_sp, B, C, HW, groups, Cg, gsz](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& gamma = *n.parents[1];
        auto& beta = *n.parents[2];
        const auto& xh = *xhat_sp;
        if (x.requires_grad) {
            auto& g = grad_of(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gr = 0; gr < groups; ++gr) {
                    int64_t base = (b * C + gr * Cg) * HW;
                    S sum_dxh = S(0), sum_dxh_xh = S(0);
                    for (int64_t c = 0; c < Cg; ++c) {
                        S ga = gamma.value[gr * Cg + c];
                        for (int64_t i = 0; i < HW; ++i) {
                            S dxh = n.grad[base + c * HW + i] * ga;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[base + c * HW + i];
                        }
                    }
                    S invN = S(1) / static_cast<S>(gsz);
                    S istd = (*istd_sp)[b * groups + gr];
                    for (int64_t c = 0; c < Cg; ++c) {
                        S ga = gamma.value[gr * Cg + c];
                        for (int64_t i = 0; i < HW; ++i) {
                            S dxh = n.grad[base + c * HW + i] * ga;
                            g[base + c * HW + i] +=
                                istd * (dxh - sum_dxh * invN - xh[base + c * HW + i] * sum_dxh_xh * invN);
                        }
                    }
                }
        }
        if (gamma.requires_grad || beta.requires_grad) {
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    S sg = S(0), sb = S(0);
                    int64_t base = (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        sg += n.grad[base + i] * xh[base + i];
                        sb += n.grad[base + i];
                    }
                    if (gamma.requires_grad) grad_of(gamma)[c] += sg;
                    if (beta.requires_grad) grad_of(beta)[c] += sb;
                }
        }
    });
}

// ---------------------------------------------------------------------------
// convolution (im2col / col2im)

namespace detail {

template <typename S>
void im2col(const S* img, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, S* cols) {
    // cols: (C*kh*kw, Ho*Wo)
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
                S* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t iy = y * stride - pad + i;
                    for (int64_t x = 0; x < Wo; ++x) {
                        int64_t ix = x * stride - pad + j;
                        row[y * Wo + x] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                              ? img[(c * H + iy) * W + ix]
                                              : S(0);
                    }
                }
            }
}

template <typename S>
void col2im_add(const S* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, S* img) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
                const S* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t iy = y * stride - pad + i;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t x = 0; x < Wo; ++x) {
                        int64_t ix = x * stride - pad + j;
                        if (ix < 0 || ix >= W) continue;
                        img[(c * H + iy) * W + ix] += row[y * Wo + x];
                    }
                }
            }
}

}  // namespace detail

// x (B,Ci,H,W), w (Co,Ci,kh,kw), b (Co) optional
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride, int64_t pad) {
    check(x->value.rank() == 4 && w->value.rank() == 4, "conv2d: bad ranks");
    int64_t B = x->value.dim(0), Ci = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    int64_t Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    check(w->value.dim(1) == Ci, "conv2d: channel mismatch");
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: empty output");
    int64_t K = Ci * kh * kw, P = Ho * Wo;
    Tensor<S> out({B, Co, Ho, Wo});
    std::vector<S> cols(static_cast<size_t>(K * P));
    for (int64_t n_ = 0; n_ < B; ++n_) {
        detail::im2col(x->value.data.data() + n_ * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho,
                       Wo, cols.data());
        MapM<S>(out.data.data() + n_ * Co * P, Co, P).noalias() =
            CMapM<S>(w->value.data.data(), Co, K) * CMapM<S>(cols.data(), K, P);
        if (b) {
            for (int64_t c = 0; c < Co; ++c) {
                S bc = b->value[c];
                S* o = out.data.data() + (n_ * Co + c) * P;
                for (int64_t i = 0; i < P; ++i) o[i] += bc;
            }
        }
    }
    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    return make_var<S>(std::move(out), std::move(parents),
                       [B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K, P](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& w = *n.parents[1];
        std::vector<S> cols(static_cast<size_t>(K * P));
        std::vector<S> dcols(static_cast<size_t>(K * P));
        for (int64_t n_ = 0; n_ < B; ++n_) {
            CMapM<S> G(n.grad.data.data() + n_ * Co * P, Co, P);
            if (w.requires_grad) {
                detail::im2col(x.value.data.data() + n_ * Ci * H * W, Ci, H, W, kh, kw, stride,
                               pad, Ho, Wo, cols.data());
                MapM<S>(grad_of(w).data.data(), Co, K).noalias() +=
                    G * CMapM<S>(cols.data(), K, P).transpose();
            }
            if (x.requires_grad) {
                MapM<S>(dcols.data(), K, P).noalias() =
                    CMapM<S>(w.value.data.data(), Co, K).transpose() * G;
                detail::col2im_add(dcols.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                                   grad_of(x).data.data() + n_ * Ci * H * W);
            }
        }
        if (n.parents.size() == 3 && n.parents[2]->requires_grad) {
            auto& g = grad_of(*n.parents[2]);
            for (int64_t n_ = 0; n_ < B; ++n_)
                for (int64_t c = 0; c < Co; ++c) {
                    S s = S(0);
                    const S* gp = n.grad.data.data() + (n_ * Co + c) * P;
                    for (int64_t i = 0; i < P; ++i) s += gp[i];
                    g[c] += s;
                }
        }
    });
}

// x (B,Ci,h,w), w (Ci,Co,kh,kw); out (B,Co,(h-1)s-2p+kh, (w-1)s-2p+kw)
template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride,
                        int64_t pad) {
    check(x->value.rank() == 4 && w->value.rank() == 4, "conv_transpose2d: bad ranks");
    int64_t B = x->value.dim(0), Ci = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    int64_t Co = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
    check(w->value.dim(0) == Ci, "conv_transpose2d: channel mismatch");
    int64_t H = (h - 1) * stride - 2 * pad + kh;
    int64_t W = (wd - 1) * stride - 2 * pad + kw;
    check(H >= 1 && W >= 1, "conv_transpose2d: empty output");
    int64_t K = Co * kh * kw, P = h * wd;
    Tensor<S> out({B, Co, H, W});
    std::vector<S> cols(static_cast<size_t>(K * P));
    for (int64_t n_ = 0; n_ < B; ++n_) {
        MapM<S>(cols.data(), K, P).noalias() =
            CMapM<S>(w->value.data.data(), Ci, K).transpose() *
            CMapM<S>(x->value.data.data() + n_ * Ci * P, Ci, P);
        detail::col2im_add(cols.data(), Co, H, W, kh, kw, stride, pad, h, wd,
                           out.data.data() + n_ * Co * H * W);
        if (b) {
            for (int64_t c = 0; c < Co; ++c) {
                S bc = b->value[c];
                S* o = out.data.data() + (n_ * Co + c) * H * W;
                for (int64_t i = 0; i < H * W; ++i) o[i] += bc;
            }
        }
    }
    std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
    return make_var<S>(std::move(out), std::move(parents),
                       [B, Ci, h, wd, Co, kh, kw, stride, pad, H, W, K, P](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& w = *n.parents[1];
        std::vector<S> dcols(static_cast<size_t>(K * P));
        for (int64_t n_ = 0; n_ < B; ++n_) {
            detail::im2col(n.grad.data.data() + n_ * Co * H * W, Co, H, W, kh, kw, stride, pad, h,
                           wd, dcols.data());
            if (x.requires_grad)
                MapM<S>(grad_of(x).data.data() + n_ * Ci * P, Ci, P).noalias() +=
                    CMapM<S>(w.value.data.data(), Ci, K) * CMapM<S>(dcols.data(), K, P);
            if (w.requires_grad)
                MapM<S>(grad_of(w).data.data(), Ci, K).noalias() +=
                    CMapM<S>(x.value.data.data() + n_ * Ci * P, Ci, P) *
                    CMapM<S>(dcols.data(), K, P).transpose();
        }
        if (n.parents.size() == 3 && n.parents[2]->requires_grad) {
            auto& g = grad_of(*n.parents[2]);
            for (int64_t n_ = 0; n_ < B; ++n_)
                for (int64_t c = 0; c < Co; ++c) {
                    S s = S(0);
                    const S* gp = n.grad.data.data() + (n_ * Co + c) * H * W;
                    for (int64_t i = 0; i < H * W; ++i) s += gp[i];
                    g[c] += s;
                }
        }
    });
}

}  // namespace sft
