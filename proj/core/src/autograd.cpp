#include "dsam/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "dsam/error.hpp"

namespace dsam::ag {

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros_like(value);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (needs) {
        out.node_->requires_grad = true;
        out.node_->backward = std::move(backward);
        out.node_->inputs.reserve(inputs.size());
        for (auto& v : inputs) out.node_->inputs.push_back(v.node());
    }
    return out;
}

void accumulate(Node& input, const Tensor& g) {
    if (!input.requires_grad) return;
    Tensor& dst = input.ensure_grad();
    if (dst.numel() != g.numel())
        fail(Errc::BadShape, "gradient shape " + g.shape_str() + " does not match value " + dst.shape_str());
    double* d = dst.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += s[i];
}

void backward(const Var& root) {
    if (!root.defined()) fail(Errc::BadShape, "backward on undefined variable");
    if (root.value().numel() != 1) fail(Errc::BadShape, "backward root must be scalar, got " + root.value().shape_str());
    if (!root.requires_grad()) return;

    // Iterative post-order DFS yields a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

enum class Bcast { Same, ScalarA, ScalarB };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Bcast::Same;
    if (a.numel() == 1) return Bcast::ScalarA;
    if (b.numel() == 1) return Bcast::ScalarB;
    fail(Errc::BadShape, std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, Bcast k, F f) {
    const Tensor& shape_src = (k == Bcast::ScalarA) ? b : a;
    Tensor out = Tensor::zeros_like(shape_src);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double av = (k == Bcast::ScalarA) ? a[0] : a[i];
        const double bv = (k == Bcast::ScalarB) ? b[0] : b[i];
        out[i] = f(av, bv);
    }
    return out;
}

// Reduces a full-size gradient onto an operand that may have been broadcast.
void accumulate_operand(Node& input, const Tensor& full, bool was_scalar) {
    if (!input.requires_grad) return;
    if (was_scalar && full.numel() != 1) {
        Tensor g = Tensor::zeros_like(input.value);
        g[0] = full.sum();
        accumulate(input, g);
    } else {
        accumulate(input, full);
    }
}

template <typename F>
Var unary(const Var& x, F f, std::function<double(double, double)> dfdx) {
    Tensor out = Tensor::zeros_like(x.value());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x.value()[i]);
    return make_op(std::move(out), {x}, [dfdx](Node& n) {
        Node& in = *n.inputs[0];
        if (!in.requires_grad) return;
        Tensor g = Tensor::zeros_like(in.value);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * dfdx(in.value[i], n.value[i]);
        accumulate(in, g);
    });
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

}  // namespace

Var add(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind(a.value(), b.value(), "add");
    return make_op(binary_map(a.value(), b.value(), k, [](double x, double y) { return x + y; }), {a, b},
                   [k](Node& n) {
                       accumulate_operand(*n.inputs[0], n.grad, k == Bcast::ScalarA);
                       accumulate_operand(*n.inputs[1], n.grad, k == Bcast::ScalarB);
                   });
}

Var sub(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind(a.value(), b.value(), "sub");
    return make_op(binary_map(a.value(), b.value(), k, [](double x, double y) { return x - y; }), {a, b},
                   [k](Node& n) {
                       accumulate_operand(*n.inputs[0], n.grad, k == Bcast::ScalarA);
                       if (n.inputs[1]->requires_grad) {
                           Tensor neg = n.grad;
                           for (auto& v : neg.values()) v = -v;
                           accumulate_operand(*n.inputs[1], neg, k == Bcast::ScalarB);
                       }
                   });
}

Var mul(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind(a.value(), b.value(), "mul");
    return make_op(binary_map(a.value(), b.value(), k, [](double x, double y) { return x * y; }), {a, b},
                   [k](Node& n) {
                       const Tensor& av = n.inputs[0]->value;
                       const Tensor& bv = n.inputs[1]->value;
                       if (n.inputs[0]->requires_grad) {
                           Tensor g = Tensor::zeros_like(n.grad);
                           for (std::size_t i = 0; i < g.numel(); ++i)
                               g[i] = n.grad[i] * (k == Bcast::ScalarB ? bv[0] : bv[i]);
                           accumulate_operand(*n.inputs[0], g, k == Bcast::ScalarA);
                       }
                       if (n.inputs[1]->requires_grad) {
                           Tensor g = Tensor::zeros_like(n.grad);
                           for (std::size_t i = 0; i < g.numel(); ++i)
                               g[i] = n.grad[i] * (k == Bcast::ScalarA ? av[0] : av[i]);
                           accumulate_operand(*n.inputs[1], g, k == Bcast::ScalarB);
                       }
                   });
}

Var div(const Var& a, const Var& b) {
    const Bcast k = broadcast_kind(a.value(), b.value(), "div");
    return make_op(binary_map(a.value(), b.value(), k, [](double x, double y) { return x / y; }), {a, b},
                   [k](Node& n) {
                       const Tensor& bv = n.inputs[1]->value;
                       auto bval = [&](std::size_t i) { return k == Bcast::ScalarB ? bv[0] : bv[i]; };
                       if (n.inputs[0]->requires_grad) {
                           Tensor g = Tensor::zeros_like(n.grad);
                           for (std::size_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / bval(i);
                           accumulate_operand(*n.inputs[0], g, k == Bcast::ScalarA);
                       }
                       if (n.inputs[1]->requires_grad) {
                           Tensor g = Tensor::zeros_like(n.grad);
                           for (std::size_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i] * n.value[i] / bval(i);
                           accumulate_operand(*n.inputs[1], g, k == Bcast::ScalarB);
                       }
                   });
}

Var scale(const Var& x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var one_minus(const Var& x) {
    return unary(x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Var sigmoid(const Var& x) {
    return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
    return unary(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluK * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
        });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(const Var& x) {
    return make_op(Tensor::scalar(x.value().sum()), {x}, [](Node& n) {
        accumulate(*n.inputs[0], Tensor(n.inputs[0]->value.shape(), n.grad[0]));
    });
}

Var mean(const Var& x) {
    const double count = static_cast<double>(x.value().numel());
    return make_op(Tensor::scalar(x.value().sum() / count), {x}, [count](Node& n) {
        accumulate(*n.inputs[0], Tensor(n.inputs[0]->value.shape(), n.grad[0] / count));
    });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var concat(std::span<const Var> parts) {
    if (parts.empty()) fail(Errc::BadShape, "concat of nothing");
    Tensor::Shape shape = parts[0].shape();
    int lead = 0;
    for (const Var& p : parts) {
        const auto& s = p.shape();
        if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
            fail(Errc::BadShape, "concat: " + p.value().shape_str() + " incompatible with " + dsam::shape_str(shape));
        lead += s[0];
    }
    shape[0] = lead;
    Tensor out(shape);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().storage().begin(), p.value().storage().end(), out.storage().begin() + off);
        off += p.value().numel();
    }
    return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [offsets](Node& n) {
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            Node& in = *n.inputs[i];
            if (!in.requires_grad) continue;
            Tensor g = Tensor::zeros_like(in.value);
            std::copy_n(n.grad.storage().begin() + offsets[i], g.numel(), g.storage().begin());
            accumulate(in, g);
        }
    });
}

Var slice(const Var& x, int begin, int end) {
    const auto& s = x.shape();
    if (s.empty() || begin < 0 || end > s[0] || begin >= end)
        fail(Errc::BadShape, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                 x.value().shape_str());
    Tensor::Shape shape = s;
    shape[0] = end - begin;
    const std::size_t inner = x.value().numel() / static_cast<std::size_t>(s[0]);
    const std::size_t off = inner * static_cast<std::size_t>(begin);
    Tensor out(shape);
    std::copy_n(x.value().storage().begin() + off, out.numel(), out.storage().begin());
    return make_op(std::move(out), {x}, [off](Node& n) {
        Node& in = *n.inputs[0];
        Tensor g = Tensor::zeros_like(in.value);
        std::copy(n.grad.storage().begin(), n.grad.storage().end(), g.storage().begin() + off);
        accumulate(in, g);
    });
}

Var reshape(const Var& x, Tensor::Shape shape) {
    return make_op(x.value().reshaped(std::move(shape)), {x}, [](Node& n) { accumulate(*n.inputs[0], n.grad); });
}

namespace {
Tensor transpose_cs(const Tensor& x, int rows, int cols) {
    Tensor out({cols, rows});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
    return out;
}
}  // namespace

Var to_tokens(const Var& x) {
    if (x.value().rank() != 3) fail(Errc::BadShape, "to_tokens expects [C,H,W], got " + x.value().shape_str());
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    return make_op(transpose_cs(x.value(), c, hw), {x}, [c, hw](Node& n) {
        accumulate(*n.inputs[0], transpose_cs(n.grad, hw, c));
    });
}

Var from_tokens(const Var& t, int h, int w) {
    if (t.value().rank() != 2 || t.shape()[0] != h * w)
        fail(Errc::BadShape, "from_tokens: " + t.value().shape_str() + " is not [" + std::to_string(h * w) + ",C]");
    const int c = t.shape()[1], hw = h * w;
    Tensor out = transpose_cs(t.value(), hw, c).reshaped({c, h, w});
    return make_op(std::move(out), {t}, [c, hw](Node& n) { accumulate(*n.inputs[0], transpose_cs(n.grad, c, hw)); });
}

Var mean_rows(const Var& x) {
    if (x.value().rank() != 2) fail(Errc::BadShape, "mean_rows expects [N,D]");
    const int rows = x.shape()[0], d = x.shape()[1];
    Tensor out({1, d});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(c)] += x.value().at(r, c);
    for (auto& v : out.values()) v /= rows;
    return make_op(std::move(out), {x}, [rows, d](Node& n) {
        Tensor g({rows, d});
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < d; ++c) g.at(r, c) = n.grad[static_cast<std::size_t>(c)] / rows;
        accumulate(*n.inputs[0], g);
    });
}

Var broadcast_spatial(const Var& v, int h, int w) {
    const int d = static_cast<int>(v.value().numel());
    Tensor out({d, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < d; ++c)
        std::fill_n(out.storage().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, v.value()[static_cast<std::size_t>(c)]);
    return make_op(std::move(out), {v}, [d, plane](Node& n) {
        Tensor g = Tensor::zeros_like(n.inputs[0]->value);
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += n.grad[c * plane + i];
            g[static_cast<std::size_t>(c)] = acc;
        }
        accumulate(*n.inputs[0], g);
    });
}

// ---------------------------------------------------------------------------
// Image and attention kernels
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, kernels::Conv2dGeometry geo) {
    const Tensor empty;
    Tensor out = kernels::conv2d(x.value(), weight.value(), bias.defined() ? bias.value() : empty, geo);
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op(std::move(out), std::move(inputs), [geo](Node& n) {
        Node& xn = *n.inputs[0];
        Node& wn = *n.inputs[1];
        Node* bn = n.inputs.size() > 2 ? n.inputs[2].get() : nullptr;
        Tensor* gx = xn.requires_grad ? &xn.ensure_grad() : nullptr;
        Tensor* gw = wn.requires_grad ? &wn.ensure_grad() : nullptr;
        Tensor* gb = (bn && bn->requires_grad) ? &bn->ensure_grad() : nullptr;
        kernels::conv2d_backward(xn.value, wn.value, n.grad, geo, gx, gw, gb);
    });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    if (x.value().rank() == 3 && x.shape()[1] == out_h && x.shape()[2] == out_w) return x;
    Tensor out = kernels::resize_bilinear(x.value(), out_h, out_w);
    return make_op(std::move(out), {x}, [](Node& n) {
        const auto& s = n.inputs[0]->value.shape();
        accumulate(*n.inputs[0], kernels::resize_bilinear_adjoint(n.grad, s[1], s[2]));
    });
}

Var haar_details(const Var& x) {
    kernels::HaarBands b = kernels::haar_analysis(x.value());
    const int c = x.shape()[0], h2 = b.lh.dim(1), w2 = b.lh.dim(2);
    Tensor out({3 * c, h2, w2});
    const std::size_t band = b.lh.numel();
    std::copy(b.lh.storage().begin(), b.lh.storage().end(), out.storage().begin());
    std::copy(b.hl.storage().begin(), b.hl.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(band));
    std::copy(b.hh.storage().begin(), b.hh.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(2 * band));
    return make_op(std::move(out), {x}, [c, h2, w2, band](Node& n) {
        // Orthonormal transform: the adjoint is synthesis with a zero LL band.
        kernels::HaarBands g{Tensor({c, h2, w2}), Tensor({c, h2, w2}), Tensor({c, h2, w2}), Tensor({c, h2, w2})};
        std::copy_n(n.grad.storage().begin(), band, g.lh.storage().begin());
        std::copy_n(n.grad.storage().begin() + static_cast<std::ptrdiff_t>(band), band, g.hl.storage().begin());
        std::copy_n(n.grad.storage().begin() + static_cast<std::ptrdiff_t>(2 * band), band, g.hh.storage().begin());
        accumulate(*n.inputs[0], kernels::haar_synthesis(g));
    });
}

Var box_mean(const Var& x, int radius) {
    return make_op(kernels::box_mean(x.value(), radius), {x}, [radius](Node& n) {
        accumulate(*n.inputs[0], kernels::box_mean_adjoint(n.grad, radius));
    });
}

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
    return make_op(kernels::adaptive_avg_pool(x.value(), out_h, out_w), {x}, [](Node& n) {
        const auto& s = n.inputs[0]->value.shape();
        accumulate(*n.inputs[0], kernels::adaptive_avg_pool_adjoint(n.grad, s[1], s[2]));
    });
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
    return make_op(kernels::matmul(a.value(), b.value(), ta, tb), {a, b}, [ta, tb](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G
        if (n.inputs[0]->requires_grad) {
            Tensor g = ta ? kernels::matmul(bv, n.grad, tb, true) : kernels::matmul(n.grad, bv, false, !tb);
            accumulate(*n.inputs[0], g);
        }
        if (n.inputs[1]->requires_grad) {
            Tensor g = tb ? kernels::matmul(n.grad, av, true, ta) : kernels::matmul(av, n.grad, !ta, false);
            accumulate(*n.inputs[1], g);
        }
    });
}

Var softmax_rows(const Var& x) {
    if (x.value().rank() != 2) fail(Errc::BadShape, "softmax_rows expects [N,M]");
    const int rows = x.shape()[0], cols = x.shape()[1];
    Tensor out = Tensor::zeros_like(x.value());
    for (int r = 0; r < rows; ++r) {
        double mx = x.value().at(r, 0);
        for (int c = 1; c < cols; ++c) mx = std::max(mx, x.value().at(r, c));
        double z = 0.0;
        for (int c = 0; c < cols; ++c) z += (out.at(r, c) = std::exp(x.value().at(r, c) - mx));
        for (int c = 0; c < cols; ++c) out.at(r, c) /= z;
    }
    return make_op(std::move(out), {x}, [rows, cols](Node& n) {
        Tensor g({rows, cols});
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += n.grad.at(r, c) * n.value.at(r, c);
            for (int c = 0; c < cols; ++c) g.at(r, c) = n.value.at(r, c) * (n.grad.at(r, c) - dot);
        }
        accumulate(*n.inputs[0], g);
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    Tensor out = kernels::matmul(x.value(), weight.value());
    const int rows = out.dim(0), cols = out.dim(1);
    if (bias.defined()) {
        if (static_cast<int>(bias.value().numel()) != cols) fail(Errc::BadShape, "linear bias " + bias.value().shape_str());
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out.at(r, c) += bias.value()[static_cast<std::size_t>(c)];
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op(std::move(out), std::move(inputs), [rows, cols](Node& n) {
        Node& xn = *n.inputs[0];
        Node& wn = *n.inputs[1];
        if (xn.requires_grad) accumulate(xn, kernels::matmul(n.grad, wn.value, false, true));
        if (wn.requires_grad) accumulate(wn, kernels::matmul(xn.value, n.grad, true, false));
        if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
            Tensor gb = Tensor::zeros_like(n.inputs[2]->value);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) gb[static_cast<std::size_t>(c)] += n.grad.at(r, c);
            accumulate(*n.inputs[2], gb);
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Var bce_with_logits_mean(const Var& logits, const Tensor& target) {
    if (!logits.value().same_shape(target))
        fail(Errc::BadShape, "bce: " + logits.value().shape_str() + " vs " + target.shape_str());
    const double count = static_cast<double>(target.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double x = logits.value()[i];
        acc += std::max(x, 0.0) - x * target[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return make_op(Tensor::scalar(acc / count), {logits}, [target, count](Node& n) {
        Node& in = *n.inputs[0];
        Tensor g = Tensor::zeros_like(in.value);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = n.grad[0] * (stable_sigmoid(in.value[i]) - target[i]) / count;
        accumulate(in, g);
    });
}

}  // namespace dsam::ag
