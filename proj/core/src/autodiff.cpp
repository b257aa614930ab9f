#include "tempcomm/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

CMatMap as_mat(const Tensor& t) {
    return CMatMap(t.data(), t.dim(0), t.dim(1));
}
MatMap as_mat(Tensor& t) {
    return MatMap(t.data(), t.dim(0), t.dim(1));
}

bool any_requires_grad(const std::vector<Var>& vars) {
    for (const auto& v : vars)
        if (v.defined() && v.requires_grad()) return true;
    return false;
}

Var make_node(Tensor value, std::vector<Var> parent_vars, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled && any_requires_grad(parent_vars)) {
        n->requires_grad = true;
        n->parents.reserve(parent_vars.size());
        for (auto& p : parent_vars) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                         b.value().shape_str());
}

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var Var::param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(n);
}

Var Var::constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return Var(n);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
    if (!root.defined() || root.value().numel() != 1)
        throw std::invalid_argument("backward: root must be a defined scalar");
    if (!root.requires_grad()) return;

    // Post-order DFS, then run backprop in reverse.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({root.node().get(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_ref()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.numel() > 0) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            Node* p = self.parents[k].get();
            if (!p->requires_grad) continue;
            Tensor& g = p->grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            const Tensor& bv = pb->value;
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->grad_ref();
            const Tensor& av = pa->value;
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_node(std::move(out), {a}, [s](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
    });
}

Var add_bias(const Var& x, const Var& b) {
    const int d = x.value().shape().back();
    if (b.value().ndim() != 1 || b.value().dim(0) != d)
        throw ShapeError("add_bias: bias width mismatch");
    Tensor out = x.value();
    const double* bd = b.value().data();
    const std::size_t rows = out.numel() / static_cast<std::size_t>(d);
    for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out[r * d + j] += bd[j];
    return make_node(std::move(out), {x, b}, [d](Node& self) {
        Node* px = self.parents[0].get();
        Node* pb = self.parents[1].get();
        const std::size_t rows = self.grad.numel() / static_cast<std::size_t>(d);
        if (px->requires_grad) {
            Tensor& g = px->grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->grad_ref();
            for (std::size_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
    });
}

Var mul_rowvec(const Var& x, const Var& v) {
    const int d = x.value().shape().back();
    if (v.value().ndim() != 1 || v.value().dim(0) != d)
        throw ShapeError("mul_rowvec: width mismatch");
    Tensor out = x.value();
    const double* vd = v.value().data();
    const std::size_t rows = out.numel() / static_cast<std::size_t>(d);
    for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out[r * d + j] *= vd[j];
    return make_node(std::move(out), {x, v}, [d](Node& self) {
        Node* px = self.parents[0].get();
        Node* pv = self.parents[1].get();
        const std::size_t rows = self.grad.numel() / static_cast<std::size_t>(d);
        if (px->requires_grad) {
            Tensor& g = px->grad_ref();
            const double* vd = pv->value.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j] * vd[j];
        }
        if (pv->requires_grad) {
            Tensor& g = pv->grad_ref();
            const double* xd = px->value.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xd[r * d + j];
        }
    });
}

Var scale_by(const Var& x, const Var& s) {
    if (s.value().numel() != 1) throw ShapeError("scale_by: scale must be scalar");
    Tensor out = x.value();
    const double sv = s.value()[0];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    return make_node(std::move(out), {x, s}, [](Node& self) {
        Node* px = self.parents[0].get();
        Node* ps = self.parents[1].get();
        if (px->requires_grad) {
            Tensor& g = px->grad_ref();
            const double sv = ps->value[0];
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sv * self.grad[i];
        }
        if (ps->requires_grad) {
            double acc = 0.0;
            const Tensor& xv = px->value;
            for (std::size_t i = 0; i < xv.numel(); ++i) acc += self.grad[i] * xv[i];
            ps->grad_ref()[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2) throw ShapeError("matmul: rank-2 operands required");
    const int m = trans_a ? av.dim(1) : av.dim(0);
    const int ka = trans_a ? av.dim(0) : av.dim(1);
    const int kb = trans_b ? bv.dim(1) : bv.dim(0);
    const int n = trans_b ? bv.dim(0) : bv.dim(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimension mismatch " + av.shape_str() + " x " + bv.shape_str());

    Tensor out({m, n});
    {
        auto A = as_mat(av);
        auto B = as_mat(bv);
        auto C = as_mat(out);
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    return make_node(std::move(out), {a, b}, [trans_a, trans_b](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        auto G = as_mat(self.grad);
        auto A = as_mat(pa->value);
        auto B = as_mat(pb->value);
        if (pa->requires_grad) {
            auto GA = as_mat(pa->grad_ref());
            if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
            else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
            else if (!trans_a && trans_b) GA.noalias() += G * B;
            else GA.noalias() += B.transpose() * G.transpose();
        }
        if (pb->requires_grad) {
            auto GB = as_mat(pb->grad_ref());
            if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
            else if (trans_a && !trans_b) GB.noalias() += A * G;
            else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
            else GB.noalias() += G.transpose() * A.transpose();
        }
    });
}

Var const_matmul(const Tensor& a, const Var& x) {
    if (a.ndim() != 2 || x.value().ndim() != 2 || a.dim(1) != x.value().dim(0))
        throw ShapeError("const_matmul: shape mismatch");
    Tensor out({a.dim(0), x.value().dim(1)});
    as_mat(out).noalias() = as_mat(a) * as_mat(x.value());
    Tensor a_copy = a;
    return make_node(std::move(out), {x}, [a_copy](Node& self) {
        auto GX = as_mat(self.parents[0]->grad_ref());
        GX.noalias() += as_mat(a_copy).transpose() * as_mat(self.grad);
    });
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

namespace {
template <typename F, typename DF>
Var elementwise(const Var& x, F f, DF df) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
    return make_node(std::move(out), {x}, [df](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const Tensor& xv = self.parents[0]->value;
        const Tensor& yv = self.value;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(xv[i], yv[i]);
    });
}
}  // namespace

Var sigmoid(const Var& x) {
    return elementwise(x, [](double v) { return sigmoid_s(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

Var tanh_act(const Var& x) {
    return elementwise(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& x) {
    return elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
    // Exact form: 0.5 x (1 + erf(x / sqrt(2))).
    return elementwise(x,
                       [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
                       [](double v, double) {
                           const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                           const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                           return cdf + v * pdf;
                       });
}

Var softmax_vec(const Var& logits) {
    if (logits.value().ndim() != 1) throw ShapeError("softmax_vec: rank-1 input required");
    Tensor out = logits.value();
    double mx = out[0];
    for (std::size_t i = 1; i < out.numel(); ++i) mx = std::max(mx, out[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = std::exp(out[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= sum;
    return make_node(std::move(out), {logits}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const Tensor& y = self.value;
        double dot = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) dot += y[i] * self.grad[i];
        for (std::size_t i = 0; i < y.numel(); ++i) g[i] += y[i] * (self.grad[i] - dot);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int d = x.value().shape().back();
    if (gamma.value().dim(0) != d || beta.value().dim(0) != d)
        throw ShapeError("layer_norm: scale/shift width mismatch");
    const std::size_t rows = x.value().numel() / static_cast<std::size_t>(d);
    Tensor out(x.value().shape());
    Tensor xhat(x.value().shape());
    std::vector<double> inv_std(rows);
    const double* xd = x.value().data();
    const double* gd = gamma.value().data();
    const double* bd = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int j = 0; j < d; ++j) {
            const double xh = (xr[j] - mean) * is;
            xhat[r * d + j] = xh;
            out[r * d + j] = gd[j] * xh + bd[j];
        }
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                         Node* px = self.parents[0].get();
                         Node* pg = self.parents[1].get();
                         Node* pb = self.parents[2].get();
                         const std::size_t rows = self.grad.numel() / static_cast<std::size_t>(d);
                         const double* gd = pg->value.data();
                         for (std::size_t r = 0; r < rows; ++r) {
                             const double* go = self.grad.data() + r * d;
                             const double* xh = xhat.data() + r * d;
                             if (pg->requires_grad) {
                                 Tensor& gg = pg->grad_ref();
                                 for (int j = 0; j < d; ++j) gg[j] += go[j] * xh[j];
                             }
                             if (pb->requires_grad) {
                                 Tensor& gb = pb->grad_ref();
                                 for (int j = 0; j < d; ++j) gb[j] += go[j];
                             }
                             if (px->requires_grad) {
                                 // d xhat = gamma * dy; dx via standard LN backward.
                                 double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                                 for (int j = 0; j < d; ++j) {
                                     const double dxh = go[j] * gd[j];
                                     sum_dxh += dxh;
                                     sum_dxh_xh += dxh * xh[j];
                                 }
                                 Tensor& gx = px->grad_ref();
                                 const double is = inv_std[r];
                                 for (int j = 0; j < d; ++j) {
                                     const double dxh = go[j] * gd[j];
                                     gx[r * d + j] +=
                                         is * (dxh - sum_dxh / d - xh[j] * sum_dxh_xh / d);
                                 }
                             }
                         }
                     });
}

Var dropout(const Var& x, double rate, Rng& rng, bool train_mode) {
    if (!train_mode || rate <= 0.0) return x;
    const double keep = 1.0 - rate;
    Tensor out = x.value();
    auto mask = std::make_shared<std::vector<double>>(out.numel());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        (*mask)[i] = m;
        out[i] *= m;
    }
    return make_node(std::move(out), {x}, [mask](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Var conv1d(const Var& x, const Var& w, const Var& b, int stride) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 3) throw ShapeError("conv1d: rank-3 input/kernel required");
    const int n = xv.dim(0), cin = xv.dim(1), len = xv.dim(2);
    const int cout = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != cin) throw ShapeError("conv1d: channel mismatch");
    if (len < k)
        throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                         std::to_string(k));
    if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
    const int lout = (len - k) / stride + 1;

    Tensor out({n, cout, lout});
    const double* bd = b.value().data();
    for (int s = 0; s < n; ++s)
        for (int co = 0; co < cout; ++co)
            for (int p = 0; p < lout; ++p) {
                double acc = bd[co];
                const int base = p * stride;
                for (int ci = 0; ci < cin; ++ci)
                    for (int u = 0; u < k; ++u) acc += xv.at(s, ci, base + u) * wv.at(co, ci, u);
                out.at(s, co, p) = acc;
            }
    return make_node(std::move(out), {x, w, b}, [stride, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = self.parents[2].get();
        const Tensor& xv = px->value;
        const Tensor& wv = pw->value;
        const int n = xv.dim(0), cin = xv.dim(1);
        const int cout = wv.dim(0);
        const int lout = self.value.dim(2);
        for (int s = 0; s < n; ++s)
            for (int co = 0; co < cout; ++co)
                for (int p = 0; p < lout; ++p) {
                    const double g = self.grad.at(s, co, p);
                    if (g == 0.0) continue;
                    const int base = p * stride;
                    if (pb->requires_grad) pb->grad_ref()[co] += g;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int u = 0; u < k; ++u) {
                            if (px->requires_grad)
                                px->grad_ref().at(s, ci, base + u) += g * wv.at(co, ci, u);
                            if (pw->requires_grad)
                                pw->grad_ref().at(co, ci, u) += g * xv.at(s, ci, base + u);
                        }
                }
    });
}

Var conv1d_transpose(const Var& x, const Var& w, const Var& b, int stride, int output_padding) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 3)
        throw ShapeError("conv1d_transpose: rank-3 input/kernel required");
    const int n = xv.dim(0), cin = xv.dim(1), len = xv.dim(2);
    const int cout = wv.dim(1), k = wv.dim(2);
    if (wv.dim(0) != cin) throw ShapeError("conv1d_transpose: channel mismatch");
    if (stride < 1) throw ShapeError("conv1d_transpose: stride must be >= 1");
    if (output_padding < 0 || output_padding >= std::max(stride, 1))
        throw ShapeError("conv1d_transpose: output_padding must lie in [0, stride)");
    const int lout = (len - 1) * stride + k + output_padding;

    Tensor out({n, cout, lout});
    const double* bd = b.value().data();
    for (int s = 0; s < n; ++s)
        for (int co = 0; co < cout; ++co)
            for (int p = 0; p < lout; ++p) out.at(s, co, p) = bd[co];
    for (int s = 0; s < n; ++s)
        for (int ci = 0; ci < cin; ++ci)
            for (int p = 0; p < len; ++p) {
                const double xval = xv.at(s, ci, p);
                if (xval == 0.0) continue;
                for (int co = 0; co < cout; ++co)
                    for (int u = 0; u < k; ++u)
                        out.at(s, co, p * stride + u) += xval * wv.at(ci, co, u);
            }
    return make_node(std::move(out), {x, w, b}, [stride, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = self.parents[2].get();
        const Tensor& xv = px->value;
        const Tensor& wv = pw->value;
        const int n = xv.dim(0), cin = xv.dim(1), len = xv.dim(2);
        const int cout = wv.dim(1);
        if (pb->requires_grad) {
            Tensor& gb = pb->grad_ref();
            const int lout = self.value.dim(2);
            for (int s = 0; s < n; ++s)
                for (int co = 0; co < cout; ++co)
                    for (int p = 0; p < lout; ++p) gb[co] += self.grad.at(s, co, p);
        }
        for (int s = 0; s < n; ++s)
            for (int ci = 0; ci < cin; ++ci)
                for (int p = 0; p < len; ++p) {
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co)
                        for (int u = 0; u < k; ++u) {
                            const double g = self.grad.at(s, co, p * stride + u);
                            acc += g * wv.at(ci, co, u);
                            if (pw->requires_grad)
                                pw->grad_ref().at(ci, co, u) += g * xv.at(s, ci, p);
                        }
                    if (px->requires_grad) px->grad_ref().at(s, ci, p) += acc;
                }
    });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out(shape, x.value().vec());
    return make_node(std::move(out), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var slice_cols(const Var& x, int c0, int len) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("slice_cols: rank-2 input required");
    const int rows = xv.dim(0), cols = xv.dim(1);
    if (c0 < 0 || c0 + len > cols) throw ShapeError("slice_cols: out of range");
    Tensor out({rows, len});
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) out.at(r, j) = xv.at(r, c0 + j);
    return make_node(std::move(out), {x}, [c0, len](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const int rows = g.dim(0);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < len; ++j) g.at(r, c0 + j) += self.grad.at(r, j);
    });
}

Var slice_time(const Var& x, int t) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw ShapeError("slice_time: rank-3 input required");
    const int n = xv.dim(0), d = xv.dim(1), len = xv.dim(2);
    if (t < 0 || t >= len) throw ShapeError("slice_time: index out of range");
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = xv.at(i, j, t);
    return make_node(std::move(out), {x}, [t](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const int n = g.dim(0), d = g.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) g.at(i, j, t) += self.grad.at(i, j);
    });
}

Var stack_middle(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("stack_middle: empty input");
    const int n = xs[0].value().dim(0), d = xs[0].value().dim(1);
    const int t_len = static_cast<int>(xs.size());
    Tensor out({n, t_len, d});
    for (int t = 0; t < t_len; ++t) {
        const Tensor& v = xs[t].value();
        if (v.dim(0) != n || v.dim(1) != d) throw ShapeError("stack_middle: inconsistent shapes");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.at(i, t, j) = v.at(i, j);
    }
    return make_node(std::move(out), xs, [n, d, t_len](Node& self) {
        for (int t = 0; t < t_len; ++t) {
            Node* p = self.parents[t].get();
            if (!p->requires_grad) continue;
            Tensor& g = p->grad_ref();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) g.at(i, j) += self.grad.at(i, t, j);
        }
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input");
    const int rows = xs[0].value().dim(0);
    int total = 0;
    for (const auto& v : xs) {
        if (v.value().ndim() != 2 || v.value().dim(0) != rows)
            throw ShapeError("concat_cols: inconsistent shapes");
        total += v.value().dim(1);
    }
    Tensor out({rows, total});
    int off = 0;
    for (const auto& v : xs) {
        const int c = v.value().dim(1);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) out.at(r, off + j) = v.value().at(r, j);
        off += c;
    }
    return make_node(std::move(out), xs, [rows](Node& self) {
        int off = 0;
        for (auto& pp : self.parents) {
            Node* p = pp.get();
            const int c = p->value.dim(1);
            if (p->requires_grad) {
                Tensor& g = p->grad_ref();
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) g.at(r, j) += self.grad.at(r, off + j);
            }
            off += c;
        }
    });
}

Var row(const Var& table, int r) {
    const Tensor& tv = table.value();
    if (tv.ndim() != 2) throw ShapeError("row: rank-2 table required");
    if (r < 0 || r >= tv.dim(0)) throw ShapeError("row: index out of range");
    const int c = tv.dim(1);
    Tensor out({c});
    for (int j = 0; j < c; ++j) out[j] = tv.at(r, j);
    return make_node(std::move(out), {table}, [r, c](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (int j = 0; j < c; ++j) g.at(r, j) += self.grad[j];
    });
}

// ---------------------------------------------------------------------------
// Reductions / pooling
// ---------------------------------------------------------------------------

Var mean_all(const Var& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
    const double inv = 1.0 / static_cast<double>(x.value().numel());
    return make_node(Tensor::scalar(acc * inv), {x}, [inv](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const double go = self.grad[0] * inv;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var sum_all(const Var& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
    return make_node(Tensor::scalar(acc), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const double go = self.grad[0];
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var avgpool_time(const Var& h) {
    const Tensor& hv = h.value();
    if (hv.ndim() != 3) throw ShapeError("avgpool_time: rank-3 input required");
    const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
    Tensor out({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int t = 0; t < len; ++t) acc += hv.at(i, j, t);
            out.at(i, j) = acc / len;
        }
    return make_node(std::move(out), {h}, [len](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const int n = g.dim(0), c = g.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const double go = self.grad.at(i, j) / len;
                for (int t = 0; t < len; ++t) g.at(i, j, t) += go;
            }
    });
}

Var maxpool_time(const Var& h) {
    const Tensor& hv = h.value();
    if (hv.ndim() != 3) throw ShapeError("maxpool_time: rank-3 input required");
    const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
    Tensor out({n, c});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            double best = hv.at(i, j, 0);
            int bt = 0;
            for (int t = 1; t < len; ++t)
                if (hv.at(i, j, t) > best) {
                    best = hv.at(i, j, t);
                    bt = t;
                }
            out.at(i, j) = best;
            (*argmax)[static_cast<std::size_t>(i) * c + j] = bt;
        }
    return make_node(std::move(out), {h}, [argmax](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const int n = g.dim(0), c = g.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                g.at(i, j, (*argmax)[static_cast<std::size_t>(i) * c + j]) += self.grad.at(i, j);
    });
}

Var mean_channels(const Var& h) {
    const Tensor& hv = h.value();
    if (hv.ndim() != 3) throw ShapeError("mean_channels: rank-3 input required");
    const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
    Tensor out({n, len});
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < len; ++t) {
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += hv.at(i, j, t);
            out.at(i, t) = acc / c;
        }
    return make_node(std::move(out), {h}, [c](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const int n = g.dim(0), len = g.dim(2);
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < len; ++t) {
                const double go = self.grad.at(i, t) / c;
                for (int j = 0; j < c; ++j) g.at(i, j, t) += go;
            }
    });
}

Var mul_bcast_channel(const Var& h, const Var& g) {
    const Tensor& hv = h.value();
    const Tensor& gv = g.value();
    if (hv.ndim() != 3 || gv.ndim() != 2 || gv.dim(0) != hv.dim(0) || gv.dim(1) != hv.dim(1))
        throw ShapeError("mul_bcast_channel: shape mismatch");
    const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
    Tensor out = hv;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const double m = gv.at(i, j);
            for (int t = 0; t < len; ++t) out.at(i, j, t) *= m;
        }
    return make_node(std::move(out), {h, g}, [](Node& self) {
        Node* ph = self.parents[0].get();
        Node* pg = self.parents[1].get();
        const Tensor& hv = ph->value;
        const Tensor& gv = pg->value;
        const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                const double m = gv.at(i, j);
                for (int t = 0; t < len; ++t) {
                    const double go = self.grad.at(i, j, t);
                    if (ph->requires_grad) ph->grad_ref().at(i, j, t) += go * m;
                    acc += go * hv.at(i, j, t);
                }
                if (pg->requires_grad) pg->grad_ref().at(i, j) += acc;
            }
    });
}

Var mul_bcast_time(const Var& h, const Var& g) {
    const Tensor& hv = h.value();
    const Tensor& gv = g.value();
    if (hv.ndim() != 3 || gv.ndim() != 2 || gv.dim(0) != hv.dim(0) || gv.dim(1) != hv.dim(2))
        throw ShapeError("mul_bcast_time: shape mismatch");
    const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
    Tensor out = hv;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int t = 0; t < len; ++t) out.at(i, j, t) *= gv.at(i, t);
    return make_node(std::move(out), {h, g}, [](Node& self) {
        Node* ph = self.parents[0].get();
        Node* pg = self.parents[1].get();
        const Tensor& hv = ph->value;
        const Tensor& gv = pg->value;
        const int n = hv.dim(0), c = hv.dim(1), len = hv.dim(2);
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < len; ++t) {
                double acc = 0.0;
                const double m = gv.at(i, t);
                for (int j = 0; j < c; ++j) {
                    const double go = self.grad.at(i, j, t);
                    if (ph->requires_grad) ph->grad_ref().at(i, j, t) += go * m;
                    acc += go * hv.at(i, j, t);
                }
                if (pg->requires_grad) pg->grad_ref().at(i, t) += acc;
            }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Var mse_loss(const Var& x, const Tensor& target) {
    if (!x.value().same_shape(target)) throw ShapeError("mse_loss: target shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double d = x.value()[i] - target[i];
        acc += d * d;
    }
    const double inv = 1.0 / static_cast<double>(target.numel());
    Tensor tgt = target;
    return make_node(Tensor::scalar(acc * inv), {x}, [inv, tgt = std::move(tgt)](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const Tensor& xv = self.parents[0]->value;
        const double go = self.grad[0] * 2.0 * inv;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go * (xv[i] - tgt[i]);
    });
}

namespace {
// log(1 + exp(x)) without overflow.
double softplus_s(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
}  // namespace

Var graph_bce_loss(const Var& z, const std::vector<std::pair<int, int>>& pos,
                   const std::vector<std::pair<int, int>>& neg) {
    const Tensor& zv = z.value();
    if (zv.ndim() != 2) throw ShapeError("graph_bce_loss: rank-2 embedding required");
    const int d = zv.dim(1);
    const std::size_t m = pos.size() + neg.size();
    if (m == 0) throw DataError("graph_bce_loss: graph has no edges");
    double acc = 0.0;
    for (const auto& [i, j] : pos) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += zv.at(i, c) * zv.at(j, c);
        acc += softplus_s(-dot);  // -log sigmoid(dot)
    }
    for (const auto& [i, j] : neg) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += zv.at(i, c) * zv.at(j, c);
        acc += softplus_s(dot);  // -log(1 - sigmoid(dot))
    }
    const double inv = 1.0 / static_cast<double>(m);
    auto pos_copy = std::make_shared<std::vector<std::pair<int, int>>>(pos);
    auto neg_copy = std::make_shared<std::vector<std::pair<int, int>>>(neg);
    return make_node(Tensor::scalar(acc * inv), {z}, [inv, pos_copy, neg_copy, d](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const Tensor& zv = self.parents[0]->value;
        const double go = self.grad[0] * inv;
        auto accumulate = [&](const std::pair<int, int>& e, bool positive) {
            const auto [i, j] = e;
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += zv.at(i, c) * zv.at(j, c);
            // d/ddot of softplus(-x) is sigmoid(x)-1; of softplus(x) is sigmoid(x).
            const double gd = go * (positive ? sigmoid_s(dot) - 1.0 : sigmoid_s(dot));
            for (int c = 0; c < d; ++c) {
                g.at(i, c) += gd * zv.at(j, c);
                g.at(j, c) += gd * zv.at(i, c);
            }
        };
        for (const auto& e : *pos_copy) accumulate(e, true);
        for (const auto& e : *neg_copy) accumulate(e, false);
    });
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

Var lstm_cell_c(const Var& gates, const Var& c_prev) {
    const Tensor& gv = gates.value();
    const Tensor& cv = c_prev.value();
    const int n = gv.dim(0), h = cv.dim(1);
    if (gv.dim(1) != 4 * h) throw ShapeError("lstm_cell_c: gates width must be 4h");
    Tensor out({n, h});
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < h; ++j) {
            const double gi = sigmoid_s(gv.at(r, j));
            const double gf = sigmoid_s(gv.at(r, h + j));
            const double gg = std::tanh(gv.at(r, 2 * h + j));
            out.at(r, j) = gi * gg + gf * cv.at(r, j);
        }
    return make_node(std::move(out), {gates, c_prev}, [h](Node& self) {
        Node* pg = self.parents[0].get();
        Node* pc = self.parents[1].get();
        const Tensor& gv = pg->value;
        const Tensor& cv = pc->value;
        const int n = gv.dim(0);
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < h; ++j) {
                const double dc = self.grad.at(r, j);
                if (dc == 0.0) continue;
                const double gi = sigmoid_s(gv.at(r, j));
                const double gf = sigmoid_s(gv.at(r, h + j));
                const double gg = std::tanh(gv.at(r, 2 * h + j));
                if (pg->requires_grad) {
                    Tensor& gr = pg->grad_ref();
                    gr.at(r, j) += dc * gg * gi * (1.0 - gi);
                    gr.at(r, h + j) += dc * cv.at(r, j) * gf * (1.0 - gf);
                    gr.at(r, 2 * h + j) += dc * gi * (1.0 - gg * gg);
                }
                if (pc->requires_grad) pc->grad_ref().at(r, j) += dc * gf;
            }
    });
}

Var lstm_cell_h(const Var& gates, const Var& c_t) {
    const Tensor& gv = gates.value();
    const Tensor& cv = c_t.value();
    const int n = gv.dim(0), h = cv.dim(1);
    if (gv.dim(1) != 4 * h) throw ShapeError("lstm_cell_h: gates width must be 4h");
    Tensor out({n, h});
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < h; ++j) {
            const double go = sigmoid_s(gv.at(r, 3 * h + j));
            out.at(r, j) = go * std::tanh(cv.at(r, j));
        }
    return make_node(std::move(out), {gates, c_t}, [h](Node& self) {
        Node* pg = self.parents[0].get();
        Node* pc = self.parents[1].get();
        const Tensor& gv = pg->value;
        const Tensor& cv = pc->value;
        const int n = gv.dim(0);
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < h; ++j) {
                const double dh = self.grad.at(r, j);
                if (dh == 0.0) continue;
                const double go = sigmoid_s(gv.at(r, 3 * h + j));
                const double tc = std::tanh(cv.at(r, j));
                if (pg->requires_grad) pg->grad_ref().at(r, 3 * h + j) += dh * tc * go * (1.0 - go);
                if (pc->requires_grad) pc->grad_ref().at(r, j) += dh * go * (1.0 - tc * tc);
            }
    });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

Var masked_multihead_attention(const Var& q, const Var& k, const Var& v,
                               const NeighborLists& nb, const MaskedAttnOpts& opts) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    const int n = qv.dim(0), d = qv.dim(1);
    if (kv.dim(0) != n || vv.dim(0) != n || kv.dim(1) != d || vv.dim(1) != d)
        throw ShapeError("masked attention: Q/K/V shape mismatch");
    const int nh = opts.n_heads;
    if (nh < 1 || d % nh != 0) throw ShapeError("masked attention: d must divide by head count");
    const int dh = d / nh;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool has_edges = opts.edge_vals != nullptr && opts.w_edge_k.defined();

    const std::size_t slots = nb.targets.size();
    // Per-slot softmax weights for every head, saved for the backward pass.
    auto alpha = std::make_shared<std::vector<double>>(slots * nh);
    Tensor out({n, d});

    const double* wek = has_edges ? opts.w_edge_k.value().data() : nullptr;
    const double* wev = has_edges ? opts.w_edge_v.value().data() : nullptr;

    std::vector<double> logits;
    for (int i = 0; i < n; ++i) {
        const int deg = nb.degree(i);
        if (deg == 0)
            throw DataError("masked attention: empty neighborhood for node " + std::to_string(i));
        for (int head = 0; head < nh; ++head) {
            const int c0 = head * dh;
            logits.assign(deg, 0.0);
            for (int a = 0; a < deg; ++a) {
                const int slot = nb.offsets[i] + a;
                const int j = nb.targets[slot];
                double dot = 0.0;
                if (has_edges) {
                    const double bij = (*opts.edge_vals)[slot];
                    for (int c = 0; c < dh; ++c)
                        dot += qv.at(i, c0 + c) * (kv.at(j, c0 + c) + wek[c0 + c] * bij);
                } else {
                    for (int c = 0; c < dh; ++c) dot += qv.at(i, c0 + c) * kv.at(j, c0 + c);
                }
                double l = dot * inv_sqrt;
                if (opts.logit_bias) l += opts.logit_bias->at(i, j);
                logits[a] = l;
            }
            double mx = logits[0];
            for (int a = 1; a < deg; ++a) mx = std::max(mx, logits[a]);
            double sum = 0.0;
            for (int a = 0; a < deg; ++a) {
                logits[a] = std::exp(logits[a] - mx);
                sum += logits[a];
            }
            for (int a = 0; a < deg; ++a) {
                const int slot = nb.offsets[i] + a;
                const double al = logits[a] / sum;
                (*alpha)[static_cast<std::size_t>(slot) * nh + head] = al;
                const int j = nb.targets[slot];
                if (has_edges) {
                    const double bij = (*opts.edge_vals)[slot];
                    for (int c = 0; c < dh; ++c)
                        out.at(i, c0 + c) += al * (vv.at(j, c0 + c) + wev[c0 + c] * bij);
                } else {
                    for (int c = 0; c < dh; ++c) out.at(i, c0 + c) += al * vv.at(j, c0 + c);
                }
            }
        }
    }

    std::vector<Var> parents = {q, k, v};
    if (has_edges) {
        parents.push_back(opts.w_edge_k);
        parents.push_back(opts.w_edge_v);
    }
    auto nb_copy = std::make_shared<NeighborLists>(nb);
    std::shared_ptr<std::vector<double>> edges_copy;
    if (has_edges) edges_copy = std::make_shared<std::vector<double>>(*opts.edge_vals);

    return make_node(
        std::move(out), std::move(parents),
        [nh, dh, inv_sqrt, alpha, nb_copy, edges_copy, has_edges](Node& self) {
            Node* pq = self.parents[0].get();
            Node* pk = self.parents[1].get();
            Node* pv = self.parents[2].get();
            Node* pwk = has_edges ? self.parents[3].get() : nullptr;
            Node* pwv = has_edges ? self.parents[4].get() : nullptr;
            const Tensor& qv = pq->value;
            const Tensor& kv = pk->value;
            const Tensor& vv = pv->value;
            const int n = qv.dim(0);
            const double* wek = has_edges ? pwk->value.data() : nullptr;
            const double* wev = has_edges ? pwv->value.data() : nullptr;

            std::vector<double> dalpha;
            for (int i = 0; i < n; ++i) {
                const int deg = nb_copy->degree(i);
                for (int head = 0; head < nh; ++head) {
                    const int c0 = head * dh;
                    dalpha.assign(deg, 0.0);
                    double dot_ad = 0.0;
                    for (int a = 0; a < deg; ++a) {
                        const int slot = nb_copy->offsets[i] + a;
                        const int j = nb_copy->targets[slot];
                        const double al = (*alpha)[static_cast<std::size_t>(slot) * nh + head];
                        const double bij = has_edges ? (*edges_copy)[slot] : 0.0;
                        double da = 0.0;
                        for (int c = 0; c < dh; ++c) {
                            const double go = self.grad.at(i, c0 + c);
                            const double vval =
                                has_edges ? vv.at(j, c0 + c) + wev[c0 + c] * bij : vv.at(j, c0 + c);
                            da += go * vval;
                            // dV and dW_ev from the value path
                            if (pv->requires_grad) pv->grad_ref().at(j, c0 + c) += go * al;
                            if (has_edges && pwv->requires_grad)
                                pwv->grad_ref()[c0 + c] += go * al * bij;
                        }
                        dalpha[a] = da;
                        dot_ad += al * da;
                    }
                    for (int a = 0; a < deg; ++a) {
                        const int slot = nb_copy->offsets[i] + a;
                        const int j = nb_copy->targets[slot];
                        const double al = (*alpha)[static_cast<std::size_t>(slot) * nh + head];
                        const double dl = al * (dalpha[a] - dot_ad) * inv_sqrt;
                        if (dl == 0.0) continue;
                        const double bij = has_edges ? (*edges_copy)[slot] : 0.0;
                        for (int c = 0; c < dh; ++c) {
                            const double kval =
                                has_edges ? kv.at(j, c0 + c) + wek[c0 + c] * bij : kv.at(j, c0 + c);
                            if (pq->requires_grad) pq->grad_ref().at(i, c0 + c) += dl * kval;
                            if (pk->requires_grad)
                                pk->grad_ref().at(j, c0 + c) += dl * qv.at(i, c0 + c);
                            if (has_edges && pwk->requires_grad)
                                pwk->grad_ref()[c0 + c] += dl * qv.at(i, c0 + c) * bij;
                        }
                    }
                }
            }
        });
}

Var dense_multihead_attention(const Var& q, const Var& k, const Var& v, int n_heads) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    if (qv.ndim() != 2 || kv.ndim() != 2 || vv.ndim() != 2)
        throw ShapeError("dense attention: rank-2 operands required");
    const int p = qv.dim(0), d = qv.dim(1), m = kv.dim(0);
    if (kv.dim(1) != d || vv.dim(1) != d || vv.dim(0) != m)
        throw ShapeError("dense attention: K/V shape mismatch");
    if (n_heads < 1 || d % n_heads != 0)
        throw ShapeError("dense attention: d must divide by head count");
    const int dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto alpha = std::make_shared<std::vector<double>>(static_cast<std::size_t>(p) * m * n_heads);
    Tensor out({p, d});
    std::vector<double> logits(m);
    for (int head = 0; head < n_heads; ++head) {
        const int c0 = head * dh;
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < m; ++j) {
                double dot = 0.0;
                for (int c = 0; c < dh; ++c) dot += qv.at(i, c0 + c) * kv.at(j, c0 + c);
                logits[j] = dot * inv_sqrt;
            }
            double mx = logits[0];
            for (int j = 1; j < m; ++j) mx = std::max(mx, logits[j]);
            double sum = 0.0;
            for (int j = 0; j < m; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                sum += logits[j];
            }
            double* arow = alpha->data() + (static_cast<std::size_t>(head) * p + i) * m;
            for (int j = 0; j < m; ++j) {
                const double al = logits[j] / sum;
                arow[j] = al;
                for (int c = 0; c < dh; ++c) out.at(i, c0 + c) += al * vv.at(j, c0 + c);
            }
        }
    }
    return make_node(std::move(out), {q, k, v}, [n_heads, dh, inv_sqrt, alpha](Node& self) {
        Node* pq = self.parents[0].get();
        Node* pk = self.parents[1].get();
        Node* pv = self.parents[2].get();
        const Tensor& qv = pq->value;
        const Tensor& kv = pk->value;
        const Tensor& vv = pv->value;
        const int p = qv.dim(0), m = kv.dim(0);
        std::vector<double> dalpha(m);
        for (int head = 0; head < n_heads; ++head) {
            const int c0 = head * dh;
            for (int i = 0; i < p; ++i) {
                const double* arow = alpha->data() + (static_cast<std::size_t>(head) * p + i) * m;
                double dot_ad = 0.0;
                for (int j = 0; j < m; ++j) {
                    double da = 0.0;
                    for (int c = 0; c < dh; ++c) {
                        const double go = self.grad.at(i, c0 + c);
                        da += go * vv.at(j, c0 + c);
                        if (pv->requires_grad) pv->grad_ref().at(j, c0 + c) += go * arow[j];
                    }
                    dalpha[j] = da;
                    dot_ad += arow[j] * da;
                }
                for (int j = 0; j < m; ++j) {
                    const double dl = arow[j] * (dalpha[j] - dot_ad) * inv_sqrt;
                    if (dl == 0.0) continue;
                    for (int c = 0; c < dh; ++c) {
                        if (pq->requires_grad) pq->grad_ref().at(i, c0 + c) += dl * kv.at(j, c0 + c);
                        if (pk->requires_grad) pk->grad_ref().at(j, c0 + c) += dl * qv.at(i, c0 + c);
                    }
                }
            }
        }
    });
}

Var pooled_seed_attention(const Var& seed, const Var& k, const Var& v, int n_heads) {
    const Tensor& sv = seed.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    if (sv.ndim() != 2 || sv.dim(0) != 1 || kv.ndim() != 3 || vv.ndim() != 3)
        throw ShapeError("pooled attention: seed [1,d] and sets [N,T,d] required");
    const int d = sv.dim(1), n = kv.dim(0), t_len = kv.dim(1);
    if (kv.dim(2) != d || !vv.same_shape(kv)) throw ShapeError("pooled attention: shape mismatch");
    if (n_heads < 1 || d % n_heads != 0)
        throw ShapeError("pooled attention: d must divide by head count");
    const int dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto alpha = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * t_len * n_heads);
    Tensor out({n, d});
    std::vector<double> logits(t_len);
    for (int head = 0; head < n_heads; ++head) {
        const int c0 = head * dh;
        for (int i = 0; i < n; ++i) {
            for (int t = 0; t < t_len; ++t) {
                double dot = 0.0;
                for (int c = 0; c < dh; ++c) dot += sv.at(0, c0 + c) * kv.at(i, t, c0 + c);
                logits[t] = dot * inv_sqrt;
            }
            double mx = logits[0];
            for (int t = 1; t < t_len; ++t) mx = std::max(mx, logits[t]);
            double sum = 0.0;
            for (int t = 0; t < t_len; ++t) {
                logits[t] = std::exp(logits[t] - mx);
                sum += logits[t];
            }
            double* arow = alpha->data() + (static_cast<std::size_t>(head) * n + i) * t_len;
            for (int t = 0; t < t_len; ++t) {
                const double al = logits[t] / sum;
                arow[t] = al;
                for (int c = 0; c < dh; ++c) out.at(i, c0 + c) += al * vv.at(i, t, c0 + c);
            }
        }
    }
    return make_node(std::move(out), {seed, k, v}, [n_heads, dh, inv_sqrt, alpha](Node& self) {
        Node* ps = self.parents[0].get();
        Node* pk = self.parents[1].get();
        Node* pv = self.parents[2].get();
        const Tensor& sv = ps->value;
        const Tensor& kv = pk->value;
        const Tensor& vv = pv->value;
        const int n = kv.dim(0), t_len = kv.dim(1);
        std::vector<double> dalpha(t_len);
        for (int head = 0; head < n_heads; ++head) {
            const int c0 = head * dh;
            for (int i = 0; i < n; ++i) {
                const double* arow = alpha->data() + (static_cast<std::size_t>(head) * n + i) * t_len;
                double dot_ad = 0.0;
                for (int t = 0; t < t_len; ++t) {
                    double da = 0.0;
                    for (int c = 0; c < dh; ++c) {
                        const double go = self.grad.at(i, c0 + c);
                        da += go * vv.at(i, t, c0 + c);
                        if (pv->requires_grad) pv->grad_ref().at(i, t, c0 + c) += go * arow[t];
                    }
                    dalpha[t] = da;
                    dot_ad += arow[t] * da;
                }
                for (int t = 0; t < t_len; ++t) {
                    const double dl = arow[t] * (dalpha[t] - dot_ad) * inv_sqrt;
                    if (dl == 0.0) continue;
                    for (int c = 0; c < dh; ++c) {
                        if (ps->requires_grad)
                            ps->grad_ref().at(0, c0 + c) += dl * kv.at(i, t, c0 + c);
                        if (pk->requires_grad)
                            pk->grad_ref().at(i, t, c0 + c) += dl * sv.at(0, c0 + c);
                    }
                }
            }
        }
    });
}

Var element(const Var& x, int i) {
    if (i < 0 || static_cast<std::size_t>(i) >= x.value().numel())
        throw ShapeError("element: index out of range");
    return make_node(Tensor::scalar(x.value()[static_cast<std::size_t>(i)]), {x}, [i](Node& self) {
        self.parents[0]->grad_ref()[static_cast<std::size_t>(i)] += self.grad[0];
    });
}

}  // namespace tempcomm::ad
