#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "tempcomm/tensor.hpp"

namespace tempcomm {
class Rng;
}

namespace tempcomm::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One entry of the dynamically built tape. `backprop` reads this node's
/// grad and accumulates into the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    Tensor& grad_ref() {
        if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

/// Handle to a tape node. Copying is cheap (shared ownership).
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var param(Tensor v);
    static Var constant(Tensor v);

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& value() { return n_->value; }
    const Tensor& grad() const { return n_->grad; }
    Tensor& grad_ref() { return n_->grad_ref(); }
    void zero_grad() { n_->grad = Tensor(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::vector<int>& shape() const { return n_->value.shape(); }
    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

/// While a guard is alive, ops record neither parents nor backprop closures.
/// Used for inference passes and finite-difference probes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

/// Reverse-mode accumulation from a scalar root into every reachable
/// parameter's grad (accumulating, not overwriting).
void backward(const Var& root);

// ---------------------------------------------------------------------------
// Elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x[..., d] + b[d], broadcasting over leading dimensions.
Var add_bias(const Var& x, const Var& b);
/// x[N, d] * v[d] row-wise broadcast.
Var mul_rowvec(const Var& x, const Var& v);
/// x * s with s a scalar (shape {1}) variable.
Var scale_by(const Var& x, const Var& s);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// y = A x with A a constant matrix (no gradient through A).
Var const_matmul(const Tensor& a, const Var& x);

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------
Var sigmoid(const Var& x);
Var tanh_act(const Var& x);
Var relu(const Var& x);
Var gelu(const Var& x);
/// Softmax over a rank-1 tensor.
Var softmax_vec(const Var& logits);
/// Layer normalization over the last dimension with learned scale/shift.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var dropout(const Var& x, double rate, Rng& rng, bool train_mode);

// ---------------------------------------------------------------------------
// Convolutions (no padding)
// ---------------------------------------------------------------------------
/// x[N, Cin, L], w[Cout, Cin, k], b[Cout] -> y[N, Cout, floor((L-k)/s)+1]
Var conv1d(const Var& x, const Var& w, const Var& b, int stride);
/// x[N, Cin, L], w[Cin, Cout, k], b[Cout] -> y[N, Cout, (L-1)*s+k+output_padding].
/// Trailing padded positions receive the bias only; output_padding < s makes
/// the map the exact shape inverse of a strided conv1d.
Var conv1d_transpose(const Var& x, const Var& w, const Var& b, int stride,
                     int output_padding = 0);

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------
Var reshape(const Var& x, std::vector<int> shape);
Var slice_cols(const Var& x, int c0, int len);
/// x[N, D, T] -> x[:, :, t] as [N, D]
Var slice_time(const Var& x, int t);
/// T tensors of shape [N, d] -> [N, T, d]
Var stack_middle(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
/// table[R, C] -> row r as [C]
Var row(const Var& table, int r);

// ---------------------------------------------------------------------------
// Reductions / pooling
// ---------------------------------------------------------------------------
Var mean_all(const Var& x);
Var sum_all(const Var& x);
/// H[N, C, L] -> [N, C]
Var avgpool_time(const Var& h);
Var maxpool_time(const Var& h);
/// H[N, C, L] -> [N, L]
Var mean_channels(const Var& h);
/// H[N, C, L] * g[N, C] (broadcast over L)
Var mul_bcast_channel(const Var& h, const Var& g);
/// H[N, C, L] * g[N, L] (broadcast over C)
Var mul_bcast_time(const Var& h, const Var& g);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------
/// Mean squared error against a constant target.
Var mse_loss(const Var& x, const Tensor& target);
/// Mean binary cross-entropy over sigmoid(z_i . z_j) for positive and
/// sampled negative pairs.
Var graph_bce_loss(const Var& z, const std::vector<std::pair<int, int>>& pos,
                   const std::vector<std::pair<int, int>>& neg);

// ---------------------------------------------------------------------------
// Recurrent cell (fused nonlinearity; gates layout [i | f | g | o])
// ---------------------------------------------------------------------------
/// c_t = sigmoid(i) * tanh(g) + sigmoid(f) * c_prev
Var lstm_cell_c(const Var& gates, const Var& c_prev);
/// h_t = sigmoid(o) * tanh(c_t)
Var lstm_cell_h(const Var& gates, const Var& c_t);

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------
/// CSR adjacency for per-query neighborhoods.
struct NeighborLists {
    std::vector<int> offsets;  // size N+1
    std::vector<int> targets;  // size offsets.back()

    int num_queries() const { return static_cast<int>(offsets.size()) - 1; }
    int degree(int i) const { return offsets[i + 1] - offsets[i]; }
};

struct MaskedAttnOpts {
    int n_heads = 1;
    /// Constant additive logit bias per (i, j) pair, or nullptr.
    const Tensor* logit_bias = nullptr;
    /// Per-CSR-slot scalar edge features; when set together with w_edge_k /
    /// w_edge_v, keys and values are augmented as K_j + w_edge_k * B_ij.
    const std::vector<double>* edge_vals = nullptr;
    Var w_edge_k;
    Var w_edge_v;
};

/// Softmax attention restricted to graph neighborhoods.
/// Q, K, V: [N, d]; output [N, d] (heads concatenated).
Var masked_multihead_attention(const Var& q, const Var& k, const Var& v,
                               const NeighborLists& nb, const MaskedAttnOpts& opts);

/// Dense multi-head attention: q[P, d], k[M, d], v[M, d] -> [P, d].
Var dense_multihead_attention(const Var& q, const Var& k, const Var& v, int n_heads);

/// Per-set pooling attention: seed[1, d] attends over each of the N
/// length-T sets; k, v: [N, T, d]; output [N, d].
Var pooled_seed_attention(const Var& seed, const Var& k, const Var& v, int n_heads);

/// x[R, C] -> element i as a scalar (shape {1}).
Var element(const Var& x, int i);

}  // namespace tempcomm::ad
