#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossecg/common.hpp"

namespace crossecg {

// Dense n-d array of doubles. Copies are shallow (shared storage); use clone()
// for an independent buffer. `node` ties the tensor to a Tape for reverse-mode
// differentiation; it is only meaningful while `tape_id` matches the live tape.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    int node = -1;
    std::uint64_t tape_id = 0;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp);
    Tensor(std::vector<int> shp, std::vector<double> values);

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
    static Tensor full(std::vector<int> shp, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor randu(std::vector<int> shp, Rng& rng, double lo, double hi);
    static Tensor randn(std::vector<int> shp, Rng& rng, double mean = 0.0, double std = 1.0);

    int numel() const;
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }
    std::vector<double>& vec() { return *data; }
    const std::vector<double>& vec() const { return *data; }
    double value() const; // requires numel()==1

    Tensor clone() const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<int>& s);

// Records one operation per node, in execution order; backward walks the list
// in reverse, accumulating gradients into per-node buffers. A tape is good for
// exactly one backward pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

    Tape();

    std::uint64_t id() const { return id_; }

    // Registers t as a differentiation leaf and returns its node id.
    int leaf(Tensor& t);

    // Appends an interior node. `parents` may contain -1 entries (untracked
    // inputs); the backward fn must skip those itself via grad_buf().
    int add_node(int numel, BackwardFn bw);

    // Accumulator for a node's gradient, zero-initialized on first access.
    // Returns nullptr for node < 0 so callers can skip untracked parents.
    std::vector<double>* grad_buf(int node, int numel);

    void backward(const Tensor& scalar_out);

    // Gradient of a leaf after backward().
    const std::vector<double>& grad(const Tensor& t) const;

    bool done() const { return ran_backward_; }

private:
    struct Node {
        int numel = 0;
        BackwardFn backward; // empty for leaves
    };
    std::uint64_t id_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool ran_backward_ = false;
};

// Helper for ops: the node id of t on tape tp, or -1 if untracked there.
int node_on(const Tape* tp, const Tensor& t);

// ---- Differentiable operations -------------------------------------------
// Every op takes the tape first (nullptr = pure forward, nothing recorded).

// x [B,Cin,L], w [Cout,Cin,K] (K odd), bias [Cout] -> [B,Cout,L], same padding.
Tensor conv1d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& bias);

// x [B,C,L]; gamma,beta [C]; running stats [C] updated in train mode.
Tensor batchnorm1d(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool train,
                   double momentum = 0.1, double eps = 1e-5);

Tensor relu(Tape* tp, const Tensor& x);

// x [B,F], w [F,G], bias [G] -> [B,G]
Tensor linear(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& bias);

// op(a) [B,M,K] x op(b) [B,K,P] -> [B,M,P]; ta/tb transpose the last two axes.
Tensor matmul_batched(Tape* tp, const Tensor& a, const Tensor& b,
                      bool ta = false, bool tb = false);

// Softmax over the last axis, max-subtraction form.
Tensor softmax_lastdim(Tape* tp, const Tensor& x);

// [B,C,L] -> [B,C], mean over L.
Tensor global_avg_pool(Tape* tp, const Tensor& x);

// Rows of [B,F] scaled to unit L2 norm (input rows with norm <= eps are
// divided by eps instead).
Tensor l2_normalize(Tape* tp, const Tensor& x, double eps = 1e-12);

Tensor add(Tape* tp, const Tensor& a, const Tensor& b);
Tensor scale_const(Tape* tp, const Tensor& x, double c);
// s is a [1] tensor (learnable scalar): y = s * x.
Tensor scale_by(Tape* tp, const Tensor& x, const Tensor& s);
// [B,Ci,L] blocks -> [B,sum(Ci),L]
Tensor concat_channels(Tape* tp, const std::vector<Tensor>& xs);
// [Bi,F] blocks -> [sum(Bi),F]
Tensor concat_rows(Tape* tp, const std::vector<Tensor>& xs);

// ---- Gradient checking -----------------------------------------------------

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
};

// Central finite differences against tape gradients for a scalar-valued
// function of the given inputs. Relative error per element is
// |g_a - g_n| / max(1, |g_a|, |g_n|).
GradCheckResult grad_check(const std::function<Tensor(Tape*, std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs,
                           double rel_tol = 1e-4, double h = 1e-5);

// ---- Named parameter set ---------------------------------------------------

// Trainable tensors plus non-trainable state (BN running stats), each in a
// stable registration order so initialization, checkpoints and optimizer
// state line up deterministically.
class ParamStore {
public:
    Tensor& add_param(const std::string& name, Tensor t);
    Tensor& add_buffer(const std::string& name, Tensor t);

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    Tensor& buffer(const std::string& name);
    bool has_param(const std::string& name) const { return params_.count(name) > 0; }

    const std::vector<std::string>& param_names() const { return param_order_; }
    const std::vector<std::string>& buffer_names() const { return buffer_order_; }

    std::vector<double>& grad(const std::string& name);
    void zero_grads();

    // Registers every parameter as a leaf on tp.
    void watch_all(Tape& tp);
    // Copies leaf gradients out of the tape into the store's buffers.
    void collect_grads(const Tape& tp);

    std::int64_t total_params() const;

private:
    std::vector<std::string> param_order_;
    std::vector<std::string> buffer_order_;
    std::unordered_map<std::string, Tensor> params_;
    std::unordered_map<std::string, Tensor> buffers_;
    std::unordered_map<std::string, std::vector<double>> grads_;
};

} // namespace crossecg
