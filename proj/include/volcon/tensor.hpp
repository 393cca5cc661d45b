#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volcon/common.hpp"

namespace volcon {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use, accumulates until zeroed
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Dense row-major float64 array with reverse-mode differentiation. A Tensor
// is a cheap shared handle onto a graph node; ops build the graph eagerly
// and record backward closures when any input requires gradients.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->value.size(); }
    std::vector<double>& data() { return n_->value; }
    const std::vector<double>& data() const { return n_->value; }
    std::vector<double>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    double value() const;

    detail::NodePtr node() const { return n_; }
    explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}

private:
    detail::NodePtr n_;
};

// ---------------------------------------------------------------------------
// Ops. Shape preconditions throw ContractError naming both shapes.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& m, const Tensor& bias);  // [r,c] + [c]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tsum(const Tensor& a);   // scalar
Tensor tmean(const Tensor& a);  // scalar
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
// Sums consecutive groups of `group` rows: [g*group, f] -> [g, f]. This is
// the Deep Sets pooling step.
Tensor sum_over_set(const Tensor& a, std::size_t group);
// Row-wise x / max(||x||, 1e-12).
Tensor l2_normalize_rows(const Tensor& a);
// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], bias: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t pad);
// Non-overlapping k x k mean pooling, floor output dims.
Tensor avg_pool2d(const Tensor& x, std::size_t k);
Tensor global_mean_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
// Mean over rows of -log softmax(logits)[target]; max-subtracted for
// stability.
Tensor softmax_cross_entropy_rows(const Tensor& logits,
                                  const std::vector<std::size_t>& targets);

// Reverse-mode sweep from a scalar loss. Each graph node is visited exactly
// once; a second call on the same loss throws.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Named parameter collection and its "VOLP" checkpoint format.
// ---------------------------------------------------------------------------

struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    void zero_grad();
    void set_requires_grad(bool b);
    std::size_t total_size() const;
};

void save_params(const ParamStore& params, const std::string& path);
ParamStore load_params(const std::string& path);

// Central-difference oracle: returns the max over checked coordinates of
// |ad - fd| / max(1e-8, |ad| + |fd|). `fn` must rebuild its graph from the
// current parameter values on every call. With max_coords_per_tensor == 0
// every coordinate is checked; otherwise a deterministic sample per tensor.
// The stencil assumes local smoothness: results are meaningless for inputs
// that put a ReLU pre-activation within the stencil of its kink, or for
// coordinates whose exact gradient sits below the stencil's rounding noise
// (roughly |g| < 1e-5 at epsilon = 1e-5 for O(1) losses). Callers pick
// inputs clear of both regimes; exactly-zero gradients are fine, since a
// dead path reproduces bitwise and differences to exactly zero.
double finite_diff_check(const std::function<Tensor(ParamStore&)>& fn,
                         ParamStore& params, double epsilon,
                         std::size_t max_coords_per_tensor = 0,
                         std::uint64_t coord_seed = 0xF00Dull);

}  // namespace volcon
