#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace xmodal {

class Rng;

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// One node of the recorded computation graph. Parents precede the node in
// construction order, so the tape is already topologically ordered; backward
// walks it once in reverse.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantics handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->numel(); }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  size_t rank() const { return impl_->shape.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
  double item() const;
  void zero_grad() { impl_->grad.clear(); }

  // Debug assertion: throws on NaN/Inf.
  void check_finite(const std::string& what) const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording in scope (evaluation passes).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// x: [b x rest...], t: [rest...]; adds t to every batch slice.
Tensor add_broadcast0(const Tensor& x, const Tensor& t);

Tensor matmul(const Tensor& a, const Tensor& b);
// Stacked matmul: a [N x m x k], b [N x k x n] -> [N x m x n].
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor permute(const Tensor& a, const std::vector<size_t>& axes);
Tensor reshape(const Tensor& a, Shape new_shape);

Tensor softmax_last(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// input rank decides spatial rank: 3 -> 1D, 4 -> 2D. pad is (before, after)
// per the single spatial axis for 1D, symmetric for 2D.
Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias,
            int64_t stride, int64_t pad_before = 0, int64_t pad_after = 0);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps);

// table: [V x H], ids flattened; output [ids.size() x H].
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);
// x: [B x S x H] -> [B x H].
Tensor mean_axis1(const Tensor& x);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Mean cross-entropy over batch; label -1 is ignored (masked positions).
Tensor softmax_ce(const Tensor& logits, const std::vector<int64_t>& labels);
// Per-label sigmoid BCE, mean over all entries; targets in {0,1}.
Tensor bce_multilabel(const Tensor& logits, const std::vector<double>& targets);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Column statistics of a [n x d] matrix, output shape [1 x d].
Tensor col_mean(const Tensor& x);
// sigma_k = sqrt(max(var_k, var_floor)), population variance.
Tensor col_sigma(const Tensor& x, double var_floor);

// D[i,j] = ||a_i - b_j||^2 with b constant. a: [n x d], b row-major [m x d].
Tensor pairwise_sqdist_const(const Tensor& a, const std::vector<double>& b,
                             int64_t m);
// Same, both sides differentiable.
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

// Populates grads of every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

namespace detail {
Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn);
}

} // namespace xmodal
