#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctf/error.hpp"

// Minimal dense tensor with reverse-mode differentiation.
//
// Every op that touches a tensor with requires_grad() records a GradNode on
// its output. backward() collects the nodes reachable from the loss and
// replays them in reverse recording order, which is a valid reverse
// topological order because a node is always recorded after its inputs.
// Broadcasting is limited to scalar scaling and row-vector addition.

namespace ctf {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorImpl;

struct GradNode {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads out.grad and accumulates into the inputs' grads.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor parameter(Shape shape, std::vector<double> data) {
    return Tensor(std::move(shape), std::move(data), true);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  std::vector<double> to_vector() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return impl_->node == nullptr; }

  double item() const;
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t r, std::size_t c) const;

  // Fresh leaf holding a copy of the values; no graph, no grad.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(const TensorImpl&)>);
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Additive attention bias: 0 for an admissible key, kDisallowed otherwise.
struct AdditiveBias {
  static constexpr double kDisallowed = -1e30;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  bool allowed(std::size_t r, std::size_t c) const {
    return values[r * cols + c] > kDisallowed * 0.5;
  }
};

// Ordered record of the operations reachable from a loss.
struct GradTape {
  std::vector<std::shared_ptr<TensorImpl>> nodes;  // recording order

  static GradTape collect(const Tensor& root);
  void replay_backward() const;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m×n] + row[n] added to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor relu(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor abs(const Tensor& a);
// Rows of table[v×d] selected by indices -> [k×d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor masked_softmax(const Tensor& scores, const AdditiveBias& bias);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

// Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad leaf.
void backward(const Tensor& loss);

}  // namespace ctf
