#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ckm/grid.hpp"

namespace ckm::ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation, only when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // pushes this->grad into the parents
  const char* op = "leaf";
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return node_->value.size(); }
  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }
  double item() const;
  // Copy of the value without graph history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
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

// ---- ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);                           // (m,k) x (k,n)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});     // (n,in), w (out,in), b (out)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b = {}, int stride = 1, int padding = 0);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b = {}, int stride = 1, int padding = 0);
Tensor avg_pool2d(const Tensor& x, int k);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int axis, int start, int length);
// x (N,C,H,W) plus v (N,C) broadcast over the spatial dimensions.
Tensor add_channel(const Tensor& x, const Tensor& v);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

// Populates grad of every requires_grad tensor reachable from the scalar `loss`.
void backward(const Tensor& loss);

// Truncated (at 2 std) normal with std = gain / sqrt(fan_in).
Tensor init_param(const Shape& shape, int fan_in, Rng& rng, double gain = 1.0);

}  // namespace ckm::ad
