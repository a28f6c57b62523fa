#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gearnet/errors.hpp"

namespace gearnet {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {

// Receives the output gradient and one accumulation buffer per input
// (nullptr for inputs that do not need a gradient).
using BackwardRule =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // populated on leaves only
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule rule;

  bool is_leaf() const { return !rule; }
};

}  // namespace detail

/// Dense row-major array of doubles with optional participation in the
/// gradient tape. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a one-element tensor. Leaf gradients accumulate
  /// across calls until zero_grad().
  void backward() const;

  /// Same values, cut from the tape.
  Tensor detach() const;
  Tensor clone() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                            detail::BackwardRule rule);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

/// Recorded operations reachable from a root, inputs before consumers.
struct Graph {
  std::vector<std::shared_ptr<detail::Node>> nodes;

  static Graph trace(const Tensor& root);
};

/// While alive, new operations on this thread are not recorded.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[b×n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor log_softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// max(x, floor); zero gradient where clamped.
Tensor clamp_min(const Tensor& x, double floor);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per-row sum of a matrix: [b×n] -> [b].
Tensor row_sum(const Tensor& x);
/// out[i] = x[i, cols[i]].
Tensor gather(const Tensor& x, std::span<const int> cols);
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);

/// Identity forward; multiplies the incoming gradient by -lambda.
Tensor grad_reverse(const Tensor& x, double lambda);

/// Classical momentum: v <- momentum*v + g; p <- p - eta*v.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double eta, double momentum,
              std::span<Tensor> velocity);

/// Convenience overload that reads each parameter's own gradient buffer.
void sgd_step(std::span<Tensor> params, double eta, double momentum, std::span<Tensor> velocity);

}  // namespace gearnet
