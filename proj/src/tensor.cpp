#include "gearnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace gearnet {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(x.shape()));
  }
}

template <typename F>
Tensor unary(const Tensor& x, F&& f, detail::BackwardRule rule) {
  std::vector<double> out(x.size());
  auto in = x.data();
  std::transform(in.begin(), in.end(), out.begin(), f);
  return Tensor::make_result(x.shape(), std::move(out), {x}, std::move(rule));
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0U) != shape.end()) {
    throw DimensionError("tensor shape must be a non-empty list of positive dimensions, got " +
                         to_string(shape));
  }
  if (values.size() != element_count(shape)) {
    throw DimensionError("tensor of shape " + to_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const { return shape()[0]; }
std::size_t Tensor::cols() const { return rank() > 1 ? shape()[1] : 1; }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on a tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) {
    throw ContractError("requires_grad can only be toggled on leaf tensors");
  }
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (has_grad()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::detach() const {
  return from(shape(), node_->value, false);
}

Tensor Tensor::clone() const {
  return from(shape(), node_->value, is_leaf() && requires_grad());
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                           detail::BackwardRule rule) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->rule = std::move(rule);
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
  }
  return Tensor(std::move(node));
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  std::unordered_set<const detail::Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      g.nodes.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!requires_grad()) {
    throw ContractError("backward() on a tensor that is not connected to any gradient leaf");
  }
  const Graph graph = Graph::trace(*this);

  std::unordered_map<const detail::Node*, std::vector<double>> interior;
  auto buffer_for = [&](detail::Node* n) -> std::vector<double>* {
    if (!n->requires_grad) return nullptr;
    if (n->is_leaf()) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
      return &n->grad;
    }
    auto [it, inserted] = interior.try_emplace(n);
    if (inserted) it->second.assign(n->value.size(), 0.0);
    return &it->second;
  };

  if (node_->is_leaf()) {
    (*buffer_for(node_.get()))[0] += 1.0;
    return;
  }
  interior[node_.get()] = std::vector<double>{1.0};

  std::vector<std::vector<double>*> sinks;
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    detail::Node* n = it->get();
    if (n->is_leaf()) continue;
    auto found = interior.find(n);
    if (found == interior.end()) continue;
    // Element references survive rehashing; iterators do not.
    const std::vector<double>& upstream = found->second;
    sinks.clear();
    for (auto& in : n->inputs) sinks.push_back(buffer_for(in.get()));
    n->rule(upstream, sinks);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               auto A = a.data();
                               auto B = b.data();
                               if (auto* ga = gin[0]) {  // dA = dC * B^T
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                                     (*ga)[i * k + p] += acc;
                                   }
                               }
                               if (auto* gb = gin[1]) {  // dB = A^T * dC
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double aip = A[i * k + p];
                                     if (aip == 0.0) continue;
                                     for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
                                   }
                               }
                             });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.size() != cols) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match columns of " +
                         to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias},
                             [rows, cols](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               if (auto* gx = gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                               if (auto* gb = gin[1])
                                 for (std::size_t i = 0; i < rows; ++i)
                                   for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
                             });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [x](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                 auto in = x.data();
                 auto& gx = *gin[0];
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (in[i] > 0.0) gx[i] += g[i];
               });
}

Tensor log_softmax(const Tensor& logits) {
  require_matrix(logits, "log_softmax");
  const std::size_t rows = logits.rows(), k = logits.cols();
  if (k < 2) {
    throw DimensionError("log_softmax: need at least 2 classes, got " + to_string(logits.shape()));
  }
  auto z = logits.data();
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = z.data() + i * k;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(row[j])) {
        throw NumericError("log_softmax: non-finite logit at row " + std::to_string(i));
      }
      hi = std::max(hi, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - hi);
    const double lse = hi + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = row[j] - lse;
  }
  std::vector<double> probs(out.size());
  std::transform(out.begin(), out.end(), probs.begin(), [](double v) { return std::exp(v); });
  return Tensor::make_result(logits.shape(), std::move(out), {logits},
                             [probs = std::move(probs), rows, k](std::span<const double> g,
                                                                 std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < rows; ++i) {
                                 double gsum = 0.0;
                                 for (std::size_t j = 0; j < k; ++j) gsum += g[i * k + j];
                                 for (std::size_t j = 0; j < k; ++j)
                                   gx[i * k + j] += g[i * k + j] - probs[i * k + j] * gsum;
                               }
                             });
}

Tensor softmax(const Tensor& logits) { return exp(log_softmax(logits)); }

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.size());
  auto in = x.data();
  std::transform(in.begin(), in.end(), out.begin(), [](double v) { return std::exp(v); });
  auto saved = out;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [saved = std::move(saved)](std::span<const double> g,
                                                        std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i];
                             });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); },
               [x](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                 auto in = x.data();
                 auto& gx = *gin[0];
                 for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / in[i];
               });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(x, [floor](double v) { return v < floor ? floor : v; },
               [x, floor](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                 auto in = x.data();
                 auto& gx = *gin[0];
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (in[i] >= floor) gx[i] += g[i];
               });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::plus<>());
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               for (auto* gi : gin)
                                 if (gi)
                                   for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::minus<>());
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               if (auto* ga = gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                               if (auto* gb = gin[1])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::multiplies<>());
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               auto av = a.data();
                               auto bv = b.data();
                               if (auto* ga = gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                               if (auto* gb = gin[1])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                             });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                 auto& gx = *gin[0];
                 for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
               });
}

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return Tensor::make_result({1}, {total}, {x},
                             [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               for (double& v : *gin[0]) v += g[0];
                             });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return Tensor::make_result({1}, {total / n}, {x},
                             [n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               for (double& v : *gin[0]) v += g[0] / n;
                             });
}

Tensor row_sum(const Tensor& x) {
  require_matrix(x, "row_sum");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(rows, 0.0);
  auto in = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += in[i * cols + j];
  return Tensor::make_result({rows}, std::move(out), {x},
                             [cols](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += g[i];
                             });
}

Tensor gather(const Tensor& x, std::span<const int> cols) {
  require_matrix(x, "gather");
  const std::size_t rows = x.rows(), k = x.cols();
  if (cols.size() != rows) {
    throw DimensionError("gather: " + std::to_string(cols.size()) + " indices for " + to_string(x.shape()));
  }
  std::vector<std::size_t> flat(rows);
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= k) {
      throw ContractError("gather: index " + std::to_string(cols[i]) + " out of range [0," +
                          std::to_string(k) + ")");
    }
    flat[i] = i * k + static_cast<std::size_t>(cols[i]);
    out[i] = x.data()[flat[i]];
  }
  return Tensor::make_result({rows}, std::move(out), {x},
                             [flat = std::move(flat)](std::span<const double> g,
                                                      std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[flat[i]] += g[i];
                             });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "select_rows");
  const std::size_t cols = x.cols();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  std::vector<double> out;
  out.reserve(picked.size() * cols);
  for (std::size_t r : picked) {
    if (r >= x.rows()) {
      throw ContractError("select_rows: row " + std::to_string(r) + " out of range for " + to_string(x.shape()));
    }
    auto row = x.data().subspan(r * cols, cols);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::make_result({picked.size(), cols}, std::move(out), {x},
                             [picked, cols](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < picked.size(); ++i)
                                 for (std::size_t j = 0; j < cols; ++j) gx[picked[i] * cols + j] += g[i * cols + j];
                             });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_matrix(top, "concat_rows");
  require_matrix(bottom, "concat_rows");
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: column mismatch " + to_string(top.shape()) + " vs " +
                         to_string(bottom.shape()));
  }
  std::vector<double> out(top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  const std::size_t split = top.size();
  return Tensor::make_result({top.rows() + bottom.rows(), top.cols()}, std::move(out), {top, bottom},
                             [split](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               if (auto* gt = gin[0])
                                 for (std::size_t i = 0; i < split; ++i) (*gt)[i] += g[i];
                               if (auto* gb = gin[1])
                                 for (std::size_t i = split; i < g.size(); ++i) (*gb)[i - split] += g[i];
                             });
}

Tensor grad_reverse(const Tensor& x, double lambda) {
  if (lambda < 0.0) {
    throw ParameterError("grad_reverse: lambda must be >= 0, got " + std::to_string(lambda));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [lambda](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += -lambda * g[i];
                             });
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

void momentum_update(std::span<double> p, std::span<const double> g, std::span<double> v, double eta,
                     double momentum) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= eta * v[i];
  }
}

}  // namespace

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double eta, double momentum,
              std::span<Tensor> velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " + std::to_string(velocity.size()) +
                         " velocity buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != velocity[i].shape()) {
      throw DimensionError("sgd_step: parameter " + std::to_string(i) + " has shape " +
                           to_string(params[i].shape()) + ", grad " + to_string(grads[i].shape()) +
                           ", velocity " + to_string(velocity[i].shape()));
    }
    momentum_update(params[i].mutable_data(), grads[i].data(), velocity[i].mutable_data(), eta, momentum);
  }
}

void sgd_step(std::span<Tensor> params, double eta, double momentum, std::span<Tensor> velocity) {
  if (params.size() != velocity.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(velocity.size()) + " velocity buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != velocity[i].shape()) {
      throw DimensionError("sgd_step: parameter " + std::to_string(i) + " has shape " +
                           to_string(params[i].shape()) + ", velocity " + to_string(velocity[i].shape()));
    }
    if (!params[i].has_grad()) continue;  // unreachable from the loss this step
    momentum_update(params[i].mutable_data(), params[i].grad(), velocity[i].mutable_data(), eta, momentum);
  }
}

}  // namespace gearnet
