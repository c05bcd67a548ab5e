#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, the way model
// parameters are shared between the optimizer and the forward pass. Use
// clone() for an independent copy.
//
// Differentiable ops are methods of Graph. An op is recorded only when one of
// its inputs requires a gradient, so inference builds no tape. A Graph is
// single-use: after backward() it must be discarded and a new forward pass run.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hpvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Precision { f64, f32 };

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  // Empty span until a gradient has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const { return clone(); }

  // Identity of the underlying storage, used by the graph.
  const void* id() const { return s_.get(); }

  // Shared by every handle to the same tensor; the graph keeps these alive.
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

 private:
  std::shared_ptr<Storage> s_;

  friend class Graph;
};

class Graph {
 public:
  explicit Graph(Precision precision = Precision::f64) : precision_(precision) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // [..., m, p] x [..., p, n] -> [..., m, n]. Leading batch extents must be
  // equal, or one side must be a plain matrix that is broadcast.
  Tensor matmul(const Tensor& a, const Tensor& b);

  // Elementwise a + b; b's shape must be a suffix of a's shape and is
  // broadcast over a's leading dimensions.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double factor);

  Tensor reshape(const Tensor& x, Shape shape);
  Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
  // Swaps the last two axes.
  Tensor transpose(const Tensor& x);
  Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
  Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  Tensor softmax(const Tensor& x, int axis);
  // Normalizes over the last axis; gain and bias have the last axis' extent.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
  // Exact x * Phi(x).
  Tensor gelu(const Tensor& x);
  // Mean negative log-likelihood of logits [B, C] against labels.
  Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string> op_names() const;
  Precision precision() const { return precision_; }

 private:
  struct Node {
    std::string op;
    std::function<void()> backward;
    std::vector<std::shared_ptr<Tensor::Storage>> inputs;
  };

  Tensor output(Shape shape, std::vector<double> values, bool tracked) const;
  void record(std::string op, std::vector<std::shared_ptr<Tensor::Storage>> inputs,
              std::function<void()> fn);
  bool tracked(std::initializer_list<const Tensor*> inputs) const;

  Precision precision_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Scalar helpers shared with tests and the model.
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace hpvit
