#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D tensor (rows x cols); scalars are 1x1. Binary
// elementwise ops broadcast any dimension of size 1. Nodes are appended in
// evaluation order, so the tape is already topologically sorted and the
// backward sweep is a single reverse pass. All reductions accumulate in
// ascending index order, which makes forward and backward bit-reproducible.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace disent {

struct Tensor {
  std::vector<std::size_t> shape{0, 0};
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, data(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::initializer_list<double> values);

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return data.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  /// Value of a 1x1 tensor.
  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

class Graph;

/// Handle to a node on a Graph's tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  using Backward = std::function<void(const Tensor& upstream, Graph& g)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient can be requested from `gradients`.
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// d loss / d w for every w in `wrt`. `loss` must be 1x1. Leaves that do
  /// not influence the loss receive exact zeros.
  std::vector<Tensor> gradients(Var loss, std::span<const Var> wrt);

  // Used by op implementations.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  /// Accumulates into the gradient buffer of `v` during a backward pass.
  void accumulate(Var v, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Elementwise, with broadcasting over size-1 dimensions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var shift(Var a, double s);
Var neg(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var abs(Var a);
/// log(1 + e^a), computed without overflow.
Var softplus(Var a);

/// Sum of all entries -> 1x1.
Var sum(Var a);
Var mean(Var a);
/// Column sums -> 1 x cols.
Var sum_rows(Var a);
/// Row sums -> rows x 1.
Var sum_cols(Var a);
/// Row-wise log-sum-exp -> rows x 1.
Var logsumexp_cols(Var a);
Var slice_cols(Var a, std::size_t begin, std::size_t end);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return shift(a, s); }
inline Var operator+(double s, Var a) { return shift(a, s); }
inline Var operator-(Var a, double s) { return shift(a, -s); }

}  // namespace disent
