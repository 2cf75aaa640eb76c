#include "disent/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "disent/errors.hpp"

namespace disent {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape{rows, cols}, data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw ConfigError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on a non-scalar tensor");
  return data[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (Var in : inputs) {
    if (in.graph != this) throw UsageError("mixing variables from different graphs");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Graph::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor& slot = grads_[v.id];
  if (slot.data.empty() && slot.rows() == 0) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot.data[i] += g.data[i];
}

std::vector<Tensor> Graph::gradients(Var loss, std::span<const Var> wrt) {
  if (loss.graph != this) throw UsageError("loss belongs to a different graph");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw UsageError("gradients require a scalar (1x1) loss, got " +
                     std::to_string(lv.rows()) + "x" + std::to_string(lv.cols()));
  }
  grads_.assign(nodes_.size(), Tensor());
  if (nodes_[loss.id].requires_grad) {
    grads_[loss.id] = Tensor::scalar(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || grads_[i].rows() == 0) continue;
      n.backward(grads_[i], *this);
    }
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    const Tensor& g = grads_[w.id];
    if (g.rows() == 0) {
      out.emplace_back(nodes_[w.id].value.rows(), nodes_[w.id].value.cols(), 0.0);
    } else {
      out.push_back(g);
    }
  }
  grads_.clear();
  return out;
}

namespace {

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ConfigError(std::string("shape mismatch in ") + op + ": " + std::to_string(a) +
                    " vs " + std::to_string(b));
}

inline std::size_t bidx(const Tensor& t, std::size_t r, std::size_t c) {
  return (t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
}

/// Sums `g` down to a rows x cols tensor (undoing broadcasting).
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols, 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out.data[bidx(out, r, c)] += g(r, c);
  return out;
}

template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const char* op, F f) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), op);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = f(a.data[bidx(a, r, c)], b.data[bidx(b, r, c)]);
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

/// Unary elementwise op whose derivative is a function of (input, output).
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  Graph& g = *a.graph;
  Tensor out = map(a.value(), f);
  return g.push(std::move(out), {a}, [a, dfdx](const Tensor& up, Graph& gr) {
    const Tensor& x = gr.value(a);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) ga.data[i] = up.data[i] * dfdx(x.data[i]);
    gr.accumulate(a, ga);
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  return a.graph->push(std::move(out), {a, b}, [a, b](const Tensor& up, Graph& g) {
    g.accumulate(a, reduce_to(up, a.rows(), a.cols()));
    g.accumulate(b, reduce_to(up, b.rows(), b.cols()));
  });
}

Var sub(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  return a.graph->push(std::move(out), {a, b}, [a, b](const Tensor& up, Graph& g) {
    g.accumulate(a, reduce_to(up, a.rows(), a.cols()));
    Tensor nb = reduce_to(up, b.rows(), b.cols());
    for (double& v : nb.data) v = -v;
    g.accumulate(b, nb);
  });
}

Var mul(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  return a.graph->push(std::move(out), {a, b}, [a, b](const Tensor& up, Graph& g) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor t(up.rows(), up.cols());
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t c = 0; c < up.cols(); ++c) t(r, c) = up(r, c) * bv.data[bidx(bv, r, c)];
      g.accumulate(a, reduce_to(t, av.rows(), av.cols()));
    }
    if (g.requires_grad(b)) {
      Tensor t(up.rows(), up.cols());
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t c = 0; c < up.cols(); ++c) t(r, c) = up(r, c) * av.data[bidx(av, r, c)];
      g.accumulate(b, reduce_to(t, bv.rows(), bv.cols()));
    }
  });
}

Var div(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "div", [](double x, double y) { return x / y; });
  return a.graph->push(std::move(out), {a, b}, [a, b](const Tensor& up, Graph& g) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor t(up.rows(), up.cols());
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t c = 0; c < up.cols(); ++c) t(r, c) = up(r, c) / bv.data[bidx(bv, r, c)];
      g.accumulate(a, reduce_to(t, av.rows(), av.cols()));
    }
    if (g.requires_grad(b)) {
      Tensor t(up.rows(), up.cols());
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t c = 0; c < up.cols(); ++c) {
          const double y = bv.data[bidx(bv, r, c)];
          t(r, c) = -up(r, c) * av.data[bidx(av, r, c)] / (y * y);
        }
      g.accumulate(b, reduce_to(t, bv.rows(), bv.cols()));
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var shift(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ConfigError("matmul shape mismatch: " + std::to_string(A.rows()) + "x" +
                      std::to_string(A.cols()) + " * " + std::to_string(B.rows()) + "x" +
                      std::to_string(B.cols()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &C.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      const double* brow = &B.data[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return a.graph->push(std::move(C), {a, b}, [a, b, m, k, n](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (g.requires_grad(a)) {
      // dA = up * B^T, accumulated over j in ascending order.
      Tensor Bt(n, k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) Bt.data[j * k + p] = B.data[p * n + j];
      Tensor dA(m, k, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        double* drow = &dA.data[i * k];
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = up.data[i * n + j];
          const double* btrow = &Bt.data[j * k];
          for (std::size_t p = 0; p < k; ++p) drow[p] += gij * btrow[p];
        }
      }
      g.accumulate(a, dA);
    }
    if (g.requires_grad(b)) {
      // dB = A^T * up, accumulated over i in ascending order.
      Tensor dB(k, n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &up.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.data[i * k + p];
          double* drow = &dB.data[p * n];
          for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
      }
      g.accumulate(b, dB);
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor T(A.cols(), A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) T(c, r) = A(r, c);
  return a.graph->push(std::move(T), {a}, [a](const Tensor& up, Graph& g) {
    Tensor ga(up.cols(), up.rows());
    for (std::size_t r = 0; r < up.rows(); ++r)
      for (std::size_t c = 0; c < up.cols(); ++c) ga(c, r) = up(r, c);
    g.accumulate(a, ga);
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var sum(Var a) {
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.data) s += v;
  return a.graph->push(Tensor::scalar(s), {a}, [a](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    g.accumulate(a, Tensor(A.rows(), A.cols(), up.data[0]));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(Var a) {
  const Tensor& A = a.value();
  Tensor out(1, A.cols(), 0.0);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.data[c] += A(r, c);
  return a.graph->push(std::move(out), {a}, [a](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    Tensor ga(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) ga(r, c) = up.data[c];
    g.accumulate(a, ga);
  });
}

Var sum_cols(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), 1, 0.0);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.data[r] += A(r, c);
  return a.graph->push(std::move(out), {a}, [a](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    Tensor ga(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) ga(r, c) = up.data[r];
    g.accumulate(a, ga);
  });
}

Var logsumexp_cols(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < A.cols(); ++c) mx = std::max(mx, A(r, c));
    if (!std::isfinite(mx)) {
      out.data[r] = mx;
      continue;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < A.cols(); ++c) s += std::exp(A(r, c) - mx);
    out.data[r] = mx + std::log(s);
  }
  return a.graph->push(std::move(out), {a}, [a](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    Tensor ga(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < A.cols(); ++c) mx = std::max(mx, A(r, c));
      double s = 0.0;
      for (std::size_t c = 0; c < A.cols(); ++c) s += std::exp(A(r, c) - mx);
      for (std::size_t c = 0; c < A.cols(); ++c)
        ga(r, c) = up.data[r] * std::exp(A(r, c) - mx) / s;
    }
    g.accumulate(a, ga);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  if (begin > end || end > A.cols()) throw ConfigError("slice_cols out of range");
  const std::size_t w = end - begin;
  Tensor out(A.rows(), w);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = A(r, begin + c);
  return a.graph->push(std::move(out), {a}, [a, begin, w](const Tensor& up, Graph& g) {
    const Tensor& A = g.value(a);
    Tensor ga(A.rows(), A.cols(), 0.0);
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) = up(r, c);
    g.accumulate(a, ga);
  });
}

}  // namespace disent
