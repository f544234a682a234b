#include "newscap/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace newscap {

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values once touched
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grad.
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::shared_ptr<Node> make_node(std::vector<std::size_t> shape, std::vector<double> values) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->id = g_next_id.fetch_add(1);
  return node;
}

}  // namespace
}  // namespace detail

using detail::Node;

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {

Node& deref(const Tensor& t) {
  if (!t.defined()) throw ContractError("tensor: use of undefined tensor");
  return *t.node();
}

Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

// Builds the result node of an op; requires_grad is inherited from parents.
Tensor make_result(std::vector<std::size_t> shape, std::vector<double> values,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = detail::make_node(std::move(shape), std::move(values));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return wrap(node);
}

void check_rank2(const Node& n, const char* op) {
  if (n.shape.size() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(n.shape));
}

}  // namespace

// ---- Tensor basics --------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = detail::shape_product(shape);
  auto node = detail::make_node(std::move(shape), std::vector<double>(n, 0.0));
  node->requires_grad = requires_grad;
  return wrap(node);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::size_t n = detail::shape_product(shape);
  auto node = detail::make_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return wrap(node);
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (detail::shape_product(shape) != values.size())
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  auto node = detail::make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return wrap(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  std::size_t n = detail::shape_product(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(n);
  for (double& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return deref(*this).shape; }
std::size_t Tensor::size() const { return deref(*this).values.size(); }
std::size_t Tensor::rank() const { return deref(*this).shape.size(); }

std::size_t Tensor::rows() const {
  check_rank2(deref(*this), "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  check_rank2(deref(*this), "cols");
  return shape()[1];
}

bool Tensor::requires_grad() const { return deref(*this).requires_grad; }
std::uint64_t Tensor::node_id() const { return deref(*this).id; }

const std::vector<double>& Tensor::values() const { return deref(*this).values; }
std::vector<double>& Tensor::mutable_values() { return deref(*this).values; }

const std::vector<double>& Tensor::grad() const {
  Node& n = deref(*this);
  n.ensure_grad();
  return n.grad;
}

void Tensor::zero_grad() {
  Node& n = deref(*this);
  n.grad.assign(n.values.size(), 0.0);
}

double Tensor::item() const {
  const Node& n = deref(*this);
  if (n.values.size() != 1)
    throw ContractError("item: tensor has " + std::to_string(n.values.size()) + " elements");
  return n.values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const Node& n = deref(*this);
  check_rank2(n, "at");
  return n.values[r * n.shape[1] + c];
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Node& na = deref(a);
  Node& nb = deref(b);
  if (na.shape != nb.shape)
    throw DimensionError("add: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] + nb.values[i];
  return make_result(na.shape, std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  Node& na = deref(a);
  Node& nb = deref(bias);
  check_rank2(na, "add_rowvec");
  if (nb.shape.size() != 1 || nb.shape[0] != na.shape[1])
    throw DimensionError("add_rowvec: bias " + shape_str(nb.shape) + " does not match " +
                         shape_str(na.shape));
  std::size_t m = na.shape[0], n = na.shape[1];
  std::vector<double> out(na.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = na.values[r * n + c] + nb.values[c];
  return make_result(na.shape, std::move(out), {a.node(), bias.node()}, [m, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) pb->grad[c] += self.grad[r * n + c];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Node& na = deref(a);
  Node& nb = deref(b);
  if (na.shape != nb.shape)
    throw DimensionError("sub: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] - nb.values[i];
  return make_result(na.shape, std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Node& na = deref(a);
  Node& nb = deref(b);
  if (na.shape != nb.shape)
    throw DimensionError("mul: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * nb.values[i];
  return make_result(na.shape, std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->values[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  Node& na = deref(a);
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * c;
  return make_result(na.shape, std::move(out), {a.node()}, [c](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
  });
}

// ---- matmul / shape -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Node& na = deref(a);
  Node& nb = deref(b);
  check_rank2(na, "matmul");
  check_rank2(nb, "matmul");
  if (na.shape[1] != nb.shape[0])
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  std::size_t m = na.shape[0], k = na.shape[1], n = nb.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = na.values[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &nb.values[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &self.grad[i * n];
          const double* brow = &pb->values[p * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa->grad[i * k + p] += acc;
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &pa->values[i * k];
        const double* grow = &self.grad[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          double av = arow[p];
          if (av == 0.0) continue;
          double* brow = &pb->grad[p * n];
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  Node& na = deref(a);
  check_rank2(na, "transpose");
  std::size_t m = na.shape[0], n = na.shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = na.values[i * n + j];
  return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_last_axis: no inputs");
  std::size_t m = deref(parts[0]).shape[0];
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& t : parts) {
    Node& n = deref(t);
    check_rank2(n, "concat_last_axis");
    if (n.shape[0] != m)
      throw DimensionError("concat_last_axis: row mismatch " + shape_str(n.shape));
    total += n.shape[1];
    parents.push_back(t.node());
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& t : parts) {
    Node& n = deref(t);
    std::size_t w = n.shape[1];
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(&n.values[r * w], w, &out[r * total + off]);
    off += w;
  }
  return make_result({m, total}, std::move(out), std::move(parents), [m, total](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      std::size_t w = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c)
            p->grad[r * w + c] += self.grad[r * total + off + c];
      }
      off += w;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  std::size_t n = deref(parts[0]).shape[1];
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& t : parts) {
    Node& nd = deref(t);
    check_rank2(nd, "concat_rows");
    if (nd.shape[1] != n)
      throw DimensionError("concat_rows: column mismatch " + shape_str(nd.shape));
    total += nd.shape[0];
    parents.push_back(t.node());
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& t : parts) {
    const auto& vals = deref(t).values;
    out.insert(out.end(), vals.begin(), vals.end());
  }
  return make_result({total, n}, std::move(out), std::move(parents), [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      std::size_t count = p->values.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < count; ++i) p->grad[i] += self.grad[off + i];
      }
      off += count;
    }
  });
}

Tensor row_slice(const Tensor& a, std::size_t r0, std::size_t r1) {
  Node& na = deref(a);
  check_rank2(na, "row_slice");
  std::size_t m = na.shape[0], n = na.shape[1];
  if (r0 >= r1 || r1 > m)
    throw IndexError("row_slice: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") out of " + std::to_string(m) + " rows");
  std::vector<double> out(&na.values[r0 * n], &na.values[r1 * n]);
  return make_result({r1 - r0, n}, std::move(out), {a.node()}, [r0, n](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[r0 * n + i] += self.grad[i];
  });
}

Tensor col_slice(const Tensor& a, std::size_t c0, std::size_t c1) {
  Node& na = deref(a);
  check_rank2(na, "col_slice");
  std::size_t m = na.shape[0], n = na.shape[1];
  if (c0 >= c1 || c1 > n)
    throw IndexError("col_slice: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of " + std::to_string(n) + " columns");
  std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(&na.values[r * n + c0], w, &out[r * w]);
  return make_result({m, w}, std::move(out), {a.node()}, [m, n, c0, w](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) p->grad[r * n + c0 + c] += self.grad[r * w + c];
  });
}

Tensor take_row(const Tensor& a, std::size_t r) {
  Node& na = deref(a);
  check_rank2(na, "take_row");
  std::size_t m = na.shape[0], n = na.shape[1];
  if (r >= m) throw IndexError("take_row: row " + std::to_string(r) + " out of " + std::to_string(m));
  std::vector<double> out(&na.values[r * n], &na.values[(r + 1) * n]);
  return make_result({1, n}, std::move(out), {a.node()}, [r, n](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t c = 0; c < n; ++c) p->grad[r * n + c] += self.grad[c];
  });
}

Tensor sum(const Tensor& a) {
  Node& na = deref(a);
  double total = std::accumulate(na.values.begin(), na.values.end(), 0.0);
  return make_result({}, {total}, {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (double& g : p->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  Node& na = deref(a);
  if (na.values.empty()) throw ContractError("mean_all: empty tensor");
  double total = std::accumulate(na.values.begin(), na.values.end(), 0.0);
  double inv = 1.0 / static_cast<double>(na.values.size());
  return make_result({}, {total * inv}, {a.node()}, [inv](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (double& g : p->grad) g += self.grad[0] * inv;
  });
}

Tensor mean_rows(const Tensor& a) {
  Node& na = deref(a);
  check_rank2(na, "mean_rows");
  std::size_t m = na.shape[0], n = na.shape[1];
  if (m == 0) throw ContractError("mean_rows: zero rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += na.values[r * n + c];
  double inv = 1.0 / static_cast<double>(m);
  for (double& v : out) v *= inv;
  return make_result({1, n}, std::move(out), {a.node()}, [m, n, inv](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) p->grad[r * n + c] += self.grad[c] * inv;
  });
}

// ---- nonlinearities -------------------------------------------------------

Tensor sigmoid(const Tensor& a) {
  Node& na = deref(a);
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = na.values[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_result(na.shape, std::move(out), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double s = self.values[i];
      p->grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor gelu(const Tensor& a) {
  Node& na = deref(a);
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = na.values[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_result(na.shape, std::move(out), {a.node()}, [kInvSqrt2, kInvSqrt2Pi](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double x = p->values[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      p->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor relu(const Tensor& a) {
  Node& na = deref(a);
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] > 0 ? na.values[i] : 0.0;
  return make_result(na.shape, std::move(out), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->values[i] > 0) p->grad[i] += self.grad[i];
  });
}

namespace {

// softmax over contiguous slices of length `len`, `count` of them, with
// stride handling folded in by the callers below.
void softmax_slice(const double* in, double* out, std::size_t len, std::size_t stride) {
  double mx = in[0];
  for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[i * stride]);
  double denom = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    double e = std::exp(in[i * stride] - mx);
    out[i * stride] = e;
    denom += e;
  }
  double inv = 1.0 / denom;
  for (std::size_t i = 0; i < len; ++i) out[i * stride] *= inv;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  Node& na = deref(a);
  std::vector<double> out(na.size());
  std::size_t slice_len, slice_count, stride, base_step;
  if (na.shape.size() == 1) {
    slice_len = na.shape[0];
    slice_count = 1;
    stride = 1;
    base_step = 0;
  } else if (na.shape.size() == 2) {
    std::size_t m = na.shape[0], n = na.shape[1];
    if (axis == 1) {
      slice_len = n; slice_count = m; stride = 1; base_step = n;
    } else if (axis == 0) {
      slice_len = m; slice_count = n; stride = n; base_step = 1;
    } else {
      throw DimensionError("softmax: axis out of range for rank-2 tensor");
    }
  } else {
    throw DimensionError("softmax: rank " + std::to_string(na.shape.size()) + " unsupported");
  }
  if (slice_len == 0) throw ContractError("softmax: empty slice");
  for (std::size_t s = 0; s < slice_count; ++s)
    softmax_slice(&na.values[s * base_step], &out[s * base_step], slice_len, stride);
  return make_result(na.shape, std::move(out), {a.node()},
                     [slice_len, slice_count, stride, base_step](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    // dx_i = y_i * (dy_i - sum_j dy_j y_j)
    for (std::size_t s = 0; s < slice_count; ++s) {
      const double* y = &self.values[s * base_step];
      const double* dy = &self.grad[s * base_step];
      double dot = 0.0;
      for (std::size_t i = 0; i < slice_len; ++i) dot += dy[i * stride] * y[i * stride];
      double* dx = &p->grad[s * base_step];
      for (std::size_t i = 0; i < slice_len; ++i)
        dx[i * stride] += y[i * stride] * (dy[i * stride] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  Node& nx = deref(x);
  Node& ng = deref(gain);
  Node& nb = deref(bias);
  check_rank2(nx, "layer_norm");
  std::size_t m = nx.shape[0], n = nx.shape[1];
  if (ng.shape != std::vector<std::size_t>{n} || nb.shape != std::vector<std::size_t>{n})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
  std::vector<double> out(m * n);
  std::vector<double> inv_std(m), means(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = &nx.values[r * n];
    double mean = std::accumulate(row, row + n, 0.0) / n;
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= n;
    double istd = 1.0 / std::sqrt(var + epsilon);
    means[r] = mean;
    inv_std[r] = istd;
    for (std::size_t c = 0; c < n; ++c)
      out[r * n + c] = (row[c] - mean) * istd * ng.values[c] + nb.values[c];
  }
  return make_result({m, n}, std::move(out), {x.node(), gain.node(), bias.node()},
                     [m, n, means, inv_std](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    for (std::size_t r = 0; r < m; ++r) {
      const double* xrow = &px->values[r * n];
      const double* grow = &self.grad[r * n];
      double istd = inv_std[r], mean = means[r];
      if (pg->requires_grad || pb->requires_grad) {
        pg->ensure_grad();
        pb->ensure_grad();
        for (std::size_t c = 0; c < n; ++c) {
          double xhat = (xrow[c] - mean) * istd;
          pg->grad[c] += grow[c] * xhat;
          pb->grad[c] += grow[c];
        }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        // d xhat_c = g_c * gain_c ; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          double xhat = (xrow[c] - mean) * istd;
          double dxh = grow[c] * pg->values[c];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xhat;
        }
        double invn = 1.0 / n;
        for (std::size_t c = 0; c < n; ++c) {
          double xhat = (xrow[c] - mean) * istd;
          double dxh = grow[c] * pg->values[c];
          px->grad[r * n + c] += istd * (dxh - invn * sum_dxh - xhat * invn * sum_dxh_xh);
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_rowvec(matmul(x, weight), bias);
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  Node& nt = deref(table);
  check_rank2(nt, "embedding_lookup");
  std::size_t v = nt.shape[0], d = nt.shape[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " out of " +
                       std::to_string(v));
    std::copy_n(&nt.values[static_cast<std::size_t>(id) * d], d, &out[i * d]);
  }
  return make_result({ids.size(), d}, std::move(out), {table.node()}, [ids, d](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* trow = &p->grad[static_cast<std::size_t>(ids[i]) * d];
      const double* grow = &self.grad[i * d];
      for (std::size_t c = 0; c < d; ++c) trow[c] += grow[c];
    }
  });
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  Node& na = deref(a);
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(na.size());
  double inv_keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = keep(rng) ? inv_keep : 0.0;
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * mask[i];
  return make_result(na.shape, std::move(out), {a.node()}, [mask](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * mask[i];
  });
}

// ---- losses ----------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  Node& nl = deref(logits);
  check_rank2(nl, "cross_entropy");
  std::size_t L = nl.shape[0], K = nl.shape[1];
  if (targets.size() != L)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(L) + " rows");
  std::size_t used = 0;
  double total = 0.0;
  std::vector<double> log_probs(L * K);
  for (std::size_t r = 0; r < L; ++r) {
    int t = targets[r];
    const double* row = &nl.values[r * K];
    double mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t c = 0; c < K; ++c) denom += std::exp(row[c] - mx);
    double log_denom = mx + std::log(denom);
    for (std::size_t c = 0; c < K; ++c) log_probs[r * K + c] = row[c] - log_denom;
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= K)
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of " +
                       std::to_string(K));
    total -= log_probs[r * K + static_cast<std::size_t>(t)];
    ++used;
  }
  if (used == 0) throw ContractError("cross_entropy: all targets ignored");
  double loss = total / static_cast<double>(used);
  return make_result({}, {loss}, {logits.node()},
                     [targets, ignore_index, L, K, used, log_probs](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    double g = self.grad[0] / static_cast<double>(used);
    for (std::size_t r = 0; r < L; ++r) {
      int t = targets[r];
      if (t == ignore_index) continue;
      for (std::size_t c = 0; c < K; ++c) {
        double soft = std::exp(log_probs[r * K + c]);
        double ind = (static_cast<std::size_t>(t) == c) ? 1.0 : 0.0;
        p->grad[r * K + c] += g * (soft - ind);
      }
    }
  });
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets) {
  Node& np = deref(probs);
  Node& nt = deref(targets);
  if (np.shape != nt.shape)
    throw DimensionError("binary_cross_entropy: shape mismatch " + shape_str(np.shape) + " vs " +
                         shape_str(nt.shape));
  constexpr double kClamp = 1e-7;
  std::size_t n = np.size();
  if (n == 0) throw ContractError("binary_cross_entropy: empty input");
  double total = 0.0;
  std::vector<double> clamped(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = std::clamp(np.values[i], kClamp, 1.0 - kClamp);
    clamped[i] = p;
    double t = nt.values[i];
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  double inv = 1.0 / static_cast<double>(n);
  return make_result({}, {total * inv}, {probs.node(), targets.node()},
                     [clamped, inv](Node& self) {
    auto& pp = self.parents[0];
    auto& pt = self.parents[1];
    if (!pp->requires_grad) return;
    pp->ensure_grad();
    double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < clamped.size(); ++i) {
      double p = clamped[i];
      double t = pt->values[i];
      bool saturated = pp->values[i] != p;  // clamp active -> zero slope
      if (!saturated) pp->grad[i] += g * (p - t) / (p * (1.0 - p));
    }
  });
}

// ---- attention --------------------------------------------------------------

AttentionParams AttentionParams::init(std::size_t d, std::mt19937_64& rng) {
  AttentionParams p;
  p.wq = glorot(d, d, rng);
  p.wk = glorot(d, d, rng);
  p.wv = glorot(d, d, rng);
  p.wo = glorot(d, d, rng);
  p.bq = Tensor::zeros({d}, true);
  p.bk = Tensor::zeros({d}, true);
  p.bv = Tensor::zeros({d}, true);
  p.bo = Tensor::zeros({d}, true);
  return p;
}

namespace {

// Additive mask: 0 where allowed, large negative where blocked. exp()
// underflows the blocked entries to exactly zero after max-subtraction.
Tensor causal_bias(std::size_t lq, std::size_t lk) {
  std::vector<double> vals(lq * lk, 0.0);
  for (std::size_t i = 0; i < lq; ++i)
    for (std::size_t j = 0; j < lk; ++j)
      if (j > i) vals[i * lk + j] = -1e9;
  return Tensor::from({lq, lk}, std::move(vals));
}

}  // namespace

Tensor multi_head_attention(const Tensor& queries_in, const Tensor& keys_values_in,
                            const AttentionParams& params, std::size_t num_heads,
                            bool causal_mask) {
  Node& nq = deref(queries_in);
  Node& nk = deref(keys_values_in);
  check_rank2(nq, "multi_head_attention");
  check_rank2(nk, "multi_head_attention");
  std::size_t d = nq.shape[1];
  if (nk.shape[1] != d)
    throw DimensionError("multi_head_attention: feature width mismatch " + shape_str(nq.shape) +
                         " vs " + shape_str(nk.shape));
  if (num_heads == 0 || d % num_heads != 0)
    throw ConfigError("multi_head_attention: d=" + std::to_string(d) +
                      " not divisible by num_heads=" + std::to_string(num_heads));
  std::size_t dh = d / num_heads;
  std::size_t lq = nq.shape[0], lk = nk.shape[0];

  Tensor q = linear(queries_in, params.wq, params.bq);
  Tensor k = linear(keys_values_in, params.wk, params.bk);
  Tensor v = linear(keys_values_in, params.wv, params.bv);

  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor bias;
  if (causal_mask) bias = causal_bias(lq, lk);

  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    Tensor qh = col_slice(q, h * dh, (h + 1) * dh);
    Tensor kh = col_slice(k, h * dh, (h + 1) * dh);
    Tensor vh = col_slice(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    if (causal_mask) scores = add(scores, bias);
    Tensor weights = softmax(scores, 1);
    heads.push_back(matmul(weights, vh));
  }
  Tensor merged = num_heads == 1 ? heads[0] : concat_last_axis(heads);
  return linear(merged, params.wo, params.bo);
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  Node& root = deref(loss);
  if (root.values.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(root.shape));

  // Iterative post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(fan_in * fan_out);
  for (double& v : values) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(values), true);
}

}  // namespace newscap
