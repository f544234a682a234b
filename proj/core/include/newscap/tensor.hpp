#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "newscap/errors.hpp"

namespace newscap {

namespace detail {
struct Node;
}

// Dense 64-bit float tensor with reverse-mode autodiff. A Tensor is a
// cheap handle onto a graph node; the graph is rebuilt on every forward
// pass (define-by-run). Gradients accumulate with += until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // i.i.d. N(0, stddev^2) entries drawn from rng in row-major order.
  static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rank() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only
  bool requires_grad() const;
  std::uint64_t node_id() const;

  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // leaf updates (optimizer, tests)
  const std::vector<double>& grad() const;
  void zero_grad();
  double item() const;  // scalar tensors
  double at(std::size_t r, std::size_t c) const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise / shape ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& bias); // [m x n] + [n]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);        // [m x k] * [k x n]
Tensor transpose(const Tensor& a);
Tensor concat_last_axis(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);   // stack along axis 0
Tensor col_slice(const Tensor& a, std::size_t c0, std::size_t c1);  // [m x (c1-c0))
Tensor row_slice(const Tensor& a, std::size_t r0, std::size_t r1);  // [(r1-r0) x n]
Tensor take_row(const Tensor& a, std::size_t r);        // [1 x n]
Tensor sum(const Tensor& a);                            // -> scalar
Tensor mean_all(const Tensor& a);                       // -> scalar
Tensor mean_rows(const Tensor& a);                      // [m x n] -> [1 x n]

// ---- nonlinearities ------------------------------------------------------

Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor relu(const Tensor& a);

// axis = 0: softmax down each column; axis = 1: across each row.
// Rank-1 tensors use axis 0. Max-subtracted for stability.
Tensor softmax(const Tensor& a, int axis = 1);

// Per-row normalization with learned gain/bias ([n] each).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// rows of table ([V x d]) selected by ids; gradient scatters into table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// Inverted dropout. Identity when rate == 0 or !training.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool training);

// ---- losses --------------------------------------------------------------

// Mean of -log softmax(logits)[target] over positions whose target is not
// ignore_index. logits: [L x K].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index = -1);

// Mean over entries of -[t log p + (1-t) log(1-p)], p clamped to
// [1e-7, 1-1e-7]. probs and targets share shape.
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets);

// ---- attention -----------------------------------------------------------

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d x d]
  Tensor bq, bk, bv, bo;  // [d]

  static AttentionParams init(std::size_t d, std::mt19937_64& rng);
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", wq); fn(prefix + ".bq", bq);
    fn(prefix + ".wk", wk); fn(prefix + ".bk", bk);
    fn(prefix + ".wv", wv); fn(prefix + ".bv", bv);
    fn(prefix + ".wo", wo); fn(prefix + ".bo", bo);
  }
};

// Scaled dot-product attention with num_heads heads over the feature axis,
// concatenated and projected. queries_in: [L_q x d], keys_values_in: [L_k x d].
// With causal_mask, query position i attends only to key positions <= i.
Tensor multi_head_attention(const Tensor& queries_in, const Tensor& keys_values_in,
                            const AttentionParams& params, std::size_t num_heads,
                            bool causal_mask);

// ---- graph ---------------------------------------------------------------

// Populates grads of every requires_grad tensor reachable from loss.
// loss must be scalar. Repeated calls without zero_grad accumulate.
void backward(const Tensor& loss);

// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace newscap
