#pragma once

#include <cstdint>
#include <vector>

#include "newscap/tensor.hpp"

namespace newscap {

// Bias-corrected Adam over a fixed list of parameter tensors. Moments are
// zero-initialized and keyed by position, so the parameter list must be
// stable across steps.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<Tensor>& params, double learning_rate = 1e-3,
                     double beta1 = 0.9, double beta2 = 0.98, double epsilon = 1e-6);

  // Applies one update from each parameter's accumulated grad, then
  // leaves grads untouched (callers zero them).
  void step(std::vector<Tensor>& params);

  // Same update but with explicit gradient buffers (one per parameter),
  // for hand-computed gradients.
  void step_with_grads(std::vector<Tensor>& params,
                       const std::vector<std::vector<double>>& grads);
  void step_with_grads(std::vector<Tensor>& params,
                       const std::vector<const std::vector<double>*>& grads);

  std::uint64_t step_count() const { return step_count_; }
  double learning_rate() const { return learning_rate_; }
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double epsilon() const { return epsilon_; }

  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  void apply(std::vector<Tensor>& params,
             const std::vector<const std::vector<double>*>& grads);

  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_count_ = 0;
  double learning_rate_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.98;
  double epsilon_ = 1e-6;
};

}  // namespace newscap
