#include "newscap/adam.hpp"

#include <cmath>

#include "newscap/errors.hpp"

namespace newscap {

AdamState::AdamState(const std::vector<Tensor>& params, double learning_rate, double beta1,
                     double beta2, double epsilon)
    : step_count_(0),
      learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamState::apply(std::vector<Tensor>& params,
                      const std::vector<const std::vector<double>*>& grads) {
  if (params.size() != m_.size())
    throw DimensionError("adam: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(m_.size()) + " moment slots");
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<double>& g = *grads[i];
    if (g.size() != m_[i].size())
      throw DimensionError("adam: grad size " + std::to_string(g.size()) + " vs param size " +
                           std::to_string(m_[i].size()) + " at slot " + std::to_string(i));
    std::vector<double>& x = params[i].mutable_values();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      x[j] -= learning_rate_ * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

void AdamState::step(std::vector<Tensor>& params) {
  std::vector<const std::vector<double>*> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(&p.grad());
  apply(params, grads);
}

void AdamState::step_with_grads(std::vector<Tensor>& params,
                                const std::vector<std::vector<double>>& grads) {
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(grads.size());
  for (auto& g : grads) ptrs.push_back(&g);
  apply(params, ptrs);
}

void AdamState::step_with_grads(std::vector<Tensor>& params,
                                const std::vector<const std::vector<double>*>& grads) {
  apply(params, grads);
}

}  // namespace newscap
