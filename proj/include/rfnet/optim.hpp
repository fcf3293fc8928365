#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

// Adam with bias correction. One (m, v) moment pair per parameter element;
// `t` counts completed steps and is part of the serialized state so a resumed
// run continues the same bias-correction schedule.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].size(), 0.0);
      v_[i].assign(params_[i].size(), 0.0);
    }
  }

  // Applies one update from the gradients currently held in the parameters'
  // grad buffers. Parameters without an allocated grad buffer are skipped.
  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Tensor& w = params_[p];
      if (!w.has_grad()) continue;
      const double* g = w.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g[i];
        v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g[i] * g[i];
        double mhat = m_[p][i] / bc1;
        double vhat = v_[p][i] / bc2;
        w.at(i) -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& moment1(std::size_t p) { return m_[p]; }
  std::vector<double>& moment2(std::size_t p) { return v_[p]; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Rescales all gradients in place so their global L2 norm does not exceed
// max_norm. Returns the pre-clipping norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const double* g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) sq += g[i] * g[i];
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      double* g = p.grad();
      for (std::size_t i = 0; i < p.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

}  // namespace rfnet
