#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "twoview/nets.hpp"

namespace twoview {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments live in T; the update is computed in double.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), T(0));
      v_.emplace_back(p->value.size(), T(0));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      if (p.grad.size() != p.value.size()) continue;  // never reached by backward
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double mi = config_.beta1 * static_cast<double>(m[i]) + (1.0 - config_.beta1) * g;
        const double vi = config_.beta2 * static_cast<double>(v[i]) + (1.0 - config_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = config_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t t_ = 0;
};

}  // namespace twoview
