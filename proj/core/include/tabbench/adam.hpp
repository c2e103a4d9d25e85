#pragma once

#include <vector>

#include "tabbench/tensor.hpp"

namespace tabbench {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated shape-congruent
// with their parameters at construction; the step counter increases by one
// per update.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  // Requires every parameter to hold a populated gradient. Clears gradients
  // after applying the update.
  void step();

  void zero_grad();
  int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<double>& first_moment(size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  int64_t step_count_ = 0;
};

}  // namespace tabbench
