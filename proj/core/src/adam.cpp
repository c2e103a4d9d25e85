#include "tabbench/adam.hpp"

#include <cmath>

namespace tabbench {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0 || cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1 ||
      cfg_.epsilon <= 0)
    throw ConfigError("Adam: invalid hyperparameters");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.defined() || !p.requires_grad())
      throw ConfigError("Adam: parameters must be defined and require grad");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) throw Error("Adam::step: missing gradient on parameter");
    const auto& g = params_[i].grad();
    auto& val = params_[i].mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < val.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      if (!std::isfinite(upd)) throw DivergenceError("Adam::step: non-finite update");
      val[j] -= upd;
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

}  // namespace tabbench
