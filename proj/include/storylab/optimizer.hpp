#pragma once

#include <cstdint>
#include <vector>

#include "storylab/model.hpp"

namespace storylab {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW) decay, applied to matrices only; biases and norm gains
  // are never decayed.
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(const std::vector<NamedParameter>& params, AdamConfig config = {});

  /// One bias-corrected Adam update at learning rate lr, then resets every
  /// parameter gradient to zero.
  void step(std::vector<NamedParameter>& params, double lr);

  std::int64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

  void restore(std::int64_t steps, std::vector<std::vector<double>> first,
               std::vector<std::vector<double>> second);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace storylab
