#include "storylab/optimizer.hpp"

#include <cmath>

#include "storylab/error.hpp"

namespace storylab {

AdamW::AdamW(const std::vector<NamedParameter>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void AdamW::step(std::vector<NamedParameter>& params, double lr) {
  if (params.size() != m_.size()) {
    throw ContractError("optimizer: state tracks " + std::to_string(m_.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.size() != m_[i].size()) {
      throw ContractError("optimizer: shape mismatch for " + params[i].name);
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    auto values = p.values();
    auto grad = std::as_const(p).grad();
    const bool decay = config_.weight_decay != 0.0 && p.rank() >= 2;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      if (decay) values[j] -= lr * config_.weight_decay * values[j];
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
    p.zero_grad();
  }
}

void AdamW::restore(std::int64_t steps, std::vector<std::vector<double>> first,
                    std::vector<std::vector<double>> second) {
  if (first.size() != m_.size() || second.size() != v_.size()) {
    throw ContractError("optimizer: restored state has the wrong parameter count");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (first[i].size() != m_[i].size() || second[i].size() != v_[i].size()) {
      throw ContractError("optimizer: restored moment has the wrong size");
    }
  }
  steps_ = steps;
  m_ = std::move(first);
  v_ = std::move(second);
}

}  // namespace storylab
