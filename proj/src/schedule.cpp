#include "storylab/schedule.hpp"

#include <algorithm>
#include <string>

#include "storylab/error.hpp"

namespace storylab {

const char* to_string(Task task) noexcept {
  switch (task) {
    case Task::lm: return "lm";
    case Task::synthetic: return "synthetic";
    case Task::swag: return "swag";
  }
  return "?";
}

void TrainSchedule::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("schedule." + field + ": " + why);
  };
  if (warmup_iters <= 0) fail("warmup_iters", "must be positive");
  if (total_iters <= warmup_iters) fail("total_iters", "must exceed warmup_iters");
  if (!(max_lr > 0.0)) fail("max_lr", "must be positive");
  if (synth_period && *synth_period < 1) fail("synth_period", "must be >= 1 or null");
  if (rank_period && *rank_period < 1) fail("rank_period", "must be >= 1 or null");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (patience < 1) fail("patience", "must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
}

TrainSchedule TrainSchedule::with_total_iters(std::int64_t total) const {
  TrainSchedule s = *this;
  s.total_iters = total;
  s.warmup_iters = std::max<std::int64_t>(1, total / 100);
  return s;
}

double lr_at(const TrainSchedule& s, std::int64_t iter) {
  if (iter <= 0 || iter >= s.total_iters) return 0.0;
  if (iter <= s.warmup_iters) {
    return s.max_lr * (static_cast<double>(iter) / static_cast<double>(s.warmup_iters));
  }
  return s.max_lr * (static_cast<double>(s.total_iters - iter) /
                     static_cast<double>(s.total_iters - s.warmup_iters));
}

std::vector<Task> tasks_at(const TrainSchedule& s, std::int64_t iter) {
  std::vector<Task> tasks{Task::lm};
  const bool synth = s.synth_period && iter % *s.synth_period == 0;
  const bool swag = s.rank_period && iter % *s.rank_period == 0;
  if (synth && !(swag && s.swag_only_on_coincident)) tasks.push_back(Task::synthetic);
  if (swag) tasks.push_back(Task::swag);
  return tasks;
}

bool EarlyStopping::observe(double value) {
  if (!best_ || value < *best_) {
    best_ = value;
    bad_ = 0;
    return true;
  }
  ++bad_;
  return false;
}

}  // namespace storylab
