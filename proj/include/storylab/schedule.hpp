#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace storylab {

enum class Task { lm, synthetic, swag };

const char* to_string(Task task) noexcept;

/// Learning-rate curve and task alternation for one training stage.
struct TrainSchedule {
  std::int64_t warmup_iters = 1000;
  double max_lr = 5e-5;
  std::int64_t total_iters = 100000;
  // nullopt disables the auxiliary task.
  std::optional<std::int64_t> synth_period = 15;
  std::optional<std::int64_t> rank_period = 30;
  std::size_t batch_size = 16;
  std::int64_t eval_every = 500;
  std::int64_t patience = 3;
  // 0 means only at the end of the stage.
  std::int64_t checkpoint_every = 0;
  // On iterations that are multiples of both periods, run only the swag step.
  bool swag_only_on_coincident = false;

  void validate() const;

  // Overrides total_iters and rescales warmup to keep the 1:99 split.
  TrainSchedule with_total_iters(std::int64_t total) const;

  bool operator==(const TrainSchedule&) const = default;
};

/// Triangular schedule: 0 -> max_lr over [0, warmup], max_lr -> 0 over
/// [warmup, total], then 0.
double lr_at(const TrainSchedule& schedule, std::int64_t iter);

/// Ordered tasks for 1-based iteration `iter`: always lm, then synthetic and
/// swag at their periods.
std::vector<Task> tasks_at(const TrainSchedule& schedule, std::int64_t iter);

/// Patience-based stopping on a lower-is-better metric.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::int64_t patience) : patience_(patience) {}

  // Returns true when the value is a new best.
  bool observe(double value);
  bool should_stop() const noexcept { return bad_ >= patience_; }
  std::optional<double> best() const noexcept { return best_; }
  std::int64_t bad_evals() const noexcept { return bad_; }
  void restore(std::optional<double> best, std::int64_t bad) {
    best_ = best;
    bad_ = bad;
  }

 private:
  std::int64_t patience_;
  std::optional<double> best_;
  std::int64_t bad_ = 0;
};

}  // namespace storylab
