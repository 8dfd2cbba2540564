#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "storylab/checkpoint.hpp"
#include "storylab/model.hpp"
#include "storylab/objectives.hpp"
#include "storylab/optimizer.hpp"
#include "storylab/schedule.hpp"
#include "storylab/types.hpp"

namespace storylab {

/// JSON-lines metrics: one record per optimizer step
/// {stage, iter, task, loss, lr} and per validation {stage, iter, task:"eval", val_ppl}.
class MetricsLog {
 public:
  MetricsLog() = default;
  // Appends to the file as records arrive.
  explicit MetricsLog(const std::filesystem::path& path);

  void append(const nlohmann::json& record);
  const std::vector<nlohmann::json>& records() const noexcept { return records_; }

 private:
  std::vector<nlohmann::json> records_;
  std::ofstream file_;
};

struct TrainingData {
  std::vector<TokenSeq> lm;
  std::vector<ScoredSequence> valid;
  std::vector<PackedRanking> synthetic;
  std::vector<PackedRanking> swag;
};

struct TrainOptions {
  // 1: language modeling only. 2: multi-task alternation with early stopping
  // on validation perplexity.
  int stage = 1;
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  ScoreSpan span;
  std::filesystem::path checkpoint_path;  // empty: no checkpoint files
  std::filesystem::path best_path;        // stage 2 best model; empty: memory only
  std::filesystem::path dump_dir;         // where a non-finite loss leaves its diagnostics
  std::string tokenizer_hash;
  // Stop (resumably) after this iteration.
  std::optional<std::int64_t> stop_at;
  MetricsLog* log = nullptr;
};

struct TrainOutcome {
  TrainerState state;
  bool early_stopped = false;
  std::vector<double> val_history;
};

/// Runs one stage. The model is updated in place; `optimizer` and `state`
/// carry over from a checkpoint when resuming (pass nullopt to start fresh).
/// Stage 2 leaves the best validated parameters in the model.
TrainOutcome train_stage(Model& model, const TrainingData& data, const TrainOptions& opts,
                         std::optional<AdamW> optimizer = std::nullopt,
                         std::optional<TrainerState> state = std::nullopt);

TrainOutcome train_stage1(Model& model, const TrainingData& data, TrainOptions opts);
TrainOutcome train_stage2(Model& model, const TrainingData& data, TrainOptions opts);

/// Continues a stage from a checkpoint written by train_stage.
TrainOutcome resume_stage(Checkpoint& checkpoint, const TrainingData& data, TrainOptions opts);

/// Validation subword perplexity used for early stopping.
double validation_perplexity(const Model& model, const std::vector<ScoredSequence>& valid);

}  // namespace storylab
