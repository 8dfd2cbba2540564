#include "storylab/trainer.hpp"

#include <cmath>
#include <map>

#include "storylab/data.hpp"
#include "storylab/error.hpp"
#include "storylab/evaluator.hpp"
#include "storylab/graph.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

class StageRunner {
 public:
  StageRunner(Model& model, const TrainingData& data, const TrainOptions& opts,
              std::optional<AdamW> optimizer, std::optional<TrainerState> state)
      : model_(model),
        data_(data),
        opts_(opts),
        sched_(opts.schedule),
        optimizer_(optimizer ? std::move(*optimizer) : AdamW(model.parameters())),
        stopping_(sched_.patience) {
    sched_.validate();
    if (opts_.stage != 1 && opts_.stage != 2) throw ConfigError("trainer: stage must be 1 or 2");
    if (opts_.stage == 1) {
      sched_.synth_period.reset();
      sched_.rank_period.reset();
    }
    if (data_.lm.empty()) throw ConfigError("trainer: no language-modeling data");
    if (sched_.synth_period && data_.synthetic.empty()) {
      throw ConfigError("stage2.synth_period: synthetic ranking data is empty; set the period to none");
    }
    if (sched_.rank_period && data_.swag.empty()) {
      throw ConfigError("stage2.rank_period: ranking data is empty; set the period to none");
    }
    if (opts_.stage == 2 && data_.valid.empty()) {
      throw ConfigError("trainer: stage 2 early stopping needs validation stories");
    }
    if (state) {
      if (state->stage != opts_.stage) {
        throw ConfigError("trainer: checkpoint is from stage " + std::to_string(state->stage) +
                          ", cannot resume stage " + std::to_string(opts_.stage));
      }
      state_ = *state;
      stopping_.restore(state_.best_val_ppl, state_.bad_evals);
      if (state_.best_val_ppl) {
        if (opts_.best_path.empty() || !std::filesystem::exists(opts_.best_path)) {
          throw ConfigError("trainer: resuming stage 2 needs the best-model checkpoint " +
                            opts_.best_path.string());
        }
        best_ = std::move(load_checkpoint(opts_.best_path).model);
      }
    } else {
      state_.stage = opts_.stage;
    }
    const std::uint64_t shuffle_seed = derive_seed(opts_.seed, "shuffle", {static_cast<std::uint64_t>(opts_.stage)});
    samplers_.emplace(Task::lm, EpochSampler(data_.lm.size(), shuffle_seed, "lm"));
    if (!data_.synthetic.empty()) {
      samplers_.emplace(Task::synthetic, EpochSampler(data_.synthetic.size(), shuffle_seed, "synthetic"));
    }
    if (!data_.swag.empty()) samplers_.emplace(Task::swag, EpochSampler(data_.swag.size(), shuffle_seed, "swag"));
  }

  TrainOutcome run() {
    TrainOutcome out;
    if (state_.finished) {
      out.state = state_;
      return out;
    }
    for (std::int64_t it = state_.iteration + 1; it <= sched_.total_iters; ++it) {
      const double lr = lr_at(sched_, it);
      for (Task task : tasks_at(sched_, it)) step(task, it, lr);
      state_.iteration = it;

      const bool last = it == sched_.total_iters;
      if (!data_.valid.empty() && (it % sched_.eval_every == 0 || last)) {
        const double ppl = validation_perplexity(model_, data_.valid);
        out.val_history.push_back(ppl);
        log({{"stage", opts_.stage}, {"iter", it}, {"task", "eval"}, {"val_ppl", ppl}});
        if (opts_.stage == 2 && observe(ppl)) {
          out.early_stopped = true;
          break;
        }
      }
      if (opts_.stop_at && it == *opts_.stop_at && !last) {
        save_checkpoint_file();
        out.state = state_;
        return out;
      }
      if (sched_.checkpoint_every > 0 && it % sched_.checkpoint_every == 0 && !last) save_checkpoint_file();
    }
    if (opts_.stage == 2 && best_) model_.copy_values_from(*best_);
    state_.finished = true;
    save_checkpoint_file();
    out.state = state_;
    return out;
  }

 private:
  // Returns true when training should stop.
  bool observe(double ppl) {
    if (stopping_.observe(ppl)) {
      state_.best_iteration = state_.iteration;
      best_ = model_.clone();
      if (!opts_.best_path.empty()) {
        save_checkpoint(opts_.best_path, model_, nullptr, state_, opts_.tokenizer_hash);
      }
    }
    state_.best_val_ppl = stopping_.best();
    state_.bad_evals = static_cast<int>(stopping_.bad_evals());
    return stopping_.should_stop();
  }

  std::int64_t step_index(Task task, std::int64_t it) const {
    switch (task) {
      case Task::lm: return it - 1;
      case Task::synthetic: return it / *sched_.synth_period - 1;
      case Task::swag: return it / *sched_.rank_period - 1;
    }
    return 0;
  }

  void step(Task task, std::int64_t it, double lr) {
    const auto batch = samplers_.at(task).batch(step_index(task, it), sched_.batch_size);
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    try {
      for (std::size_t j = 0; j < batch.size(); ++j) {
        Rng dropout = make_rng(opts_.seed, "dropout",
                               {static_cast<std::uint64_t>(opts_.stage), static_cast<std::uint64_t>(task),
                                static_cast<std::uint64_t>(it), j});
        const ForwardOptions fo{true, &dropout};
        Graph g;
        Tensor l = task == Task::lm ? lm_loss(g, model_, data_.lm[batch[j]], fo)
                   : ranking_loss(g, model_, (task == Task::swag ? data_.swag : data_.synthetic)[batch[j]],
                                  opts_.span, fo);
        loss += weight * l.item();
        g.backward(g.scale(l, weight));
      }
      if (!std::isfinite(loss)) throw NumericError("non-finite batch loss");
    } catch (const NumericError& e) {
      model_.zero_grad();
      throw NumericError(dump(task, it, lr, batch, e.what()));
    }
    optimizer_.step(model_.parameters(), lr);
    log({{"stage", opts_.stage}, {"iter", it}, {"task", to_string(task)}, {"loss", loss}, {"lr", lr}});
  }

  std::string dump(Task task, std::int64_t it, double lr, const std::vector<std::size_t>& batch,
                   const std::string& cause) {
    std::string message = "stage " + std::to_string(opts_.stage) + " iteration " + std::to_string(it) +
                          " task " + to_string(task) + " lr " + std::to_string(lr) + " batch [" +
                          join_ids(batch) + "]: " + cause;
    if (!opts_.dump_dir.empty()) {
      const auto path = opts_.dump_dir / ("nan_dump_stage" + std::to_string(opts_.stage) + "_iter" +
                                         std::to_string(it) + ".json");
      const json record{{"stage", opts_.stage}, {"iteration", it}, {"task", to_string(task)},
                        {"lr", lr},            {"batch_ids", batch}, {"cause", cause}};
      write_file(path, record.dump(2) + "\n");
      message += " (diagnostics in " + path.string() + ")";
    }
    return message;
  }

  void save_checkpoint_file() {
    if (opts_.checkpoint_path.empty()) return;
    save_checkpoint(opts_.checkpoint_path, model_, &optimizer_, state_, opts_.tokenizer_hash);
  }

  void log(const json& record) {
    if (opts_.log) opts_.log->append(record);
  }

  Model& model_;
  const TrainingData& data_;
  const TrainOptions& opts_;
  TrainSchedule sched_;
  AdamW optimizer_;
  EarlyStopping stopping_;
  TrainerState state_;
  std::optional<Model> best_;
  std::map<Task, EpochSampler> samplers_;
};

}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  file_.open(path, std::ios::app);
  if (!file_) throw IoError("cannot open metrics log " + path.string());
}

void MetricsLog::append(const json& record) {
  records_.push_back(record);
  if (file_.is_open()) {
    file_ << record.dump() << '\n';
    file_.flush();
  }
}

double validation_perplexity(const Model& model, const std::vector<ScoredSequence>& valid) {
  return subword_perplexity(ModelScorer(model), valid);
}

TrainOutcome train_stage(Model& model, const TrainingData& data, const TrainOptions& opts,
                         std::optional<AdamW> optimizer, std::optional<TrainerState> state) {
  StageRunner runner(model, data, opts, std::move(optimizer), std::move(state));
  return runner.run();
}

TrainOutcome train_stage1(Model& model, const TrainingData& data, TrainOptions opts) {
  opts.stage = 1;
  return train_stage(model, data, opts);
}

TrainOutcome train_stage2(Model& model, const TrainingData& data, TrainOptions opts) {
  opts.stage = 2;
  return train_stage(model, data, opts);
}

TrainOutcome resume_stage(Checkpoint& checkpoint, const TrainingData& data, TrainOptions opts) {
  opts.stage = checkpoint.state.stage;
  return train_stage(checkpoint.model, data, opts, checkpoint.optimizer, checkpoint.state);
}

}  // namespace storylab
