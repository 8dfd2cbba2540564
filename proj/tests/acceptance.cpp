// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Usage: acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "rigs.hpp"
#include "storylab/checkpoint.hpp"
#include "storylab/cli.hpp"
#include "storylab/error.hpp"
#include "storylab/evaluator.hpp"
#include "storylab/objectives.hpp"
#include "storylab/optimizer.hpp"
#include "storylab/sampler.hpp"
#include "toy.hpp"

using namespace storylab;
using namespace storylab::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed expectations and a few numbers worth printing.
class Verdict {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  template <class T>
  void note(const std::string& key, T value) {
    std::ostringstream os;
    os << std::setprecision(6) << value;
    notes_.push_back(key + "=" + os.str());
  }
  bool passed() const { return failures_.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : ", ") + n;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + std::string("failed: ") + f;
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

ModelSpec spec_for(const Vocab& v, std::size_t d, std::size_t layers, std::size_t T = 128) {
  ModelSpec s;
  s.vocab_size = v.size();
  s.d_model = d;
  s.n_layers = layers;
  s.n_heads = 2;
  s.d_ff = 4 * d;
  s.max_seq_len = T;
  return s;
}

std::vector<double> flat(const Model& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void overfit(Model& m, const std::vector<TokenSeq>& seqs, int epochs, double lr) {
  AdamW opt(m.parameters(), AdamConfig{0.9, 0.999, 1e-8, 0.0});
  for (int e = 0; e < epochs; ++e) {
    for (const auto& s : seqs) {
      Graph g;
      g.backward(lm_loss(g, m, s));
      opt.step(m.parameters(), lr);
    }
  }
}

void gradients(Verdict& v) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (auto& c : op_cases(1)) {
    const auto r = grad_check(c.leaves, c.f);
    worst = std::max(worst, r.max_rel_error);
    v.expect(r.max_rel_error < 1e-4, std::string("op ") + c.name);
    v.expect(r.vanishing.empty(), std::string("op ") + c.name + " has a vanishing gradient");
  }
  v.note("ops_max_rel", worst);

  const Toy toy = make_toy(2);
  Model m = Model::init(spec_for(toy.vocab, 16, 2, 32), 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : m.parameters()) {
    for (double& x : p.tensor.values()) x += n(rng);
  }
  std::vector<Tensor> leaves;
  for (auto& p : m.parameters()) leaves.push_back(p.tensor);
  auto key_biases_only = [&](const GradCheckResult& r) {
    for (std::size_t i : r.vanishing) {
      if (!m.parameters()[i].name.ends_with("attn.k.b")) return false;
    }
    return true;
  };
  const TokenSeq ids = toy.vocab.encode("Cara walked to the harbor.").token_ids;
  TokenSeq lm{toy.vocab.specials().bos};
  lm.insert(lm.end(), ids.begin(), ids.end());
  const auto r_lm = grad_check(leaves, [&](Graph& g, const std::vector<Tensor>&) { return lm_loss(g, m, lm); });
  v.expect(r_lm.max_rel_error < 1e-4, "lm loss");
  v.expect(key_biases_only(r_lm), "lm loss vanishing set");
  const RankingItem item{"Ben was lost.", {"Ben asked for help.", "Ben ate soup.", "Ben ran home.", "Ben slept."}, 0};
  const PackedRanking packed = pack_ranking_item(item, toy.vocab, 32);
  const auto r_rank =
      grad_check(leaves, [&](Graph& g, const std::vector<Tensor>&) { return ranking_loss(g, m, packed); });
  v.expect(r_rank.max_rel_error < 1e-4, "ranking loss");
  v.expect(key_biases_only(r_rank), "ranking loss vanishing set");
  v.note("lm_max_rel", r_lm.max_rel_error);
  v.note("rank_max_rel", r_rank.max_rel_error);
  const double t = seconds_since(t0);
  v.note("seconds", t);
  v.expect(t < 120.0, "runtime under 2 min");
}

void ranking_closed_forms(Verdict& v) {
  const double equal[4] = {-1.7, -1.7, -1.7, -1.7};
  const double a = ranking_loss(equal, 0);
  v.expect(std::abs(a - std::log(4.0)) <= 1e-12, "equal scores give ln 4");
  const double two[2] = {0.0, -1.0};
  const double b = ranking_loss(two, 0);
  v.expect(std::abs(b - std::log1p(std::exp(-1.0))) <= 1e-12, "[0,-1] gives ln(1+e^-1)");
  v.note("ln4_err", std::abs(a - std::log(4.0)));
  v.note("pair_err", std::abs(b - std::log1p(std::exp(-1.0))));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> lp(-7.0, -0.05), off(-30.0, 30.0);
  std::uniform_int_distribution<int> len(1, 20);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> choices(2 + static_cast<std::size_t>(trial % 3));
    for (auto& c : choices) {
      c.resize(static_cast<std::size_t>(len(rng)));
      for (double& x : c) x = lp(rng);
    }
    const double base = ranking_loss_from_log_probs(choices, 0);
    const double c = off(rng);
    for (auto& ch : choices) {
      for (double& x : ch) x += c;
    }
    worst = std::max(worst, std::abs(ranking_loss_from_log_probs(choices, 0) - base));
  }
  v.expect(worst <= 1e-9, "shift invariance");
  v.note("shift_max_err", worst);
}

void zero_parameters(Verdict& v) {
  const Toy toy = make_toy(3);
  const TrainingData data = stage2_data(toy.vocab, toy.data, toy.spec.max_seq_len);
  TrainOptions opts;
  opts.stage = 2;
  opts.schedule = quick_schedule(30);
  opts.schedule.synth_period = 3;
  opts.schedule.rank_period = 6;
  Model with = Model::init(toy.spec, 1);
  const std::size_t before = with.parameter_count();
  train_stage2(with, data, opts);
  opts.schedule.synth_period.reset();
  opts.schedule.rank_period.reset();
  Model without = Model::init(toy.spec, 1);
  train_stage2(without, data, opts);
  v.expect(with.parameter_count() == before, "count unchanged by ranking training");
  v.expect(with.parameter_count() == without.parameter_count(), "count equal with and without ranking");
  v.expect(with.parameters().size() == without.parameters().size(), "same tensors");
  v.expect(before == parameter_count(toy.spec), "matches closed form");
  v.note("params", before);
  v.note("delta", static_cast<long long>(with.parameter_count()) - static_cast<long long>(without.parameter_count()));
}

void scheduler(Verdict& v) {
  const TrainSchedule s;
  std::map<Task, int> counts;
  for (std::int64_t i = 1; i <= 90; ++i) {
    for (Task t : tasks_at(s, i)) ++counts[t];
  }
  v.expect(counts[Task::lm] == 90 && counts[Task::synthetic] == 6 && counts[Task::swag] == 3, "task counts");
  v.note("lm", counts[Task::lm]);
  v.note("synthetic", counts[Task::synthetic]);
  v.note("swag", counts[Task::swag]);
  v.expect(lr_at(s, 0) == 0.0, "lr(0)");
  v.expect(lr_at(s, 1000) == 5e-5, "lr(1000)");
  v.expect(lr_at(s, 100000) == 0.0, "lr(100000)");
  v.expect(lr_at(s, 50500) == 2.5e-5, "lr(50500)");
  bool linear = true;
  for (std::int64_t i = 1; i < 100000; ++i) {
    const double expect = i <= 1000 ? 5e-5 * (static_cast<double>(i) / 1000.0)
                                    : 5e-5 * (static_cast<double>(100000 - i) / 99000.0);
    linear &= std::abs(lr_at(s, i) - expect) <= 1e-20;
  }
  v.expect(linear, "piecewise linear");
}

void word_ppl(Verdict& v) {
  const Toy toy = make_toy(4, FixtureSizes{});
  const Model m = Model::init(spec_for(toy.vocab, 16, 1, 256), 5);
  const auto corpus = story_sequences(toy.vocab, toy.data.stories_valid, 256);
  const PerplexityStats st = perplexity_stats(ModelScorer(m), corpus);
  const double predicted =
      std::pow(st.subword_ppl(), static_cast<double>(st.subwords) / static_cast<double>(st.words));
  const double rel = std::abs(st.word_ppl() / predicted - 1.0);
  v.expect(rel <= 1e-9, "identity on fixtures");
  v.note("identity_rel_err", rel);

  const UniformScorer u(4);
  std::vector<ScoredSequence> two{{TokenSeq(9, 1), {true, false, true, false, true, false, true, false}},
                                  {TokenSeq(5, 1), {true, false, true, false}}};
  const double w = word_perplexity(u, two);
  v.expect(std::abs(w - 16.0) <= 1e-12, "uniform V=4 two-subword words");
  v.note("uniform_word_ppl", w);
}

void overfit_sanity(Verdict& v) {
  const auto t0 = Clock::now();
  FixtureSizes sizes{40, 50, 10, 10, 20, 10, 10};
  const Toy toy = make_toy(6, sizes);
  const ModelSpec spec = spec_for(toy.vocab, 32, 2, 96);
  const TrainingData data = stage1_data(toy.vocab, toy.data, spec.max_seq_len);
  v.expect(data.lm.size() == 50, "50 training sentences");
  Model m = Model::init(spec, 7);
  const double before = validation_perplexity(m, data.valid);
  TrainOptions opts;
  opts.stage = 1;
  opts.schedule = quick_schedule(150);
  opts.schedule.batch_size = 4;
  opts.seed = 7;
  train_stage1(m, data, opts);
  const double after = validation_perplexity(m, data.valid);
  v.expect(after < before, "validation ppl decreases");
  v.note("val_ppl_before", before);
  v.note("val_ppl_after", after);

  Model mem = Model::init(spec, 8);
  const ScoredSequence target = lm_sequence(toy.vocab, toy.data.books.front(), spec.max_seq_len);
  overfit(mem, {target.ids}, 300, 1e-2);
  const double ppl = subword_perplexity(ModelScorer(mem), std::span(&target, 1));
  v.expect(ppl < 1.05, "memorized ppl below 1.05");
  v.note("memorized_ppl", ppl);
  const double t = seconds_since(t0);
  v.note("seconds", t);
  v.expect(t < 600.0, "runtime under 10 min");
}

void directional(Verdict& v) {
  const auto t0 = Clock::now();
  const int n1 = 300, n2 = 600;
  double gain = 0.0, degradation = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Datasets data = Datasets::from_fixtures(make_fixtures(seed));
    const Vocab vocab = train_bpe(tokenizer_corpus(data), 256);
    const ModelSpec spec = spec_for(vocab, 32, 2, 128);
    Model base = Model::init(spec, seed);
    TrainOptions o1;
    o1.stage = 1;
    o1.seed = seed;
    o1.schedule.total_iters = n1;
    o1.schedule.warmup_iters = n1 / 10;
    o1.schedule.max_lr = 3e-3;
    o1.schedule.batch_size = 8;
    o1.schedule.eval_every = n1;
    train_stage1(base, stage1_data(vocab, data, 128), o1);

    const TrainingData d2 = stage2_data(vocab, data, 128);
    const auto held_out = pack_all(vocab, data.ranking_valid, 128);
    double acc[2], ppl[2];
    for (int aux = 0; aux < 2; ++aux) {
      Model m = base.clone();
      TrainOptions o2 = o1;
      o2.stage = 2;
      o2.schedule.total_iters = n2;
      o2.schedule.warmup_iters = n2 / 10;
      o2.schedule.eval_every = n2 / 10;
      o2.schedule.patience = 100;
      if (aux == 0) {
        o2.schedule.synth_period.reset();
        o2.schedule.rank_period.reset();
      }
      train_stage2(m, d2, o2);
      const ModelScorer scorer(m);
      acc[aux] = mc_ranking_accuracy(scorer, held_out).value();
      ppl[aux] = subword_perplexity(scorer, d2.valid);
    }
    std::cout << "  seed " << seed << ": held-out accuracy " << acc[0] << " -> " << acc[1] << ", val ppl "
              << ppl[0] << " -> " << ppl[1] << "\n";
    gain += (acc[1] - acc[0]) / 3.0;
    degradation += (ppl[1] / ppl[0] - 1.0) / 3.0;
  }
  v.expect(gain >= 0.10, "mean accuracy gain of 10 points");
  v.expect(degradation < 0.02, "validation ppl degrades under 2%");
  v.note("mean_gain", gain);
  v.note("mean_ppl_change", degradation);
  const double t = seconds_since(t0);
  v.note("seconds", t);
  v.expect(t < 1800.0, "runtime under 30 min");
}

void prompt_calibration(Verdict& v) {
  const Toy toy = make_toy(9, FixtureSizes{200, 10, 10, 10, 10, 10, 10}, 256);
  const ModelSpec spec = spec_for(toy.vocab, 32, 2, 128);

  const Model fresh = Model::init(spec, 10);
  const PromptBlindScorer blind(fresh, toy.vocab.specials().bos, toy.vocab.specials().sep);
  const Accuracy chance = prompt_ranking(blind, toy.vocab, toy.data.stories, {9, 1000, 11}, spec.max_seq_len);
  const double sigma = std::sqrt(0.1 * 0.9 / 1000.0);
  v.expect(chance.count == 1000, "1000 trials");
  v.expect(std::abs(chance.value() - 0.1) <= 3.0 * sigma, "prompt-blind accuracy within 3 sigma of 0.1");
  v.note("blind_accuracy", chance.value());

  std::vector<StoryExample> pairs;
  std::set<std::string> prompts;
  for (const auto& s : toy.data.stories) {
    if (pairs.size() < 20 && prompts.insert(s.prompt).second) pairs.push_back(s);
  }
  v.expect(pairs.size() == 20, "20 distinct pairs");
  std::vector<TokenSeq> seqs;
  for (const auto& s : story_sequences(toy.vocab, pairs, spec.max_seq_len)) seqs.push_back(s.ids);
  Model m = Model::init(spec, 12);
  overfit(m, seqs, 40, 3e-3);
  const Accuracy fit = prompt_ranking(ModelScorer(m), toy.vocab, pairs, {9, 200, 13}, spec.max_seq_len);
  v.expect(fit.value() >= 0.9, "overfit accuracy at least 0.9");
  v.note("overfit_accuracy", fit.value());
}

void sampler_contract(Verdict& v) {
  const std::vector<double> probs{0.3, 0.2, 0.15, 0.1, 0.08, 0.07, 0.05, 0.03, 0.02};
  const auto f = nucleus_filter(probs, 0.9);
  Rng rng = make_rng(5, "acceptance");
  const int n = 100000;
  std::vector<int> counts(f.size(), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_from(f, rng))];
  double worst_z = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] == 0.0) {
      v.expect(counts[i] == 0, "no draws outside the nucleus");
      continue;
    }
    worst_z = std::max(worst_z, std::abs(counts[i] - n * f[i]) / std::sqrt(n * f[i] * (1.0 - f[i])));
  }
  v.expect(worst_z <= 4.0, "frequencies within 4 sigma");
  v.note("max_z", worst_z);

  const Toy toy = make_toy(13);
  ModelSpec spec = toy.spec;
  spec.max_seq_len = 128;
  const Model fresh = Model::init(spec, 14);
  SamplerConfig cfg;
  cfg.max_new_tokens = 60;
  cfg.seed = 3;
  std::size_t checked = 0;
  bool inside = true;
  for (const auto& s : toy.data.stories) {
    const Generation g = generate(fresh, toy.vocab, cfg, s.prompt, true);
    for (const auto& step : g.steps) {
      inside &= std::find(step.nucleus.begin(), step.nucleus.end(), step.token) != step.nucleus.end();
      ++checked;
    }
  }
  v.expect(inside, "every token in its nucleus");
  v.note("instrumented_tokens", checked);

  const StoryExample ex = toy.data.stories.front();
  TokenSeq ids{toy.vocab.specials().bos};
  const auto enc = toy.vocab.encode(format_prompt_story(ex)).token_ids;
  ids.insert(ids.end(), enc.begin(), enc.end());
  ids.push_back(toy.vocab.specials().eos);
  Model mem = Model::init(spec, 15);
  overfit(mem, {ids}, 300, 1e-2);
  cfg.p = 1e-12;
  cfg.max_new_tokens = 200;
  cfg.stop_token = toy.vocab.specials().eos;
  const Generation greedy = generate(mem, toy.vocab, cfg, ex.prompt);
  v.expect(greedy.text == format_prompt_story(ex), "greedy decoding reproduces the memorized story");
}

bool same_file(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

void reproducibility(Verdict& v) {
  ScratchDir dir("storylab_acceptance_repro");
  auto args_for = [&](const std::string& name) {
    const auto root = dir.path / name;
    return std::vector<std::string>{"--data_dir", (root / "data").string(), "--out_dir", (root / "out").string(),
                                    "--seed", "31", "--model.vocab_size", "256", "--model.d_model", "16",
                                    "--model.n_layers", "1", "--model.n_heads", "2", "--model.d_ff", "64",
                                    "--model.max_seq_len", "128", "--stage1.total_iters", "40",
                                    "--stage1.batch_size", "4", "--stage1.max_lr", "3e-3", "--stage1.eval_every", "20",
                                    "--stage2.total_iters", "60", "--stage2.batch_size", "4", "--stage2.max_lr", "3e-3",
                                    "--stage2.eval_every", "15", "--stage2.synth_period", "5",
                                    "--stage2.rank_period", "10", "--eval.prompt_samples", "100",
                                    "--fixtures.stories", "80", "--fixtures.books", "80"};
  };
  for (const std::string name : {"a", "b"}) {
    for (std::vector<std::string> cmd : {std::vector<std::string>{"fixtures"}, {"tokenizer"},
                                         {"train", "--stage", "all"}, {"eval"}}) {
      auto args = args_for(name);
      args.insert(args.end(), cmd.begin(), cmd.end());
      std::ostringstream out, err;
      const int code = run_cli(args, out, err);
      v.expect(code == 0, name + " " + cmd.front() + ": " + err.str());
    }
  }
  for (const char* f : {"tokenizer.json", RunFiles::stage1, RunFiles::stage2, RunFiles::stage2_best, RunFiles::metrics,
                        RunFiles::report_json, RunFiles::report_csv}) {
    v.expect(same_file(dir.path / "a" / "out" / f, dir.path / "b" / "out" / f), std::string("identical ") + f);
  }

  const Toy toy = make_toy(17);
  const TrainingData data = stage2_data(toy.vocab, toy.data, toy.spec.max_seq_len);
  TrainOptions opts;
  opts.stage = 2;
  opts.schedule = quick_schedule(60);
  opts.schedule.synth_period = 4;
  opts.schedule.rank_period = 8;
  opts.seed = 18;
  TrainOptions full = opts, part = opts;
  full.checkpoint_path = dir.path / "full.ckpt";
  full.best_path = dir.path / "full_best.ckpt";
  part.checkpoint_path = dir.path / "part.ckpt";
  part.best_path = dir.path / "part_best.ckpt";
  part.stop_at = 27;
  Model a = Model::init(toy.spec, 19), b = Model::init(toy.spec, 19);
  train_stage(a, data, full);
  train_stage(b, data, part);
  Checkpoint ck = load_checkpoint(part.checkpoint_path);
  part.stop_at.reset();
  resume_stage(ck, data, part);
  const auto pa = flat(a), pb = flat(ck.model);
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
  v.expect(pa.size() == pb.size() && worst <= 1e-9, "resume at k matches uninterrupted run");
  v.note("resume_max_abs_diff", worst);
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient correctness", gradients},
      {2, "ranking loss closed forms", ranking_closed_forms},
      {3, "ranking adds zero parameters", zero_parameters},
      {4, "scheduler fidelity", scheduler},
      {5, "word perplexity estimator", word_ppl},
      {6, "overfit sanity", overfit_sanity},
      {7, "ranking training improves held-out accuracy", directional},
      {8, "prompt ranking calibration", prompt_calibration},
      {9, "sampler contract", sampler_contract},
      {10, "reproducibility", reproducibility},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Verdict v;
    const auto t0 = Clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    failed += !v.passed();
    std::cout << "criterion " << c.id << " " << (v.passed() ? "PASS" : "FAIL") << " " << c.name << " ("
              << v.summary() << ") [" << std::fixed << std::setprecision(1) << seconds_since(t0) << "s]"
              << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
