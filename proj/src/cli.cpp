#include "storylab/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "storylab/checkpoint.hpp"
#include "storylab/error.hpp"
#include "storylab/pipeline.hpp"
#include "storylab/sampler.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kExitConfig;
    case ErrorKind::data: return kExitData;
    case ErrorKind::numeric: return kExitNumeric;
    default: return kExitOther;
  }
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

Vocab load_vocab(const RunConfig& cfg) {
  const auto path = cfg.tokenizer_path();
  if (!std::filesystem::exists(path)) {
    throw ConfigError("tokenizer not found: " + path.string() + " (run 'storylab tokenizer' first)");
  }
  return Vocab::load(path);
}

ModelSpec spec_for(const RunConfig& cfg, const Vocab& vocab) {
  if (vocab.size() != cfg.model.vocab_size) {
    throw ConfigError("model.vocab_size: " + std::to_string(cfg.model.vocab_size) +
                      " does not match the tokenizer's " + std::to_string(vocab.size()) + " pieces");
  }
  return cfg.model;
}

Checkpoint load_matching(const std::filesystem::path& path, const Vocab& vocab) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.tokenizer_hash != vocab.hash()) {
    throw ConfigError("checkpoint " + path.string() + " was trained with a different tokenizer");
  }
  return ck;
}

struct Session {
  RunConfig cfg;
  std::ostream& out;
};

void cmd_fixtures(const Session& s) {
  write_fixtures(s.cfg.data_dir, make_fixtures(s.cfg.seed, s.cfg.fixtures));
  s.out << "wrote fixtures to " << s.cfg.data_dir << "\n";
}

void cmd_tokenizer(const Session& s) {
  const Datasets data = Datasets::load(s.cfg);
  const Vocab vocab = train_bpe(tokenizer_corpus(data), s.cfg.model.vocab_size);
  vocab.save(s.cfg.tokenizer_path());
  s.out << "tokenizer " << s.cfg.tokenizer_path().string() << " size " << vocab.size() << " hash "
        << vocab.hash() << "\n";
}

void run_stage(const Session& s, int stage, bool from_scratch, bool resume, const Vocab& vocab,
               const Datasets& data, MetricsLog& log) {
  const RunConfig& cfg = s.cfg;
  const auto ckpt = cfg.out_file(stage == 1 ? RunFiles::stage1 : RunFiles::stage2);
  TrainOptions opts;
  opts.stage = stage;
  opts.schedule = stage == 1 ? cfg.stage1 : cfg.stage2;
  opts.seed = cfg.seed;
  opts.span = {cfg.include_context};
  opts.checkpoint_path = ckpt;
  opts.best_path = stage == 2 ? cfg.out_file(RunFiles::stage2_best) : std::filesystem::path{};
  opts.dump_dir = cfg.out_dir;
  opts.tokenizer_hash = vocab.hash();
  opts.log = &log;
  const std::size_t T = cfg.model.max_seq_len;
  const TrainingData td = stage == 1 ? stage1_data(vocab, data, T) : stage2_data(vocab, data, T);

  TrainOutcome outcome;
  if (resume && std::filesystem::exists(ckpt)) {
    Checkpoint ck = load_matching(ckpt, vocab);
    outcome = resume_stage(ck, td, opts);
  } else if (stage == 1 || from_scratch) {
    Model model = Model::init(spec_for(cfg, vocab), derive_seed(cfg.seed, "init"));
    outcome = train_stage(model, td, opts);
  } else {
    const auto prev = cfg.out_file(RunFiles::stage1);
    if (!std::filesystem::exists(prev)) {
      throw ConfigError("stage 2 needs the stage-1 checkpoint " + prev.string() +
                        " (train stage 1 first or pass --from-scratch)");
    }
    Checkpoint ck = load_matching(prev, vocab);
    outcome = train_stage(ck.model, td, opts);
  }
  s.out << "stage " << stage << " finished at iteration " << outcome.state.iteration
        << (outcome.early_stopped ? " (early stop)" : "");
  if (outcome.state.best_val_ppl) s.out << ", best validation ppl " << *outcome.state.best_val_ppl;
  s.out << "; checkpoint " << ckpt.string() << "\n";
}

void cmd_train(const Session& s, const std::string& stage, bool from_scratch, bool resume) {
  const Vocab vocab = load_vocab(s.cfg);
  const Datasets data = Datasets::load(s.cfg);
  MetricsLog log(s.cfg.out_file(RunFiles::metrics));
  if (stage == "1" || stage == "all") run_stage(s, 1, from_scratch, resume, vocab, data, log);
  if (stage == "2" || stage == "all") run_stage(s, 2, from_scratch, resume, vocab, data, log);
}

std::filesystem::path checkpoint_or_default(const RunConfig& cfg, const std::string& given) {
  const std::filesystem::path p = given.empty() ? cfg.out_file(RunFiles::stage2) : std::filesystem::path(given);
  if (!std::filesystem::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
  return p;
}

void cmd_eval(const Session& s, const std::string& checkpoint) {
  const Vocab vocab = load_vocab(s.cfg);
  const auto path = checkpoint_or_default(s.cfg, checkpoint);
  Checkpoint ck = load_matching(path, vocab);
  EvalReport report = evaluate(ck.model, vocab, Datasets::load(s.cfg), s.cfg);
  report.metadata["checkpoint"] = path.filename().string();
  report.metadata["checkpoint_hash"] = hex64(fnv1a64(read_file(path)));
  for (const char* f : {FixtureFiles::stories_valid, FixtureFiles::ranking_valid, FixtureFiles::cloze_valid}) {
    const auto p = s.cfg.data_file(f);
    if (std::filesystem::exists(p)) report.metadata["dataset_hashes"][f] = hex64(fnv1a64(read_file(p)));
  }
  const std::string text = report.to_json().dump(2) + "\n";
  write_file(s.cfg.out_file(RunFiles::report_json), text);
  write_file(s.cfg.out_file(RunFiles::report_csv), report.to_csv());
  s.out << text;
}

void cmd_sample(const Session& s, const std::string& checkpoint, const std::string& prompt,
                const std::string& prompt_file, const std::string& output, bool stop_at_eos) {
  const Vocab vocab = load_vocab(s.cfg);
  Checkpoint ck = load_matching(checkpoint_or_default(s.cfg, checkpoint), vocab);
  SamplerConfig sc = s.cfg.sampler;
  if (stop_at_eos) sc.stop_token = vocab.specials().eos;
  std::optional<std::string> p;
  if (!prompt.empty()) p = normalize_whitespace(prompt);
  if (!prompt_file.empty()) p = normalize_whitespace(read_file(prompt_file));
  const Generation gen = generate(ck.model, vocab, sc, p ? std::optional<std::string_view>(*p) : std::nullopt);
  if (output.empty()) {
    s.out << gen.text << "\n";
  } else {
    write_file(output, gen.text + "\n");
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"storylab: desk-scale story language modeling with perplexity-ranking training"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration; flags override its fields");
  std::map<std::string, std::string> overrides;
  for (const ConfigField& f : config_fields()) {
    app.add_option_function<std::string>(
        "--" + f.key, [&overrides, key = f.key](const std::string& v) { overrides[key] = v; }, f.help)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  auto* fixtures = app.add_subcommand("fixtures", "generate miniature datasets into data_dir");
  auto* tokenizer = app.add_subcommand("tokenizer", "train the BPE tokenizer on data_dir");
  auto* train = app.add_subcommand("train", "run training stages");
  std::string stage = "all";
  bool from_scratch = false, resume = false;
  train->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  train->add_flag("--from-scratch", from_scratch, "start stage 2 from a fresh model");
  train->add_flag("--resume", resume, "continue from the stage checkpoint in out_dir when present");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write the report");
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file (default <out_dir>/stage2.ckpt)");
  auto* sample = app.add_subcommand("sample", "generate a story by nucleus sampling");
  std::string sample_ckpt, prompt, prompt_file, output;
  bool stop_at_eos = false;
  sample->add_option("--checkpoint", sample_ckpt, "checkpoint file (default <out_dir>/stage2.ckpt)");
  sample->add_option("--prompt", prompt, "prompt text; omitted, the model writes its own prompt");
  sample->add_option("--prompt-file", prompt_file, "read the prompt from a file")->excludes("--prompt");
  sample->add_option("--output", output, "write the text here instead of stdout");
  sample->add_flag("--stop-at-eos", stop_at_eos, "also stop when the end-of-text token is drawn");

  std::vector<const char*> argv{"storylab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[config]: " << one_line(e.what()) << "\n";
    return kExitConfig;
  }

  try {
    json doc = json::object();
    if (!config_path.empty()) doc = RunConfig::read_json(config_path);
    for (const ConfigField& f : config_fields()) {
      if (auto it = overrides.find(f.key); it != overrides.end()) apply_override(doc, f, it->second);
    }
    const Session s{RunConfig::from_json(doc), out};
    if (*fixtures) cmd_fixtures(s);
    else if (*tokenizer) cmd_tokenizer(s);
    else if (*train) cmd_train(s, stage, from_scratch, resume);
    else if (*eval) cmd_eval(s, eval_ckpt);
    else if (*sample) cmd_sample(s, sample_ckpt, prompt, prompt_file, output, stop_at_eos);
    return kExitOk;
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << one_line(e.what()) << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << "\n";
    return kExitOther;
  }
}

}  // namespace storylab
