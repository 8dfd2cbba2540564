#include "storylab/config.hpp"

#include <fstream>
#include <map>
#include <set>

#include "storylab/error.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

// Reads one JSON object strictly: wrong types and leftover keys are errors.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(where(key) + "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0) {
            throw ConfigError(where(key) + "must not be negative");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(where(key) + "expected a string");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + e.what());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    if (!it->is_number_integer()) throw ConfigError(where(key) + "expected an integer or null");
    out = it->get<T>();
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(where(key) + "unknown field");
    }
  }

 private:
  std::string where(const std::string& key) const {
    std::string p = path_;
    if (!key.empty()) p += (p.empty() ? "" : ".") + key;
    return p.empty() ? std::string("config: ") : p + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_spec(Section s, ModelSpec& m) {
  s.get("vocab_size", m.vocab_size);
  s.get("d_model", m.d_model);
  s.get("n_layers", m.n_layers);
  s.get("n_heads", m.n_heads);
  s.get("d_ff", m.d_ff);
  s.get("max_seq_len", m.max_seq_len);
  s.get("tie_embeddings", m.tie_embeddings);
  s.get("dropout", m.dropout);
  s.finish();
}

void read_schedule(Section s, TrainSchedule& t) {
  s.get("total_iters", t.total_iters);
  if (s.has("total_iters") && !s.has("warmup_iters")) t = t.with_total_iters(t.total_iters);
  s.get("warmup_iters", t.warmup_iters);
  s.get("max_lr", t.max_lr);
  s.get_optional("synth_period", t.synth_period);
  s.get_optional("rank_period", t.rank_period);
  s.get("batch_size", t.batch_size);
  s.get("eval_every", t.eval_every);
  s.get("patience", t.patience);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("swag_only_on_coincident", t.swag_only_on_coincident);
  s.finish();
}

json optional_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

const std::map<std::string, std::string>& help_texts() {
  static const std::map<std::string, std::string> h{
      {"seed", "global seed; every random stream derives from it"},
      {"data_dir", "directory holding the JSONL datasets"},
      {"out_dir", "directory for tokenizer, checkpoints, metrics and reports"},
      {"tokenizer", "tokenizer JSON path (default <out_dir>/tokenizer.json)"},
      {"model.vocab_size", "tokenizer and embedding vocabulary size"},
      {"model.d_model", "residual width"},
      {"model.n_layers", "transformer blocks"},
      {"model.n_heads", "attention heads (must divide d_model)"},
      {"model.d_ff", "MLP hidden width"},
      {"model.max_seq_len", "context window; longer sequences are truncated"},
      {"model.tie_embeddings", "share the token embedding with the output projection"},
      {"model.dropout", "dropout rate during training"},
      {"include_context", "score ranking choices over context and continuation"},
      {"sampler.p", "nucleus mass"},
      {"sampler.max_new_tokens", "length cap for generated text"},
      {"sampler.temperature", "softmax temperature applied before the nucleus filter"},
      {"sampler.seed", "sampling seed"},
      {"sampler.stop_token", "token id that ends generation (none = length cap only)"},
      {"eval.n_distractors", "distractor prompts per prompt-ranking trial"},
      {"eval.prompt_samples", "prompt-ranking trials"},
      {"fixtures.stories", "training stories"},
      {"fixtures.books", "book-text lines for stage 1"},
      {"fixtures.ranking", "4-way ranking training items"},
      {"fixtures.synthetic", "human/machine training pairs"},
      {"fixtures.stories_valid", "validation stories"},
      {"fixtures.ranking_valid", "held-out 4-way ranking items"},
      {"fixtures.cloze_valid", "held-out 2-way ranking items"},
  };
  return h;
}

std::string schedule_help(const std::string& field) {
  static const std::map<std::string, std::string> h{
      {"warmup_iters", "iterations of linear warm-up"},
      {"max_lr", "peak learning rate"},
      {"total_iters", "iterations in the stage (warm-up plus decay)"},
      {"synth_period", "synthetic ranking step every N iterations (none disables)"},
      {"rank_period", "4-way ranking step every N iterations (none disables)"},
      {"batch_size", "examples per optimizer step"},
      {"eval_every", "iterations between validation perplexity checks"},
      {"patience", "non-improving validations before early stopping"},
      {"checkpoint_every", "iterations between checkpoints (0 = end only)"},
      {"swag_only_on_coincident", "skip the synthetic step when both periods fire"},
  };
  return h.at(field);
}

void flatten(const json& j, const std::string& prefix, std::vector<ConfigField>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      flatten(value, path, out);
      continue;
    }
    FieldType type = FieldType::text;
    if (value.is_boolean()) type = FieldType::boolean;
    else if (value.is_number_integer()) type = FieldType::integer;
    else if (value.is_number()) type = FieldType::real;
    if (path.ends_with("_period") || path == "sampler.stop_token") type = FieldType::optional_integer;
    std::string help;
    if (path.starts_with("stage")) {
      help = path.substr(0, 6) + " " + schedule_help(key);
    } else {
      help = help_texts().at(path);
    }
    out.push_back({path, type, help});
  }
}

}  // namespace

json model_spec_to_json(const ModelSpec& m) {
  return {{"vocab_size", m.vocab_size}, {"d_model", m.d_model},         {"n_layers", m.n_layers},
          {"n_heads", m.n_heads},       {"d_ff", m.d_ff},               {"max_seq_len", m.max_seq_len},
          {"tie_embeddings", m.tie_embeddings}, {"dropout", m.dropout}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec m;
  read_spec(Section(j, "model"), m);
  return m;
}

json schedule_to_json(const TrainSchedule& t) {
  return {{"warmup_iters", t.warmup_iters},
          {"max_lr", t.max_lr},
          {"total_iters", t.total_iters},
          {"synth_period", optional_json(t.synth_period)},
          {"rank_period", optional_json(t.rank_period)},
          {"batch_size", t.batch_size},
          {"eval_every", t.eval_every},
          {"patience", t.patience},
          {"checkpoint_every", t.checkpoint_every},
          {"swag_only_on_coincident", t.swag_only_on_coincident}};
}

TrainSchedule schedule_from_json(const json& j) {
  TrainSchedule t;
  read_schedule(Section(j, "schedule"), t);
  return t;
}

std::filesystem::path RunConfig::tokenizer_path() const {
  return tokenizer.empty() ? std::filesystem::path(out_dir) / "tokenizer.json"
                           : std::filesystem::path(tokenizer);
}

std::filesystem::path RunConfig::data_file(const char* name) const {
  return std::filesystem::path(data_dir) / name;
}

std::filesystem::path RunConfig::out_file(const std::string& name) const {
  return std::filesystem::path(out_dir) / name;
}

void RunConfig::validate() const {
  model.validate();
  auto tagged = [](const char* stage, const TrainSchedule& s) {
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(stage) + "." + std::string(e.what()).substr(9));
    }
  };
  tagged("stage1", stage1);
  tagged("stage2", stage2);
  sampler.validate();
  if (eval.prompt_samples == 0) throw ConfigError("eval.prompt_samples: must be positive");
  if (data_dir.empty()) throw ConfigError("data_dir: must not be empty");
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["data_dir"] = data_dir;
  j["out_dir"] = out_dir;
  j["tokenizer"] = tokenizer;
  j["model"] = model_spec_to_json(model);
  j["stage1"] = schedule_to_json(stage1);
  j["stage2"] = schedule_to_json(stage2);
  j["include_context"] = include_context;
  j["sampler"] = {{"p", sampler.p},
                  {"max_new_tokens", sampler.max_new_tokens},
                  {"temperature", sampler.temperature},
                  {"seed", sampler.seed},
                  {"stop_token", sampler.stop_token ? json(*sampler.stop_token) : json(nullptr)}};
  j["eval"] = {{"n_distractors", eval.n_distractors}, {"prompt_samples", eval.prompt_samples}};
  j["fixtures"] = {{"stories", fixtures.stories},
                   {"books", fixtures.books},
                   {"ranking", fixtures.ranking},
                   {"synthetic", fixtures.synthetic},
                   {"stories_valid", fixtures.stories_valid},
                   {"ranking_valid", fixtures.ranking_valid},
                   {"cloze_valid", fixtures.cloze_valid}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("data_dir", c.data_dir);
  root.get("out_dir", c.out_dir);
  root.get("tokenizer", c.tokenizer);
  read_spec(root.child("model"), c.model);
  read_schedule(root.child("stage1"), c.stage1);
  read_schedule(root.child("stage2"), c.stage2);
  root.get("include_context", c.include_context);
  {
    Section s = root.child("sampler");
    s.get("p", c.sampler.p);
    s.get("max_new_tokens", c.sampler.max_new_tokens);
    s.get("temperature", c.sampler.temperature);
    s.get("seed", c.sampler.seed);
    s.get_optional("stop_token", c.sampler.stop_token);
    s.finish();
  }
  {
    Section s = root.child("eval");
    s.get("n_distractors", c.eval.n_distractors);
    s.get("prompt_samples", c.eval.prompt_samples);
    s.finish();
  }
  {
    Section s = root.child("fixtures");
    s.get("stories", c.fixtures.stories);
    s.get("books", c.fixtures.books);
    s.get("ranking", c.fixtures.ranking);
    s.get("synthetic", c.fixtures.synthetic);
    s.get("stories_valid", c.fixtures.stories_valid);
    s.get("ranking_valid", c.fixtures.ranking_valid);
    s.get("cloze_valid", c.fixtures.cloze_valid);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

json RunConfig::read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return j;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> out;
    flatten(RunConfig{}.to_json(), "", out);
    return out;
  }();
  return fields;
}

void apply_override(json& doc, const ConfigField& field, const std::string& value) {
  json* node = &doc;
  std::size_t start = 0;
  for (std::size_t dot; (dot = field.key.find('.', start)) != std::string::npos; start = dot + 1) {
    json& next = (*node)[field.key.substr(start, dot - start)];
    if (next.is_null()) next = json::object();
    node = &next;
  }
  json& leaf = (*node)[field.key.substr(start)];
  auto fail = [&](const char* what) {
    throw ConfigError(field.key + ": '" + value + "' is not " + what);
  };
  try {
    std::size_t used = 0;
    switch (field.type) {
      case FieldType::boolean:
        if (value == "true" || value == "1") leaf = true;
        else if (value == "false" || value == "0") leaf = false;
        else fail("a boolean");
        return;
      case FieldType::optional_integer:
        if (value == "none" || value == "null") {
          leaf = nullptr;
          return;
        }
        [[fallthrough]];
      case FieldType::integer: {
        const long long v = std::stoll(value, &used);
        if (used != value.size()) fail("an integer");
        leaf = v;
        return;
      }
      case FieldType::real: {
        const double v = std::stod(value, &used);
        if (used != value.size()) fail("a number");
        leaf = v;
        return;
      }
      case FieldType::text:
        leaf = value;
        return;
    }
  } catch (const std::invalid_argument&) {
    fail("a number");
  } catch (const std::out_of_range&) {
    fail("in range");
  }
}

}  // namespace storylab
