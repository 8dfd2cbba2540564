#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "storylab/fixtures.hpp"
#include "storylab/model.hpp"
#include "storylab/sampler.hpp"
#include "storylab/schedule.hpp"

namespace storylab {

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json schedule_to_json(const TrainSchedule& s);
// When total_iters is given without warmup_iters, warmup is total_iters / 100.
TrainSchedule schedule_from_json(const nlohmann::json& j);

struct EvalOptions {
  std::size_t n_distractors = 9;
  std::size_t prompt_samples = 1000;
};

/// Everything a run needs. Every leaf field is also a command-line flag named
/// by its dotted JSON path (e.g. --stage2.max_lr).
struct RunConfig {
  std::uint64_t seed = 1234;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  // Empty means <out_dir>/tokenizer.json.
  std::string tokenizer;
  ModelSpec model;
  TrainSchedule stage1;
  TrainSchedule stage2;
  // Score ranking choices over context + continuation (true) or the
  // continuation only.
  bool include_context = true;
  SamplerConfig sampler;
  EvalOptions eval;
  FixtureSizes fixtures;

  std::filesystem::path tokenizer_path() const;
  std::filesystem::path data_file(const char* name) const;
  std::filesystem::path out_file(const std::string& name) const;

  // Nested invariants; ConfigError names the field.
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys and wrongly typed values raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  // The file's JSON document, unvalidated.
  static nlohmann::json read_json(const std::filesystem::path& path);
};

enum class FieldType { boolean, integer, real, text, optional_integer };

struct ConfigField {
  std::string key;  // dotted path
  FieldType type;
  std::string help;
};

/// Every leaf of RunConfig, in document order.
const std::vector<ConfigField>& config_fields();

/// Sets the dotted key in a config JSON document from a flag's text value.
/// "none" or "null" clears an optional field.
void apply_override(nlohmann::json& doc, const ConfigField& field, const std::string& value);

}  // namespace storylab
