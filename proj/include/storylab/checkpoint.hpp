#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "storylab/model.hpp"
#include "storylab/optimizer.hpp"

namespace storylab {

/// Progress of a training stage, enough to resume it exactly.
struct TrainerState {
  int stage = 0;
  std::int64_t iteration = 0;
  std::optional<double> best_val_ppl;
  std::int64_t best_iteration = 0;
  int bad_evals = 0;
  bool finished = false;

  bool operator==(const TrainerState&) const = default;
};

struct Checkpoint {
  Model model;
  std::optional<AdamW> optimizer;
  TrainerState state;
  std::string tokenizer_hash;
};

// Layout: 8-byte magic, little-endian u64 header length, JSON header (spec,
// parameter names and shapes, trainer state, tokenizer hash), then raw
// little-endian doubles: parameters in order, followed by the optimizer's
// first and second moments when present.
std::string encode_checkpoint(const Model& model, const AdamW* optimizer,
                              const TrainerState& state, std::string_view tokenizer_hash);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamW* optimizer, const TrainerState& state,
                     std::string_view tokenizer_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace storylab
