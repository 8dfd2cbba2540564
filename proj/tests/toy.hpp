#pragma once

// Small fixture world, tokenizer and model spec shared by the training tests.

#include <filesystem>

#include "storylab/config.hpp"
#include "storylab/fixtures.hpp"
#include "storylab/pipeline.hpp"
#include "storylab/tokenizer.hpp"
#include "storylab/trainer.hpp"

namespace storylab::testing {

struct Toy {
  Datasets data;
  Vocab vocab;
  ModelSpec spec;
};

inline Toy make_toy(std::uint64_t seed = 3, FixtureSizes sizes = {40, 40, 24, 24, 12, 20, 20},
                    std::size_t vocab_size = 160) {
  Toy t;
  t.data = Datasets::from_fixtures(make_fixtures(seed, sizes));
  t.vocab = train_bpe(tokenizer_corpus(t.data), vocab_size);
  t.spec.vocab_size = t.vocab.size();
  t.spec.d_model = 16;
  t.spec.n_layers = 1;
  t.spec.n_heads = 2;
  t.spec.d_ff = 32;
  t.spec.max_seq_len = 96;
  return t;
}

inline TrainSchedule quick_schedule(std::int64_t total, double lr = 3e-3) {
  TrainSchedule s;
  s.total_iters = total;
  s.warmup_iters = std::max<std::int64_t>(1, total / 10);
  s.max_lr = lr;
  s.batch_size = 2;
  s.eval_every = std::max<std::int64_t>(1, total / 4);
  s.patience = 100;
  return s;
}

struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }
};

}  // namespace storylab::testing
