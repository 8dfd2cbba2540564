#include "storylab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "storylab/config.hpp"
#include "storylab/error.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

constexpr std::string_view kMagic{"SLCKPT\x00\x01", 8};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  }
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}
  void read(std::span<double> out) {
    if (pos_ + out.size() * 8 > bytes_.size()) throw DataError("checkpoint: truncated payload");
    for (double& d : out) {
      d = std::bit_cast<double>(get_u64(bytes_, pos_));
      pos_ += 8;
    }
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_;
};

json state_to_json(const TrainerState& s) {
  return {{"stage", s.stage},
          {"iteration", s.iteration},
          {"best_val_ppl", s.best_val_ppl ? json(*s.best_val_ppl) : json(nullptr)},
          {"best_iteration", s.best_iteration},
          {"bad_evals", s.bad_evals},
          {"finished", s.finished}};
}

TrainerState state_from_json(const json& j) {
  TrainerState s;
  s.stage = j.at("stage").get<int>();
  s.iteration = j.at("iteration").get<std::int64_t>();
  if (!j.at("best_val_ppl").is_null()) s.best_val_ppl = j.at("best_val_ppl").get<double>();
  s.best_iteration = j.at("best_iteration").get<std::int64_t>();
  s.bad_evals = j.at("bad_evals").get<int>();
  s.finished = j.at("finished").get<bool>();
  return s;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::string encode_checkpoint(const Model& model, const AdamW* optimizer,
                              const TrainerState& state, std::string_view tokenizer_hash) {
  json header;
  header["format"] = "storylab-checkpoint";
  header["version"] = 1;
  header["spec"] = model_spec_to_json(model.spec());
  header["tokenizer_hash"] = std::string(tokenizer_hash);
  header["trainer"] = state_to_json(state);
  json params = json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  header["params"] = std::move(params);
  if (optimizer) {
    const auto& c = optimizer->config();
    header["optimizer"] = {{"steps", optimizer->steps()},
                           {"beta1", c.beta1},
                           {"beta2", c.beta2},
                           {"eps", c.eps},
                           {"weight_decay", c.weight_decay}};
  } else {
    header["optimizer"] = nullptr;
  }
  const std::string head = header.dump();

  std::string out(kMagic);
  put_u64(out, head.size());
  out += head;
  for (const auto& p : model.parameters()) put_doubles(out, p.tensor.values());
  if (optimizer) {
    for (const auto& m : optimizer->first_moments()) put_doubles(out, m);
    for (const auto& v : optimizer->second_moments()) put_doubles(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kMagic) {
    throw DataError("checkpoint: bad magic, not a storylab checkpoint");
  }
  const std::uint64_t head_len = get_u64(bytes, 8);
  if (16 + head_len > bytes.size()) throw DataError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, head_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  try {
    const ModelSpec spec = model_spec_from_json(header.at("spec"));
    Checkpoint ck{Model::zeros(spec), std::nullopt, state_from_json(header.at("trainer")),
                  header.at("tokenizer_hash").get<std::string>()};
    const auto& names = header.at("params");
    auto& params = ck.model.parameters();
    if (names.size() != params.size()) throw DataError("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (names[i].at("name").get<std::string>() != params[i].name ||
          names[i].at("shape").get<Shape>() != params[i].tensor.shape()) {
        throw DataError("checkpoint: parameter " + std::to_string(i) +
                        " does not match the model layout");
      }
    }
    Reader reader(bytes, 16 + head_len);
    for (auto& p : params) reader.read(p.tensor.values());
    if (!header.at("optimizer").is_null()) {
      const auto& o = header.at("optimizer");
      AdamConfig cfg{o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                     o.at("eps").get<double>(), o.at("weight_decay").get<double>()};
      AdamW opt(params, cfg);
      std::vector<std::vector<double>> m, v;
      for (const auto& p : params) {
        m.emplace_back(p.tensor.size());
        reader.read(m.back());
      }
      for (const auto& p : params) {
        v.emplace_back(p.tensor.size());
        reader.read(v.back());
      }
      opt.restore(o.at("steps").get<std::int64_t>(), std::move(m), std::move(v));
      ck.optimizer = std::move(opt);
    }
    if (!reader.at_end()) throw DataError("checkpoint: trailing bytes after payload");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamW* optimizer, const TrainerState& state,
                     std::string_view tokenizer_hash) {
  write_file(path, encode_checkpoint(model, optimizer, state, tokenizer_hash));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path));
}

}  // namespace storylab
