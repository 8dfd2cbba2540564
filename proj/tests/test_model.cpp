#include <doctest.h>

#include <cmath>
#include <random>

#include "storylab/error.hpp"
#include "storylab/model.hpp"
#include "storylab/objectives.hpp"
#include "storylab/optimizer.hpp"

using namespace storylab;

namespace {

using Mat = std::vector<std::vector<double>>;

ModelSpec small_spec(std::size_t V = 12, std::size_t d = 8, std::size_t L = 1, std::size_t h = 2) {
  ModelSpec s;
  s.vocab_size = V;
  s.d_model = d;
  s.n_layers = L;
  s.n_heads = h;
  s.d_ff = 4 * d;
  s.max_seq_len = 16;
  return s;
}

void randomize(Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.4);
  for (auto& p : m.parameters()) {
    for (double& v : p.tensor.values()) v = n(rng);
  }
}

Mat as_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.values()[i * t.dim(1) + j];
  }
  return m;
}

std::vector<double> as_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Row vector times matrix plus bias.
std::vector<double> affine(const std::vector<double>& x, const Mat& w, const std::vector<double>& b) {
  std::vector<double> y(b);
  for (std::size_t j = 0; j < y.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w[i][j];
  }
  return y;
}

std::vector<double> norm(const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& b) {
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

// One-layer pre-norm block followed by final norm and tied projection, token by token.
Mat reference_logits(const Model& m, const TokenSeq& ids) {
  const auto P = [&](const char* name) { return m.parameter(name); };
  const Mat wte = as_mat(P("wte")), wpe = as_mat(P("wpe"));
  const std::size_t d = m.spec().d_model, H = m.spec().n_heads, dh = d / H, T = ids.size();
  Mat x(T);
  for (std::size_t t = 0; t < T; ++t) {
    x[t].resize(d);
    for (std::size_t i = 0; i < d; ++i) x[t][i] = wte[static_cast<std::size_t>(ids[t])][i] + wpe[t][i];
  }
  Mat q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto h = norm(x[t], as_vec(P("h.0.ln_1.g")), as_vec(P("h.0.ln_1.b")));
    q[t] = affine(h, as_mat(P("h.0.attn.q.w")), as_vec(P("h.0.attn.q.b")));
    k[t] = affine(h, as_mat(P("h.0.attn.k.w")), as_vec(P("h.0.attn.k.b")));
    v[t] = affine(h, as_mat(P("h.0.attn.v.w")), as_vec(P("h.0.attn.v.b")));
  }
  Mat logits(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> att(d, 0.0);
    for (std::size_t head = 0; head < H; ++head) {
      std::vector<double> s(t + 1);
      double mx = -1e300;
      for (std::size_t u = 0; u <= t; ++u) {
        s[u] = 0.0;
        for (std::size_t i = 0; i < dh; ++i) s[u] += q[t][head * dh + i] * k[u][head * dh + i];
        s[u] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[u]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t u = 0; u <= t; ++u) {
        for (std::size_t i = 0; i < dh; ++i) att[head * dh + i] += s[u] / z * v[u][head * dh + i];
      }
    }
    const auto o = affine(att, as_mat(P("h.0.attn.o.w")), as_vec(P("h.0.attn.o.b")));
    std::vector<double> r(d);
    for (std::size_t i = 0; i < d; ++i) r[i] = x[t][i] + o[i];
    auto f = affine(norm(r, as_vec(P("h.0.ln_2.g")), as_vec(P("h.0.ln_2.b"))), as_mat(P("h.0.mlp.fc.w")),
                    as_vec(P("h.0.mlp.fc.b")));
    for (double& e : f) e = gelu(e);
    const auto f2 = affine(f, as_mat(P("h.0.mlp.proj.w")), as_vec(P("h.0.mlp.proj.b")));
    for (std::size_t i = 0; i < d; ++i) r[i] += f2[i];
    const auto y = norm(r, as_vec(P("ln_f.g")), as_vec(P("ln_f.b")));
    logits[t].assign(wte.size(), 0.0);
    for (std::size_t w = 0; w < wte.size(); ++w) {
      for (std::size_t i = 0; i < d; ++i) logits[t][w] += y[i] * wte[w][i];
    }
  }
  return logits;
}

}  // namespace

TEST_CASE("forward matches a straight-line reference on a one-layer d=8 model") {
  Model m = Model::init(small_spec(), 3);
  randomize(m, 17);
  const TokenSeq ids{5, 0, 11};
  Graph g(false);
  const Tensor logits = m.forward(g, ids);
  const Mat ref = reference_logits(m, ids);
  REQUIRE(logits.shape() == Shape{3, 12});
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t w = 0; w < 12; ++w) CHECK(std::abs(logits.values()[t * 12 + w] - ref[t][w]) <= 1e-10);
  }
}

TEST_CASE("changing token j leaves earlier logits bitwise unchanged") {
  Model m = Model::init(small_spec(20, 16, 2, 4), 5);
  randomize(m, 6);
  TokenSeq ids{1, 7, 3, 9, 12, 4, 4, 18};
  Graph g(false);
  const auto base = as_vec(m.forward(g, ids));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    TokenSeq changed = ids;
    changed[j] = (changed[j] + 5) % 20;
    const auto out = as_vec(m.forward(g, changed));
    for (std::size_t i = 0; i < j * 20; ++i) REQUIRE(out[i] == base[i]);
    bool differs = false;
    for (std::size_t i = j * 20; i < (j + 1) * 20; ++i) differs |= out[i] != base[i];
    CHECK(differs);
  }
}

TEST_CASE("fresh models produce finite logits and deterministic forwards") {
  Model m = Model::init(small_spec(30, 16, 2, 2), 8);
  const TokenSeq ids{0, 1, 2, 3, 29, 28, 27, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  Graph g(false);
  const auto a = as_vec(m.forward(g, ids)), b = as_vec(m.forward(g, ids));
  for (double v : a) CHECK(std::isfinite(v));
  CHECK(a == b);
}

TEST_CASE("log-softmax rows exponentiate to one") {
  Model m = Model::init(small_spec(), 9);
  randomize(m, 10);
  Graph g(false);
  const auto lp = as_vec(g.log_softmax(m.forward(g, TokenSeq{1, 2, 3, 4})));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 12; ++j) s += std::exp(lp[r * 12 + j]);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("forward errors") {
  Model m = Model::init(small_spec(), 1);
  Graph g(false);
  CHECK_THROWS_AS(m.forward(g, TokenSeq(17, 1)), LengthError);
  CHECK_THROWS_AS(m.forward(g, TokenSeq{}), LengthError);
  CHECK_THROWS_AS(m.forward(g, TokenSeq{1, 12}), IndexError);
  CHECK_THROWS_AS(m.forward(g, TokenSeq{-1}), IndexError);
  CHECK_THROWS_AS(sequence_log_probs(m, TokenSeq{1}), ContractError);
}

TEST_CASE("spec validation names the field") {
  auto expect_field = [](ModelSpec s, const std::string& field) {
    try {
      s.validate();
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  ModelSpec s = small_spec();
  s.n_heads = 3;
  expect_field(s, "model.n_heads");
  s = small_spec();
  s.max_seq_len = 1;
  expect_field(s, "model.max_seq_len");
  s = small_spec();
  s.vocab_size = 3;
  expect_field(s, "model.vocab_size");
  s = small_spec();
  s.dropout = 1.0;
  expect_field(s, "model.dropout");
}

TEST_CASE("uniform output gives -ln V per position") {
  ModelSpec s = small_spec(4);
  const Model m = Model::zeros(s);
  for (double lp : sequence_log_probs(m, TokenSeq{1, 2, 3, 0, 2})) CHECK(lp == doctest::Approx(-std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("summed log-probs equal minus count times cross-entropy") {
  Model m = Model::init(small_spec(), 2);
  randomize(m, 3);
  const TokenSeq ids{1, 4, 4, 9, 2, 7};
  const auto lp = sequence_log_probs(m, ids);
  double total = 0.0;
  for (double v : lp) total += v;
  Graph g(false);
  const double ce = lm_loss(g, m, ids).item();
  CHECK(std::abs(total + 5.0 * ce) <= 1e-10);
}

TEST_CASE("initialization") {
  const ModelSpec s = small_spec();
  const Model a = Model::init(s, 42), b = Model::init(s, 42), c = Model::init(s, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(as_vec(a.parameters()[i].tensor) == as_vec(b.parameters()[i].tensor));
    any_diff |= as_vec(a.parameters()[i].tensor) != as_vec(c.parameters()[i].tensor);
  }
  CHECK(any_diff);
  for (double v : as_vec(a.parameter("h.0.attn.q.b"))) CHECK(v == 0.0);
  for (double v : as_vec(a.parameter("ln_f.g"))) CHECK(v == 1.0);
  double sq = 0.0;
  const auto w = as_vec(a.parameter("wte"));
  for (double v : w) sq += v * v;
  CHECK(std::sqrt(sq / static_cast<double>(w.size())) == doctest::Approx(0.02).epsilon(0.3));
}

TEST_CASE("parameter count by hand") {
  ModelSpec s;
  s.vocab_size = 100;
  s.d_model = 16;
  s.n_layers = 2;
  s.n_heads = 2;
  s.d_ff = 64;
  s.max_seq_len = 32;
  // wte 1600 + wpe 512 + 2 layers of 3280 + final norm 32
  CHECK(parameter_count(s) == 8704);
  CHECK(Model::init(s, 1).parameter_count() == 8704);
  s.tie_embeddings = false;
  CHECK(parameter_count(s) == 8704 + 1600);
  CHECK(Model::init(s, 1).parameter_count() == 8704 + 1600);
}

TEST_CASE("tied projection stays tied through optimizer updates") {
  Model m = Model::init(small_spec(), 4);
  AdamW opt(m.parameters());
  for (int step = 0; step < 3; ++step) {
    Graph g;
    g.backward(lm_loss(g, m, TokenSeq{1, 5, 6, 7, 2}));
    opt.step(m.parameters(), 1e-2);
  }
  CHECK(m.output_projection().shares_storage(m.parameter("wte")));
  CHECK(as_vec(m.output_projection()) == as_vec(m.parameter("wte")));
}

TEST_CASE("clone is a deep copy") {
  Model m = Model::init(small_spec(), 4);
  Model c = m.clone();
  c.parameters()[0].tensor.values()[0] += 1.0;
  CHECK(c.parameters()[0].tensor.values()[0] != m.parameters()[0].tensor.values()[0]);
}

TEST_CASE("an overfit model prefers its memorized sequence") {
  ModelSpec s = small_spec(10, 16, 1, 2);
  Model m = Model::init(s, 12);
  AdamW opt(m.parameters(), AdamConfig{0.9, 0.999, 1e-8, 0.0});
  const TokenSeq memo{1, 4, 9, 5, 5, 7, 3, 8, 6, 2};
  for (int step = 0; step < 150; ++step) {
    Graph g;
    g.backward(lm_loss(g, m, memo));
    opt.step(m.parameters(), 1e-2);
  }
  auto total = [&](const TokenSeq& ids) {
    double t = 0.0;
    for (double v : sequence_log_probs(m, ids)) t += v;
    return t;
  };
  const double target = total(memo);
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<TokenId> tok(0, 9);
  int beaten = 0;
  for (int i = 0; i < 100; ++i) {
    TokenSeq r(memo.size());
    r[0] = memo[0];
    for (std::size_t t = 1; t < r.size(); ++t) r[t] = tok(rng);
    beaten += target > total(r);
  }
  CHECK(beaten >= 99);
}
