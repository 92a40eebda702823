#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "seqtrojan/error.hpp"
#include "seqtrojan/model.hpp"
#include "seqtrojan/reference.hpp"

using namespace seqtrojan;
using namespace seqtrojan::testing;

namespace {

constexpr EncoderKind kAll[] = {EncoderKind::Lstm, EncoderKind::LstmAttention, EncoderKind::Cnn, EncoderKind::Transformer};

Matrix encode_rows(const TrainedModel& m, const std::vector<std::vector<TokenId>>& rows, std::size_t cols = 0) {
  return encode(m, batch_of(rows, cols))->output();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("init_model shapes and determinism") {
  ModelSpec s;
  s.vocab_size = 100;
  auto a = init_model(s, 1);
  CHECK(a.params["embedding"].rows() == 100);
  CHECK(a.params["embedding"].cols() == 128);
  CHECK(a.params.identical(init_model(s, 1).params));
  CHECK_FALSE(a.params.identical(init_model(s, 2).params));

  ModelSpec cnn = s;
  cnn.encoder = EncoderKind::Cnn;
  CHECK(cnn.encoding_dim() == 18);
  cnn.max_len = 10;
  CHECK_THROWS_AS(init_model(cnn, 0), Error);
}

TEST_CASE("encoders ignore appended padding") {
  for (auto kind : kAll) {
    CAPTURE(to_string(kind));
    auto m = init_model(tiny_spec(kind, 12, 6), 3);
    auto rows = random_rows(4, 12, 1, 8, 11);
    rows[0] = {5, 3, 7, 1, 9, 2, 4, 8};
    const Matrix tight = encode_rows(m, rows);
    const Matrix padded = encode_rows(m, rows, 25);
    CHECK((tight - padded).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("identical sequences encode identically") {
  for (auto kind : kAll) {
    CAPTURE(to_string(kind));
    auto m = init_model(tiny_spec(kind), 4);
    const Matrix out = encode_rows(m, {{1, 2, 3, 4}, {5, 6}, {1, 2, 3, 4}});
    CHECK((out.row(0) - out.row(2)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("production encoders agree with the serial reference") {
  for (auto kind : kAll) {
    CAPTURE(to_string(kind));
    for (bool three : {false, true}) {
      auto spec = tiny_spec(kind, 20, 8);
      spec.three_heads = three;
      auto m = init_model(spec, 9);
      const auto rows = random_rows(9, 20, 1, 25, 17);
      const auto batch = batch_of(rows);
      const Matrix fast = encode(m, batch)->output();
      const Matrix slow = reference::encode_batch(m, batch);
      CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-10);
      const auto pass = forward_pass(m, batch);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto ref = reference::logits(m, rows[r]);
        for (std::size_t h = 0; h < pass.logits.size(); ++h) {
          for (Index c = 0; c < 2; ++c) {
            CHECK(pass.logits[h](static_cast<Index>(r), c) == doctest::Approx(ref[2 * h + c]).epsilon(1e-10));
          }
        }
      }
    }
  }
}

TEST_CASE("lstm length-1 output is one step from the zero state") {
  auto m = init_model(tiny_spec(EncoderKind::Lstm), 5);
  const Matrix out = encode_rows(m, {{3}});
  const auto& P = m.params;
  const Index H = 4;
  for (Index k = 0; k < H; ++k) {
    double gate[4];
    for (int g = 0; g < 4; ++g) {
      double z = P["lstm.bias"](0, g * H + k);
      for (Index e = 0; e < 4; ++e) z += P["embedding"](3, e) * P["lstm.w_input"](e, g * H + k);
      gate[g] = z;
    }
    const double c = sigmoid(gate[0]) * std::tanh(gate[2]);
    CHECK(out(0, k) == doctest::Approx(sigmoid(gate[3]) * std::tanh(c)).epsilon(1e-12));
  }
}

TEST_CASE("lstm_att attention weights") {
  auto m = init_model(tiny_spec(EncoderKind::LstmAttention), 6);
  const auto single = batch_of({{4}});
  const auto w1 = lstm_attention_weights(m.spec, m.params, single);
  REQUIRE(w1[0].size() == 1);
  CHECK(w1[0][0] == doctest::Approx(1.0));
  ModelSpec plain = m.spec;
  plain.encoder = EncoderKind::Lstm;
  TrainedModel lstm{plain, m.params};
  CHECK((encode(m, single)->output() - encode(lstm, single)->output()).cwiseAbs().maxCoeff() < 1e-14);

  const auto rows = random_rows(6, 10, 1, 15, 3);
  for (const auto& w : lstm_attention_weights(m.spec, m.params, batch_of(rows))) {
    double sum = 0;
    for (double v : w) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("lstm_att matches a scripted two-step oracle") {
  // One hidden unit, one embedding dim, hand-set weights.
  ModelSpec s = tiny_spec(EncoderKind::LstmAttention, 3, 1);
  auto m = init_model(s, 0);
  m.params["embedding"] << 0.0, 0.5, -1.0;
  m.params["lstm.w_input"] << 0.3, -0.2, 0.7, 0.1;
  m.params["lstm.w_hidden"] << 0.4, 0.6, -0.5, 0.2;
  m.params["lstm.bias"] << 0.05, 0.1, -0.05, 0.0;

  const double x[2] = {0.5, -1.0};
  double h = 0, c = 0, hs[2];
  for (int t = 0; t < 2; ++t) {
    const double i = sigmoid(0.3 * x[t] + 0.4 * h + 0.05);
    const double f = sigmoid(-0.2 * x[t] + 0.6 * h + 0.1);
    const double g = std::tanh(0.7 * x[t] - 0.5 * h - 0.05);
    const double o = sigmoid(0.1 * x[t] + 0.2 * h + 0.0);
    c = f * c + i * g;
    h = o * std::tanh(c);
    hs[t] = h;
  }
  const double s0 = hs[0] * hs[1], s1 = hs[1] * hs[1];
  const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double expected = a0 * hs[0] + (1 - a0) * hs[1];

  const Matrix out = encode_rows(m, {{1, 2}});
  CHECK(out(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(lstm_attention_weights(m.spec, m.params, batch_of({{1, 2}}))[0][0] == doctest::Approx(a0).epsilon(1e-12));
}

TEST_CASE("cnn with zero kernels outputs its bias") {
  auto m = init_model(tiny_spec(EncoderKind::Cnn), 1);
  m.params["cnn.kernels"].setZero();
  for (Index k = 0; k < 18; ++k) m.params["cnn.bias"](0, k) = 0.1 * static_cast<double>(k);
  const Matrix out = encode_rows(m, {{2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2}});
  REQUIRE(out.cols() == 18);
  for (Index k = 0; k < 18; ++k) CHECK(out(0, k) == doctest::Approx(0.1 * static_cast<double>(k)));
}

TEST_CASE("cnn pooled value equals the brute-force window maximum") {
  auto m = init_model(tiny_spec(EncoderKind::Cnn, 10, 3), 2);
  auto& K = m.params["cnn.kernels"];
  K(0, 0) = 0.7;  K(0, 1) = -0.3; K(0, 2) = 0.2;
  K(1, 0) = -0.1; K(1, 1) = 0.5;  K(1, 2) = 0.9;
  m.params["cnn.bias"](0, 0) = 0.25;
  const auto rows = random_rows(1, 10, 20, 20, 8);
  const auto& E = m.params["embedding"];
  double best = -1e300;
  for (std::size_t p = 0; p + 2 <= rows[0].size(); ++p) {
    double s = 0;
    for (Index j = 0; j < 2; ++j) {
      for (Index e = 0; e < 3; ++e) s += E(rows[0][p + static_cast<std::size_t>(j)], e) * K(j, e);
    }
    best = std::max(best, s);
  }
  CHECK(encode_rows(m, rows)(0, 0) == doctest::Approx(best + 0.25).epsilon(1e-12));
}

TEST_CASE("transformer single token and order sensitivity") {
  auto m = init_model(tiny_spec(EncoderKind::Transformer, 10, 4), 7);
  const Matrix one = encode_rows(m, {{3}});
  const Matrix one_ref = reference::encode_batch(m, batch_of({{3}}));
  CHECK((one - one_ref).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix ab = encode_rows(m, {{2, 5, 7}});
  const Matrix ba = encode_rows(m, {{5, 2, 7}});
  CHECK((ab - ba).cwiseAbs().maxCoeff() > 1e-6);

  const Matrix pe = positional_encoding(3, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
}

TEST_CASE("forward probabilities") {
  auto m = init_model(tiny_spec(EncoderKind::Lstm), 2);
  const auto batch = batch_of(random_rows(5, 10, 1, 9, 2));
  const auto p = forward(m, batch);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p.p1[i] > 0.0);
    CHECK(p.p1[i] < 1.0);
    CHECK(p.label[i] == (p.p1[i] >= 0.5 ? 1 : 0));
  }
  m.params["head.weight"].setZero();
  m.params["head.bias"].setZero();
  for (double v : forward(m, batch).p1) CHECK(v == 0.5);

  Matrix logits(3, 2);
  logits << 0.0, -1.0, 0.0, 0.0, 0.0, 1.0;
  const auto mono = probabilities_from_logits(logits);
  CHECK(mono.p1[0] < mono.p1[1]);
  CHECK(mono.p1[1] < mono.p1[2]);
  CHECK(mono.p1[1] == 0.5);
  CHECK(mono.label[1] == 1);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  auto m = init_model(tiny_spec(EncoderKind::Cnn), 2);
  try {
    forward(m, batch_of({{1, 2, 10}}));
    FAIL("expected a vocabulary error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Vocabulary);
  }
}

TEST_CASE("three heads share the encoding and route") {
  auto spec = tiny_spec(EncoderKind::LstmAttention);
  spec.three_heads = true;
  auto m = init_model(spec, 3);
  m.params["head.poisoned.weight"] = m.params["head.clean.weight"];
  m.params["head.poisoned.bias"] = m.params["head.clean.bias"];
  const auto batch = batch_of(random_rows(6, 10, 1, 9, 4));
  const auto out = forward_three_heads(m, batch);
  CHECK(out.clean.p1 == out.poisoned.p1);
  for (double v : out.detector.p1) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto routed = forward(m, batch);
  CHECK(routed.p1 == route_probabilities(out).p1);

  CHECK(route_prediction(0, 1, 0) == 1);
  CHECK(route_prediction(1, 1, 0) == 0);
  for (int d : {0, 1}) {
    CHECK(route_prediction(d, 0, 0) == 0);
    CHECK(route_prediction(d, 1, 1) == 1);
  }
  HeadOutputs h;
  h.clean = probabilities_from_logits((Matrix(2, 2) << 0, 1, 1, 0).finished());
  h.poisoned = probabilities_from_logits((Matrix(2, 2) << 1, 0, 0, 1).finished());
  h.detector = probabilities_from_logits((Matrix(2, 2) << 50, -50, -50, 50).finished());
  CHECK(route_prediction(h) == std::vector<int>{1, 1});

  auto single = init_model(tiny_spec(EncoderKind::Lstm), 1);
  CHECK_THROWS_AS(forward_three_heads(single, batch), Error);
}

TEST_CASE("predict matches forward over the whole dataset") {
  auto m = init_model(tiny_spec(EncoderKind::Transformer), 8);
  const auto rows = random_rows(300, 10, 1, 20, 5);
  std::vector<TokenSequence> seqs;
  for (const auto& r : rows) seqs.push_back(seq(r));
  const auto ds = dataset(seqs, 30);
  const auto batched = predict(m, ds, 64);
  const auto whole = forward(m, batch_of(rows));
  REQUIRE(batched.size() == 300);
  for (std::size_t i = 0; i < 300; ++i) CHECK(batched.p1[i] == doctest::Approx(whole.p1[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip") {
  for (auto kind : kAll) {
    auto spec = tiny_spec(kind);
    spec.three_heads = kind == EncoderKind::LstmAttention;
    auto m = init_model(spec, 12);
    const auto bytes = serialize_checkpoint(m);
    auto back = deserialize_checkpoint(bytes);
    CHECK(back.spec == m.spec);
    CHECK(back.params.identical(m.params));
    CHECK(serialize_checkpoint(back) == bytes);

    auto path = scratch_dir("ckpt") / "m.ckpt";
    save_checkpoint(m, path);
    CHECK(load_checkpoint(path).params.identical(m.params));

    std::string corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(corrupt), Error);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  }
}
