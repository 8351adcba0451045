#include <doctest.h>

#include <cmath>

#include "selfmon/encoder.hpp"
#include "selfmon/errors.hpp"
#include "support/support.hpp"

using namespace selfmon;
using namespace selfmon::encoder;
using num::Tensor;

namespace {

EncoderDims tiny_dims() {
  EncoderDims d;
  d.vocab_size = 9;
  d.d_embed = 4;
  d.d_x = 6;
  d.max_length = 7;
  return d;
}

// Plain-loop LSTM with gate blocks (input, forget, cell, output).
std::vector<std::vector<double>> reference_encoder(const num::ParameterSet& ps, const EncoderParams& p,
                                                   const std::vector<int>& tokens) {
  const auto& E = ps[p.embedding].tensor;
  const auto& W = ps[p.lstm_weight].tensor;
  const auto& b = ps[p.lstm_bias].tensor;
  const std::size_t de = E.dim(1), dh = b.size() / 4;
  std::vector<double> h(dh, 0.0), c(dh, 0.0);
  std::vector<std::vector<double>> out;
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (int t : tokens) {
    std::vector<double> in(E.row(t).begin(), E.row(t).end());
    in.insert(in.end(), h.begin(), h.end());
    std::vector<double> z(4 * dh);
    for (std::size_t j = 0; j < 4 * dh; ++j) {
      z[j] = b[j];
      for (std::size_t k = 0; k < de + dh; ++k) z[j] += in[k] * W.at(k, j);
    }
    for (std::size_t j = 0; j < dh; ++j) {
      c[j] = sig(z[dh + j]) * c[j] + sig(z[j]) * std::tanh(z[2 * dh + j]);
      h[j] = sig(z[3 * dh + j]) * std::tanh(c[j]);
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace

TEST_CASE("zero-weight encoder yields a zero matrix") {
  num::ParameterSet ps;
  Rng rng(1);
  const auto dims = tiny_dims();
  const auto p = add_encoder_parameters(ps, dims, rng);
  for (auto& param : ps) param.tensor.fill(0.0);
  num::Tape tape(&ps);
  const std::vector<int> tokens{1, 5, 6, 2};
  const auto enc = encode_instruction(tape, p, dims, tokens);
  for (double v : enc.X.value().values()) CHECK(v == 0.0);
}

TEST_CASE("encoder matches a plain-loop LSTM and zero-pads") {
  num::ParameterSet ps;
  Rng rng(2);
  const auto dims = tiny_dims();
  const auto p = add_encoder_parameters(ps, dims, rng);
  const std::vector<int> tokens{1, 8, 3, 3, 2};
  num::Tape tape(&ps);
  const auto enc = encode_instruction(tape, p, dims, tokens);
  const auto& X = enc.X.value();
  REQUIRE(X.shape() == num::Shape{dims.max_length, dims.d_x});
  const auto ref = reference_encoder(ps, p, tokens);
  for (std::size_t l = 0; l < tokens.size(); ++l)
    for (std::size_t j = 0; j < dims.d_x; ++j) CHECK(X.at(l, j) == doctest::Approx(ref[l][j]).epsilon(1e-12));
  for (std::size_t l = tokens.size(); l < dims.max_length; ++l)
    for (std::size_t j = 0; j < dims.d_x; ++j) CHECK(X.at(l, j) == 0.0);
  CHECK(enc.length == tokens.size());
  for (std::size_t l = 0; l < dims.max_length; ++l) CHECK(enc.mask[l] == (l < tokens.size()));
}

TEST_CASE("evaluation mode is deterministic; training dropout follows its rng") {
  num::ParameterSet ps;
  Rng rng(3);
  const auto dims = tiny_dims();
  const auto p = add_encoder_parameters(ps, dims, rng);
  const std::vector<int> tokens{1, 4, 7, 2};
  num::Tape t1(&ps), t2(&ps);
  CHECK(encode_instruction(t1, p, dims, tokens).X.value() == encode_instruction(t2, p, dims, tokens).X.value());

  Rng d1(10), d2(10);
  num::Tape t3(&ps), t4(&ps), t5(&ps);
  const auto a = encode_instruction(t3, p, dims, tokens, {0.5, &d1}).X.value();
  const auto b = encode_instruction(t4, p, dims, tokens, {0.5, &d2}).X.value();
  CHECK(a == b);
  CHECK_FALSE(a == encode_instruction(t5, p, dims, tokens).X.value());
}

TEST_CASE("dropout masks are inverted and hit the requested rate") {
  Rng rng(4);
  const auto m = dropout_mask({20000}, 0.5, rng);
  std::size_t zeros = 0;
  for (double v : m.values()) {
    CHECK((v == 0.0 || v == 2.0));
    zeros += v == 0.0;
  }
  CHECK(std::abs(static_cast<double>(zeros) / 20000.0 - 0.5) < 0.02);
  CHECK_THROWS_AS(dropout_mask({3}, 1.0, rng), ConfigError);
}

TEST_CASE("encoder contract errors") {
  num::ParameterSet ps;
  Rng rng(5);
  const auto dims = tiny_dims();
  const auto p = add_encoder_parameters(ps, dims, rng);
  num::Tape tape(&ps);
  const std::vector<int> bad{1, 9, 2};
  CHECK_THROWS_AS(encode_instruction(tape, p, dims, bad), EncodingError);
  const std::vector<int> negative{1, -1};
  CHECK_THROWS_AS(encode_instruction(tape, p, dims, negative), EncodingError);
  const std::vector<int> empty;
  CHECK_THROWS_AS(encode_instruction(tape, p, dims, empty), ContractError);
  const std::vector<int> too_long(dims.max_length + 1, 1);
  CHECK_THROWS_AS(encode_instruction(tape, p, dims, too_long), ContractError);
}

TEST_CASE("full-scale encoder produces L x 512 features") {
  EncoderDims dims;
  dims.vocab_size = 40;
  dims.d_embed = 256;
  dims.d_x = 512;
  dims.max_length = 80;
  num::ParameterSet ps;
  Rng rng(6);
  const auto p = add_encoder_parameters(ps, dims, rng);
  CHECK(ps[p.embedding].tensor.shape() == num::Shape{40, 256});
  CHECK(ps[p.lstm_weight].tensor.shape() == num::Shape{256 + 512, 4 * 512});
  num::Tape tape(&ps);
  const std::vector<int> tokens{1, 5, 2};
  const auto enc = encode_instruction(tape, p, dims, tokens);
  CHECK(enc.X.shape() == num::Shape{80, 512});
}

TEST_CASE("encoder gradients match finite differences") {
  num::ParameterSet ps;
  Rng rng(7);
  auto dims = tiny_dims();
  dims.d_x = 4;
  const auto p = add_encoder_parameters(ps, dims, rng);
  const Tensor probe = [&] {
    Rng r(8);
    Tensor t({dims.max_length, dims.d_x});
    for (auto& v : t.values()) v = r.uniform(-1, 1);
    return t;
  }();
  const std::vector<int> tokens{1, 3, 6, 2};
  const auto report = testsupport::check_gradients(ps, [&](num::Tape& tape) {
    const auto enc = encode_instruction(tape, p, dims, tokens);
    return num::sum(num::mul(enc.pe_X, tape.constant(probe)));
  });
  CHECK(report.checked > 0);
  INFO(testsupport::describe(report));
  CHECK(report.failures.empty());
}

TEST_CASE("positional table examples") {
  const auto pe = positional_table(4, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pe.at(0, 2 * i) == 0.0);
    CHECK(pe.at(0, 2 * i + 1) == 1.0);
  }
  CHECK(pe.at(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(pe.at(1, 0) == std::sin(1.0));
  CHECK(pe.at(1, 1) == std::cos(1.0));
  CHECK(pe.at(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 6.0))).epsilon(1e-14));
  CHECK(pe.at(2, 5) == doctest::Approx(std::cos(2.0 / std::pow(10000.0, 4.0 / 6.0))).epsilon(1e-14));
  CHECK_THROWS_AS(positional_table(3, 5), ConfigError);
}

TEST_CASE("positional encoding of a zero matrix is the table") {
  num::Tape tape;
  const auto out = positional_encoding(tape.constant(Tensor({5, 8})));
  CHECK(out.value() == positional_table(5, 8));
  CHECK_THROWS_AS(positional_encoding(tape.constant(Tensor({5, 7}))), ConfigError);
}

TEST_CASE("positional encoding is additive and independent of content") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.index(10), d = 2 * (1 + rng.index(8));
    Tensor a({rows, d}), b({rows, d});
    for (auto& v : a.values()) v = rng.normal();
    for (auto& v : b.values()) v = rng.normal() * 10.0;
    num::Tape tape;
    const auto pa = positional_encoding(tape.constant(a)).value();
    const auto pb = positional_encoding(tape.constant(b)).value();
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK((pa[i] - a[i]) == doctest::Approx(pb[i] - b[i]).epsilon(1e-12).scale(1.0));
    CHECK(pa.shape() == a.shape());
  }
}
