#include "selfmon/encoder.hpp"

#include <cmath>
#include <string>

#include "selfmon/errors.hpp"
#include "selfmon/lstm.hpp"

namespace selfmon::encoder {

using num::Tensor;
using num::Var;

EncoderParams add_encoder_parameters(num::ParameterSet& params, const EncoderDims& dims, Rng& rng) {
  if (dims.vocab_size == 0 || dims.d_embed == 0 || dims.d_x == 0 || dims.max_length == 0)
    throw ConfigError("encoder dimensions must be positive");
  EncoderParams p;
  p.embedding = params.add("enc.embedding", num::uniform_init({dims.vocab_size, dims.d_embed}, dims.d_embed, rng));
  num::add_lstm_parameters(params, "enc.lstm", dims.d_embed, dims.d_x, rng);
  p.lstm_weight = params.index_of("enc.lstm.W");
  p.lstm_bias = params.index_of("enc.lstm.b");
  return p;
}

Tensor dropout_mask(const num::Shape& shape, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  Tensor m(shape);
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m.values()) v = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

Tensor positional_table(std::size_t rows, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(d));
  Tensor pe({rows, d});
  for (std::size_t l = 0; l < rows; ++l)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(l) / std::pow(10000.0, 2.0 * i / static_cast<double>(d));
      pe.at(l, 2 * i) = std::sin(angle);
      pe.at(l, 2 * i + 1) = std::cos(angle);
    }
  return pe;
}

Var positional_encoding(Var X) {
  if (X.value().rank() != 2) throw DimensionError("positional encoding expects a matrix");
  const std::size_t rows = X.value().dim(0), d = X.value().dim(1);
  thread_local Tensor cached;
  if (cached.rank() != 2 || cached.dim(0) != rows || cached.dim(1) != d) cached = positional_table(rows, d);
  return num::add_constant(X, cached);
}

InstructionEncoding encode_instruction(num::Tape& tape, const EncoderParams& p, const EncoderDims& dims,
                                       std::span<const int> tokens, DropoutSpec dropout) {
  if (tokens.empty() || tokens.size() > dims.max_length)
    throw ContractError("instruction length " + std::to_string(tokens.size()) + " outside [1, " +
                        std::to_string(dims.max_length) + "]");
  Var emb = tape.param(p.embedding);
  const std::size_t vocab = emb.value().dim(0);
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw EncodingError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));

  const num::LstmWeights w{tape.param(p.lstm_weight), tape.param(p.lstm_bias)};
  const std::size_t d_x = w.bias.size() / 4;
  Var h = tape.constant(Tensor({d_x}));
  Var c = tape.constant(Tensor({d_x}));
  std::vector<Var> rows;
  rows.reserve(tokens.size());
  for (int t : tokens) {
    Var e = num::row(emb, static_cast<std::size_t>(t));
    if (dropout.rng && dropout.rate > 0.0) e = num::dropout(e, dropout_mask(e.shape(), dropout.rate, *dropout.rng));
    auto out = num::lstm_cell(e, h, c, w);
    h = out.h;
    c = out.c;
    rows.push_back(h);
  }
  InstructionEncoding enc;
  enc.length = tokens.size();
  enc.X = num::stack_rows(rows, dims.max_length);
  enc.pe_X = positional_encoding(enc.X);
  enc.mask.assign(dims.max_length, false);
  for (std::size_t l = 0; l < tokens.size(); ++l) enc.mask[l] = true;
  return enc;
}

}  // namespace selfmon::encoder
