#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "selfmon/ops.hpp"
#include "selfmon/rng.hpp"

namespace selfmon::encoder {

struct EncoderDims {
  std::size_t vocab_size = 0;
  std::size_t d_embed = 32;
  std::size_t d_x = 64;
  std::size_t max_length = 40;  // L_max
};

/// Parameter indices of the language encoder inside a ParameterSet.
struct EncoderParams {
  std::size_t embedding = 0;  // [vocab x d_embed]
  std::size_t lstm_weight = 0;
  std::size_t lstm_bias = 0;
};

/// Adds `enc.embedding`, `enc.lstm.W`, `enc.lstm.b`.
EncoderParams add_encoder_parameters(num::ParameterSet& params, const EncoderDims& dims, Rng& rng);

struct InstructionEncoding {
  num::Var X;     // [L_max x d_x], rows past `length` are zero
  num::Var pe_X;  // X plus the positional table
  std::size_t length = 0;
  std::vector<bool> mask;  // true for real tokens, size L_max
};

/// Train-time dropout on token embeddings; a null rng means evaluation mode.
struct DropoutSpec {
  double rate = 0.5;
  Rng* rng = nullptr;
};

InstructionEncoding encode_instruction(num::Tape& tape, const EncoderParams& p, const EncoderDims& dims,
                                       std::span<const int> tokens, DropoutSpec dropout = {});

/// pe(l)[2i] = sin(l / 10000^(2i/d)), pe(l)[2i+1] = cos(same). Throws ConfigError for odd d.
num::Tensor positional_table(std::size_t rows, std::size_t d);
num::Var positional_encoding(num::Var X);

/// Inverted dropout mask with entries 0 or 1/(1-rate).
num::Tensor dropout_mask(const num::Shape& shape, double rate, Rng& rng);

}  // namespace selfmon::encoder
