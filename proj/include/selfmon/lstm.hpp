#pragma once

#include <cstddef>
#include <string>

#include "selfmon/ops.hpp"
#include "selfmon/rng.hpp"

namespace selfmon::num {

/// Fused gate weights: weight is [(d_in + d_h) x 4 d_h] over the input [x, h_prev],
/// columns grouped as (input, forget, cell, output).
struct LstmWeights {
  Var weight;
  Var bias;
};

struct LstmOutput {
  Var h;
  Var c;
};

LstmOutput lstm_cell(Var input, Var h_prev, Var c_prev, const LstmWeights& w);

/// Cell update from pre-activation gates [4 d_h] and c_prev [d_h]; returns [h, c] as one
/// vector of length 2 d_h.
Var gate_update(Var gates, Var c_prev);

/// Adds `<prefix>.W` and `<prefix>.b`: uniform(-1/sqrt(d_h), 1/sqrt(d_h)) weights,
/// zero biases except the forget gate at 1.
void add_lstm_parameters(ParameterSet& params, const std::string& prefix, std::size_t d_in,
                         std::size_t d_h, Rng& rng);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) tensor.
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace selfmon::num
