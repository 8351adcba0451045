#include "selfmon/lstm.hpp"

#include <cmath>
#include <vector>

#include "selfmon/errors.hpp"

namespace selfmon::num {

LstmOutput lstm_cell(Var input, Var h_prev, Var c_prev, const LstmWeights& w) {
  const std::size_t d_h = h_prev.size();
  const std::size_t d_in = input.size();
  const Tensor& W = w.weight.value();
  if (c_prev.size() != d_h || W.rank() != 2 || W.dim(0) != d_in + d_h || W.dim(1) != 4 * d_h)
    throw DimensionError("lstm_cell: input [" + std::to_string(d_in) + "], h [" + std::to_string(d_h) +
                         "], c " + shape_string(c_prev.shape()) + ", weight " + shape_string(W.shape()));
  const Var gates = linear(concat({input, h_prev}), w.weight, w.bias);
  const Var hc = gate_update(gates, c_prev);
  return {slice(hc, 0, d_h), slice(hc, d_h, d_h)};
}

namespace {

double logistic(double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

}  // namespace

Var gate_update(Var gates, Var c_prev) {
  const std::size_t d_h = c_prev.size();
  if (gates.value().rank() != 1 || gates.size() != 4 * d_h)
    throw DimensionError("gate_update: gates " + shape_string(gates.shape()) + " for cell size " +
                         std::to_string(d_h));
  if (gates.tape() != c_prev.tape()) throw ContractError("operands live on different tapes");
  const Tensor& z = gates.value();
  const Tensor& cp = c_prev.value();
  // Activations in gate order, then tanh(c).
  std::vector<double> act(5 * d_h);
  Tensor out({2 * d_h});
  for (std::size_t j = 0; j < d_h; ++j) {
    const double i = logistic(z[j]), f = logistic(z[d_h + j]), g = std::tanh(z[2 * d_h + j]),
                 o = logistic(z[3 * d_h + j]);
    const double c = f * cp[j] + i * g;
    const double tc = std::tanh(c);
    act[j] = i;
    act[d_h + j] = f;
    act[2 * d_h + j] = g;
    act[3 * d_h + j] = o;
    act[4 * d_h + j] = tc;
    out[j] = o * tc;
    out[d_h + j] = c;
  }
  const auto iz = gates.id(), ic = c_prev.id();
  return gates.tape()->record(std::move(out), {iz, ic},
                              [iz, ic, d_h, act = std::move(act)](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& cp = tp.value(ic);
    Tensor* dz = tp.grad_target(iz);
    Tensor* dcp = tp.grad_target(ic);
    for (std::size_t j = 0; j < d_h; ++j) {
      const double i = act[j], f = act[d_h + j], g = act[2 * d_h + j], o = act[3 * d_h + j], tc = act[4 * d_h + j];
      const double dh = dy[j];
      const double dc = dy[d_h + j] + dh * o * (1.0 - tc * tc);
      if (dz) {
        (*dz)[j] += dc * g * i * (1.0 - i);
        (*dz)[d_h + j] += dc * cp[j] * f * (1.0 - f);
        (*dz)[2 * d_h + j] += dc * i * (1.0 - g * g);
        (*dz)[3 * d_h + j] += dh * tc * o * (1.0 - o);
      }
      if (dcp) (*dcp)[j] += dc * f;
    }
  });
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

void add_lstm_parameters(ParameterSet& params, const std::string& prefix, std::size_t d_in,
                         std::size_t d_h, Rng& rng) {
  params.add(prefix + ".W", uniform_init({d_in + d_h, 4 * d_h}, d_h, rng));
  Tensor b({4 * d_h});
  for (std::size_t j = d_h; j < 2 * d_h; ++j) b[j] = 1.0;
  params.add(prefix + ".b", std::move(b));
}

}  // namespace selfmon::num
