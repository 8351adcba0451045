#include "selfmon/agent.hpp"

#include <cmath>
#include <string>

#include "selfmon/errors.hpp"

namespace selfmon::agent {
namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kMaskedScore = -1e30;

Tensor ones(std::size_t n) {
  Tensor t({n});
  t.fill(1.0);
  return t;
}

struct Expected {
  std::string name;
  num::Shape shape;
  bool trainable;
};

std::vector<Expected> expected_parameters(const ModelDims& d) {
  const std::size_t dec_in = d.d_x + d.d_g + d.d_a;
  return {
      {"enc.embedding", {d.vocab_size, d.d_embed}, true},
      {"enc.lstm.W", {d.d_embed + d.d_x, 4 * d.d_x}, true},
      {"enc.lstm.b", {4 * d.d_x}, true},
      {"g.bn1.gamma", {d.d_v}, true},
      {"g.bn1.beta", {d.d_v}, true},
      {"g.bn1.mean", {d.d_v}, false},
      {"g.bn1.var", {d.d_v}, false},
      {"g.fc.W", {d.d_v, d.d_g}, true},
      {"g.fc.b", {d.d_g}, true},
      {"g.bn2.gamma", {d.d_g}, true},
      {"g.bn2.beta", {d.d_g}, true},
      {"g.bn2.mean", {d.d_g}, false},
      {"g.bn2.var", {d.d_g}, false},
      {"W_x", {d.d_h, d.d_x}, true},
      {"b_x", {d.d_x}, true},
      {"W_v", {d.d_h, d.d_g}, true},
      {"b_v", {d.d_g}, true},
      {"dec.lstm.W", {dec_in + d.d_h, 4 * d.d_h}, true},
      {"dec.lstm.b", {4 * d.d_h}, true},
      {"W_a", {d.d_h + d.d_x, d.d_g}, true},
      {"b_a", {d.d_g}, true},
      {"W_h", {d.d_h + d.d_g, d.d_h}, true},
      {"b_h", {d.d_h}, true},
      {"W_pm", {d.max_length + d.d_h, 1}, true},
      {"b_pm", {1}, true},
      {"act.W", {d.d_g, d.d_a}, true},
      {"act.b", {d.d_a}, true},
      {"act.start", {d.d_a}, true},
  };
}

// Per-column normalization with frozen statistics followed by the learned affine map.
Var batchnorm(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var) {
  const std::size_t rows = x.value().dim(0), cols = x.value().dim(1);
  Tensor s({rows, cols}), t({rows, cols});
  for (std::size_t j = 0; j < cols; ++j) {
    const double inv = 1.0 / std::sqrt(var[j] + kBatchNormEps);
    for (std::size_t i = 0; i < rows; ++i) {
      s.at(i, j) = inv;
      t.at(i, j) = -mean[j] * inv;
    }
  }
  return num::add_rows(num::mul_rows(num::affine_constant(x, s, t), gamma), beta);
}

}  // namespace

ModelDims ModelDims::desk(std::size_t vocab_size, std::size_t d_v) {
  ModelDims d;
  d.vocab_size = vocab_size;
  d.d_v = d_v;
  return d;
}

ModelDims ModelDims::full_scale(std::size_t vocab_size, std::size_t d_v) {
  ModelDims d;
  d.vocab_size = vocab_size;
  d.d_embed = 256;
  d.d_x = 512;
  d.d_h = 512;
  d.d_v = d_v;
  d.d_g = 1024;
  d.d_a = 64;
  d.max_length = 80;
  return d;
}

void ModelDims::validate() const {
  if (vocab_size == 0 || d_embed == 0 || d_x == 0 || d_h == 0 || d_v == 0 || d_g == 0 || d_a == 0 ||
      max_length == 0 || k_max == 0)
    throw ConfigError("model dimensions must be positive");
  if (d_x % 2 != 0) throw ConfigError("d_x must be even for the positional encoding");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

AgentModel AgentModel::create(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng(seed);
  AgentModel m;
  m.dims_ = dims;
  auto& p = m.params_;
  encoder::add_encoder_parameters(p, dims.encoder(), rng);
  auto uniform = [&](num::Shape shape) { return num::uniform_init(shape, shape[0], rng); };
  const std::size_t dec_in = dims.d_x + dims.d_g + dims.d_a;
  p.add("g.bn1.gamma", ones(dims.d_v));
  p.add("g.bn1.beta", Tensor({dims.d_v}));
  p.add("g.bn1.mean", Tensor({dims.d_v}), false);
  p.add("g.bn1.var", ones(dims.d_v), false);
  p.add("g.fc.W", uniform({dims.d_v, dims.d_g}));
  p.add("g.fc.b", Tensor({dims.d_g}));
  p.add("g.bn2.gamma", ones(dims.d_g));
  p.add("g.bn2.beta", Tensor({dims.d_g}));
  p.add("g.bn2.mean", Tensor({dims.d_g}), false);
  p.add("g.bn2.var", ones(dims.d_g), false);
  p.add("W_x", uniform({dims.d_h, dims.d_x}));
  p.add("b_x", Tensor({dims.d_x}));
  p.add("W_v", uniform({dims.d_h, dims.d_g}));
  p.add("b_v", Tensor({dims.d_g}));
  num::add_lstm_parameters(p, "dec.lstm", dec_in, dims.d_h, rng);
  p.add("W_a", uniform({dims.d_h + dims.d_x, dims.d_g}));
  p.add("b_a", Tensor({dims.d_g}));
  p.add("W_h", uniform({dims.d_h + dims.d_g, dims.d_h}));
  p.add("b_h", Tensor({dims.d_h}));
  p.add("W_pm", uniform({dims.max_length + dims.d_h, 1}));
  p.add("b_pm", Tensor({1}));
  p.add("act.W", uniform({dims.d_g, dims.d_a}));
  p.add("act.b", Tensor({dims.d_a}));
  p.add("act.start", num::uniform_init({dims.d_a}, dims.d_a, rng));
  m.build_index();
  return m;
}

AgentModel AgentModel::from_parameters(const ModelDims& dims, num::ParameterSet params) {
  dims.validate();
  for (const auto& e : expected_parameters(dims)) {
    if (!params.contains(e.name)) throw ConfigError("parameter '" + e.name + "' missing");
    const auto& p = params[e.name];
    if (p.tensor.shape() != e.shape)
      throw ConfigError("parameter '" + e.name + "' has shape " + num::shape_string(p.tensor.shape()) +
                        ", model expects " + num::shape_string(e.shape));
    if (p.trainable != e.trainable) throw ConfigError("parameter '" + e.name + "' has the wrong trainable flag");
  }
  if (params.size() != expected_parameters(dims).size()) throw ConfigError("unexpected extra parameters");
  AgentModel m;
  m.dims_ = dims;
  m.params_ = std::move(params);
  m.build_index();
  return m;
}

void AgentModel::build_index() {
  auto& p = params_;
  auto& i = index_;
  i.enc = {p.index_of("enc.embedding"), p.index_of("enc.lstm.W"), p.index_of("enc.lstm.b")};
  i.bn1_gamma = p.index_of("g.bn1.gamma");
  i.bn1_beta = p.index_of("g.bn1.beta");
  i.bn1_mean = p.index_of("g.bn1.mean");
  i.bn1_var = p.index_of("g.bn1.var");
  i.fc_w = p.index_of("g.fc.W");
  i.fc_b = p.index_of("g.fc.b");
  i.bn2_gamma = p.index_of("g.bn2.gamma");
  i.bn2_beta = p.index_of("g.bn2.beta");
  i.bn2_mean = p.index_of("g.bn2.mean");
  i.bn2_var = p.index_of("g.bn2.var");
  i.w_x = p.index_of("W_x");
  i.b_x = p.index_of("b_x");
  i.w_v = p.index_of("W_v");
  i.b_v = p.index_of("b_v");
  i.dec_w = p.index_of("dec.lstm.W");
  i.dec_b = p.index_of("dec.lstm.b");
  i.w_a = p.index_of("W_a");
  i.b_a = p.index_of("b_a");
  i.w_h = p.index_of("W_h");
  i.b_h = p.index_of("b_h");
  i.w_pm = p.index_of("W_pm");
  i.b_pm = p.index_of("b_pm");
  i.act_w = p.index_of("act.W");
  i.act_b = p.index_of("act.b");
  i.act_start = p.index_of("act.start");
}

Observation observe(const worldgen::NavGraph& graph, int viewpoint, const worldgen::FeatureSpec& spec) {
  Observation obs;
  obs.viewpoint = viewpoint;
  const auto& nbrs = graph.neighbors(viewpoint);
  const std::size_t d_v = static_cast<std::size_t>(spec.feature_dim());
  obs.features = Tensor({nbrs.size() + 1, d_v});
  obs.targets.push_back(viewpoint);
  for (std::size_t k = 0; k < nbrs.size(); ++k) {
    obs.targets.push_back(nbrs[k].target);
    const Tensor f = worldgen::observed_direction_feature(graph, viewpoint, nbrs[k].target, spec);
    std::copy(f.values().begin(), f.values().end(), obs.features.row(k + 1).begin());
  }
  return obs;
}

std::size_t direction_of(const Observation& obs, int target) {
  for (std::size_t k = 0; k < obs.targets.size(); ++k)
    if (obs.targets[k] == target) return k;
  throw ContractError("viewpoint " + std::to_string(target) + " is not reachable from " +
                      std::to_string(obs.viewpoint));
}

void BatchNormAccumulator::add(const Tensor& pre_bn1, const Tensor& pre_bn2) {
  const std::size_t rows = pre_bn1.dim(0), c1 = pre_bn1.dim(1), c2 = pre_bn2.dim(1);
  if (sum1.empty()) {
    sum1.assign(c1, 0.0);
    sq1.assign(c1, 0.0);
    sum2.assign(c2, 0.0);
    sq2.assign(c2, 0.0);
  }
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < c1; ++j) {
      sum1[j] += pre_bn1.at(i, j);
      sq1[j] += pre_bn1.at(i, j) * pre_bn1.at(i, j);
    }
    for (std::size_t j = 0; j < c2; ++j) {
      sum2[j] += pre_bn2.at(i, j);
      sq2[j] += pre_bn2.at(i, j) * pre_bn2.at(i, j);
    }
  }
  count += static_cast<double>(rows);
}

void BatchNormAccumulator::merge(const BatchNormAccumulator& o) {
  if (o.count == 0.0) return;
  if (sum1.empty()) {
    *this = o;
    return;
  }
  for (std::size_t j = 0; j < sum1.size(); ++j) {
    sum1[j] += o.sum1[j];
    sq1[j] += o.sq1[j];
  }
  for (std::size_t j = 0; j < sum2.size(); ++j) {
    sum2[j] += o.sum2[j];
    sq2[j] += o.sq2[j];
  }
  count += o.count;
}

void update_batchnorm(AgentModel& model, const BatchNormAccumulator& acc, double momentum) {
  if (acc.count < 2.0) return;
  if (momentum <= 0.0 || momentum > 1.0) throw ConfigError("batch-norm momentum must lie in (0, 1]");
  auto blend = [&](std::size_t mean_idx, std::size_t var_idx, const std::vector<double>& s,
                   const std::vector<double>& sq) {
    Tensor& mean = model.params()[mean_idx].tensor;
    Tensor& var = model.params()[var_idx].tensor;
    if (s.size() != mean.size()) throw DimensionError("batch-norm statistics do not match the model");
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double m = s[j] / acc.count;
      const double v = std::max(0.0, sq[j] / acc.count - m * m) * acc.count / (acc.count - 1.0);
      mean[j] = (1.0 - momentum) * mean[j] + momentum * m;
      var[j] = (1.0 - momentum) * var[j] + momentum * v;
    }
  };
  const auto& i = model.index();
  blend(i.bn1_mean, i.bn1_var, acc.sum1, acc.sq1);
  blend(i.bn2_mean, i.bn2_var, acc.sum2, acc.sq2);
}

AgentState initial_state(Tape& tape, const AgentModel& model) {
  const std::size_t d_h = model.dims().d_h;
  return {tape.constant(Tensor({d_h})), tape.constant(Tensor({d_h})), tape.param(model.index().act_start)};
}

TextualGrounding textual_grounding(Tape& tape, const AgentModel& model, Var h_prev,
                                   const encoder::InstructionEncoding& enc) {
  if (enc.length == 0) throw ContractError("textual grounding over an empty instruction");
  const auto& ix = model.index();
  const Var q = num::linear(h_prev, tape.param(ix.w_x), tape.param(ix.b_x));
  Tensor mask({enc.mask.size()});
  for (std::size_t l = 0; l < enc.mask.size(); ++l) mask[l] = enc.mask[l] ? 0.0 : kMaskedScore;
  const Var alpha = num::softmax(num::add_constant(num::matvec(enc.pe_X, q), mask));
  return {alpha, num::vecmat(alpha, enc.X)};
}

Var project_directions(Tape& tape, const AgentModel& model, const Observation& obs, StepContext& ctx) {
  const auto& d = model.dims();
  const auto& ix = model.index();
  const auto& p = model.params();
  if (obs.size() == 0) throw ContractError("observation has no directions");
  if (obs.features.rank() != 2 || obs.features.dim(1) != d.d_v || obs.features.dim(0) != obs.size())
    throw DimensionError("observation features " + num::shape_string(obs.features.shape()) + " do not match d_v " +
                         std::to_string(d.d_v));
  if (obs.size() > d.k_max + 1)
    throw ContractError("observation has " + std::to_string(obs.size()) + " directions, model allows " +
                        std::to_string(d.k_max + 1));
  Var x = tape.constant_ref(obs.features);
  if (d.use_batchnorm)
    x = batchnorm(x, tape.param(ix.bn1_gamma), tape.param(ix.bn1_beta), p[ix.bn1_mean].tensor,
                  p[ix.bn1_var].tensor);
  Var y = num::add_rows(num::matmul(x, tape.param(ix.fc_w)), tape.param(ix.fc_b));
  if (ctx.bn) ctx.bn->add(obs.features, y.value());
  if (d.use_batchnorm)
    y = batchnorm(y, tape.param(ix.bn2_gamma), tape.param(ix.bn2_beta), p[ix.bn2_mean].tensor,
                  p[ix.bn2_var].tensor);
  if (ctx.rng && d.dropout > 0.0) y = num::dropout(y, encoder::dropout_mask(y.shape(), d.dropout, *ctx.rng));
  return num::relu(y);
}

VisualGrounding visual_grounding(Tape& tape, const AgentModel& model, Var h_prev, Var projected) {
  if (projected.value().rank() != 2 || projected.value().dim(0) == 0)
    throw ContractError("visual grounding needs at least one direction");
  const auto& ix = model.index();
  const Var q = num::linear(h_prev, tape.param(ix.w_v), tape.param(ix.b_v));
  const Var beta = num::softmax(num::matvec(projected, q));
  return {beta, num::vecmat(beta, projected)};
}

num::LstmOutput decode_step(Tape& tape, const AgentModel& model, Var x_hat, Var v_hat, Var prev_action, Var h_prev,
                            Var c_prev) {
  const auto& ix = model.index();
  return num::lstm_cell(num::concat({x_hat, v_hat, prev_action}), h_prev, c_prev,
                        {tape.param(ix.dec_w), tape.param(ix.dec_b)});
}

ActionScores action_distribution(Tape& tape, const AgentModel& model, Var h, Var x_hat, Var projected) {
  const auto& ix = model.index();
  const Var q = num::linear(num::concat({h, x_hat}), tape.param(ix.w_a), tape.param(ix.b_a));
  const Var logits = num::matvec(projected, q);
  return {logits, num::softmax(logits)};
}

ProgressOutput progress_monitor(Tape& tape, const AgentModel& model, Var h_prev, Var c, Var v_hat, Var alpha) {
  const auto& ix = model.index();
  if (alpha.size() != model.dims().max_length)
    throw DimensionError("progress monitor expects alpha of length " + std::to_string(model.dims().max_length) +
                         ", got " + num::shape_string(alpha.shape()));
  const Var gate = num::sigmoid(num::linear(num::concat({h_prev, v_hat}), tape.param(ix.w_h), tape.param(ix.b_h)));
  const Var h_pm = num::mul(gate, num::tanh(c));
  const Var p = num::tanh(num::linear(num::concat({alpha, h_pm}), tape.param(ix.w_pm), tape.param(ix.b_pm)));
  return {h_pm, p};
}

StepResult agent_step(Tape& tape, const AgentModel& model, const AgentState& state,
                      const encoder::InstructionEncoding& enc, const Observation& obs, StepContext& ctx) {
  StepResult r;
  const auto text = textual_grounding(tape, model, state.h, enc);
  r.projected = project_directions(tape, model, obs, ctx);
  const auto vis = visual_grounding(tape, model, state.h, r.projected);
  const auto next = decode_step(tape, model, text.x_hat, vis.v_hat, state.prev_action, state.h, state.c);
  const auto act = action_distribution(tape, model, next.h, text.x_hat, r.projected);
  const auto pm = progress_monitor(tape, model, state.h, next.c, vis.v_hat, text.alpha);
  r.logits = act.logits;
  r.probs = act.probs;
  r.p_pm = pm.p_pm;
  r.alpha = text.alpha;
  r.beta = vis.beta;
  r.x_hat = text.x_hat;
  r.v_hat = vis.v_hat;
  r.h = next.h;
  r.c = next.c;
  return r;
}

AgentState advance(Tape& tape, const AgentModel& model, const StepResult& step, std::size_t action) {
  const auto& ix = model.index();
  const Var a = num::linear(num::row(step.projected, action), tape.param(ix.act_w), tape.param(ix.act_b));
  return {step.h, step.c, a};
}

}  // namespace selfmon::agent
