#include "selfmon/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "json.hpp"

#include "selfmon/errors.hpp"

namespace selfmon::training {

using nlohmann::json;
using num::Var;

double progress_target(double d_start, double d_now, double threshold) {
  if (d_start <= 0.0) throw ContractError("progress target needs a positive start distance");
  if (d_now < threshold) return 1.0;
  return (d_start - d_now) / d_start;
}

std::size_t teacher_action(const worldgen::NavGraph& graph, int current, int goal) {
  if (current == goal) return 0;
  const auto path = graph.shortest_path(current, goal);
  const auto& nbrs = graph.neighbors(current);
  for (std::size_t k = 0; k < nbrs.size(); ++k)
    if (nbrs[k].target == path[1]) return k + 1;
  throw ContractError("shortest path leaves through a non-neighbor");
}

RolloutRecord rollout_episode(num::Tape& tape, const agent::AgentModel& model, const worldgen::NavGraph& graph,
                              const worldgen::FeatureSpec& spec, const worldgen::Episode& episode, RolloutMode mode,
                              Rng& rng, agent::StepContext& ctx, const LossConfig& cfg) {
  RolloutRecord rec;
  rec.d_start = graph.distance(episode.start, episode.goal);
  if (rec.d_start <= 0.0) throw ContractError("episode " + std::to_string(episode.id) + " starts at its goal");
  const auto enc = encoder::encode_instruction(tape, model.index().enc, model.dims().encoder(), episode.instruction,
                                               {model.dims().dropout, ctx.rng});
  auto state = agent::initial_state(tape, model);
  int vp = episode.start;
  rec.trajectory = {vp};
  for (int t = 0; t < cfg.max_steps; ++t) {
    const auto obs = agent::observe(graph, vp, spec);
    const auto step = agent::agent_step(tape, model, state, enc, obs, ctx);
    StepRecord s;
    s.viewpoint = vp;
    s.teacher = teacher_action(graph, vp, episode.goal);
    s.d_now = graph.distance(vp, episode.goal);
    s.y_pm = progress_target(rec.d_start, s.d_now, cfg.success_threshold);
    s.action = mode == RolloutMode::teacher ? s.teacher : rng.categorical(step.probs.value().values());
    s.logits = step.logits;
    s.probs = step.probs;
    s.p_pm = step.p_pm;
    s.alpha = step.alpha;
    const std::size_t action = s.action;
    rec.steps.push_back(std::move(s));
    if (action == 0) {
      rec.stopped = true;
      break;
    }
    state = agent::advance(tape, model, step, action);
    vp = obs.targets[action];
    rec.trajectory.push_back(vp);
  }
  return rec;
}

Var episode_loss(num::Tape& tape, const RolloutRecord& rollout, const LossConfig& cfg) {
  if (rollout.steps.empty()) throw ContractError("episode loss of an empty rollout");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
  Var ce, mse;
  for (const auto& s : rollout.steps) {
    const Var nll = num::scale(num::pick(num::log_softmax(s.logits), s.teacher), -1.0);
    const Var err = num::square(num::sub(s.p_pm, tape.constant(num::Tensor::scalar(s.y_pm))));
    ce = ce.valid() ? num::add(ce, nll) : nll;
    mse = mse.valid() ? num::add(mse, err) : err;
  }
  return num::add(num::scale(ce, cfg.lambda), num::scale(mse, 1.0 - cfg.lambda));
}

EpisodeGradient episode_gradient(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                 const worldgen::Episode& episode, RolloutMode mode, const LossConfig& cfg,
                                 std::uint64_t seed) {
  num::Tape tape(&model.params());
  Rng rng(seed);
  EpisodeGradient out;
  agent::StepContext ctx{&rng, &out.bn};
  const auto rec =
      rollout_episode(tape, model, bench.world(episode.world_id), bench.params.features, episode, mode, rng, ctx, cfg);
  const Var loss = episode_loss(tape, rec, cfg);
  out.loss = loss.item();
  tape.backward(loss);
  out.grads = tape.parameter_gradients();
  return out;
}

namespace {

BatchGradient reduce(std::vector<EpisodeGradient>& parts, const num::ParameterSet& params) {
  BatchGradient b;
  b.grads = num::zero_gradients(params);
  for (auto& p : parts) {
    b.losses.push_back(p.loss);
    b.mean_loss += p.loss;
    num::accumulate(b.grads, p.grads);
    b.bn.merge(p.bn);
  }
  const double n = static_cast<double>(parts.size());
  b.mean_loss /= n;
  num::scale(b.grads, 1.0 / n);
  return b;
}

void check_batch(std::span<const worldgen::Episode* const> episodes, std::span<const std::uint64_t> seeds) {
  if (episodes.empty()) throw ContractError("empty batch");
  if (episodes.size() != seeds.size()) throw ContractError("one seed per batch episode required");
}

}  // namespace

BatchGradient batch_gradient_serial(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                    std::span<const worldgen::Episode* const> episodes,
                                    std::span<const std::uint64_t> seeds, RolloutMode mode, const LossConfig& cfg) {
  check_batch(episodes, seeds);
  std::vector<EpisodeGradient> parts;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    parts.push_back(episode_gradient(model, bench, *episodes[i], mode, cfg, seeds[i]));
  return reduce(parts, model.params());
}

BatchGradient batch_gradient_parallel(const agent::AgentModel& model, const worldgen::Benchmark& bench,
                                      std::span<const worldgen::Episode* const> episodes,
                                      std::span<const std::uint64_t> seeds, RolloutMode mode, const LossConfig& cfg,
                                      int threads) {
  check_batch(episodes, seeds);
  std::vector<EpisodeGradient> parts(episodes.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(episodes.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(threads, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      parts[i] = episode_gradient(model, bench, *episodes[i], mode, cfg, seeds[i]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return reduce(parts, model.params());
}

// ---------------------------------------------------------------- serialization

namespace {

json dims_to_json(const agent::ModelDims& d) {
  return {{"vocab_size", d.vocab_size}, {"d_embed", d.d_embed}, {"d_x", d.d_x},
          {"d_h", d.d_h},               {"d_v", d.d_v},         {"d_g", d.d_g},
          {"d_a", d.d_a},               {"max_length", d.max_length}, {"k_max", d.k_max},
          {"dropout", d.dropout},       {"use_batchnorm", d.use_batchnorm}};
}

agent::ModelDims dims_from_json(const json& j) {
  agent::ModelDims d;
  d.vocab_size = j.at("vocab_size").get<std::size_t>();
  d.d_embed = j.at("d_embed").get<std::size_t>();
  d.d_x = j.at("d_x").get<std::size_t>();
  d.d_h = j.at("d_h").get<std::size_t>();
  d.d_v = j.at("d_v").get<std::size_t>();
  d.d_g = j.at("d_g").get<std::size_t>();
  d.d_a = j.at("d_a").get<std::size_t>();
  d.max_length = j.at("max_length").get<std::size_t>();
  d.k_max = j.at("k_max").get<std::size_t>();
  d.dropout = j.at("dropout").get<double>();
  d.use_batchnorm = j.at("use_batchnorm").get<bool>();
  return d;
}

json tensors_to_json(const num::GradientSet& g) {
  json a = json::array();
  for (const auto& t : g) a.push_back({{"shape", t.shape()}, {"values", t.storage()}});
  return a;
}

num::Tensor tensor_from_json(const json& j) {
  return num::Tensor(j.at("shape").get<num::Shape>(), j.at("values").get<std::vector<double>>());
}

json aggregate_json(const metrics::Aggregate& a) {
  return {{"episodes", a.episodes}, {"NE", a.ne},   {"SR", a.sr},
          {"OSR", a.osr},           {"SPL", a.spl}, {"path_length", a.path_length},
          {"stitched_SPL", a.stitched_spl}};
}

metrics::Aggregate aggregate_from(const json& j) {
  metrics::Aggregate a;
  a.episodes = j.at("episodes").get<std::size_t>();
  a.ne = j.at("NE").get<double>();
  a.sr = j.at("SR").get<double>();
  a.osr = j.at("OSR").get<double>();
  a.spl = j.at("SPL").get<double>();
  a.path_length = j.at("path_length").get<double>();
  a.stitched_spl = j.at("stitched_SPL").get<double>();
  return a;
}

json config_json(const TrainConfig& c) {
  return {{"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"lambda", c.loss.lambda},
          {"success_threshold", c.loss.success_threshold},
          {"max_steps", c.loss.max_steps},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"bn_momentum", c.bn_momentum},
          {"threads", c.threads},
          {"mode", c.mode == RolloutMode::sample ? "sample" : "teacher"},
          {"validate", c.validate}};
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.adam.lr = j.at("lr").get<double>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("eps").get<double>();
  c.batch = j.at("batch").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.loss.lambda = j.at("lambda").get<double>();
  c.loss.success_threshold = j.at("success_threshold").get<double>();
  c.loss.max_steps = j.at("max_steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  c.threads = j.at("threads").get<int>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode != "sample" && mode != "teacher") throw ConfigError("unknown rollout mode '" + mode + "'");
  c.mode = mode == "sample" ? RolloutMode::sample : RolloutMode::teacher;
  c.validate = j.at("validate").get<bool>();
  return c;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
}

std::string model_dims_to_json(const agent::ModelDims& dims) { return dims_to_json(dims).dump(); }

agent::ModelDims model_dims_from_json(const std::string& text) {
  try {
    return dims_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model dims: ") + e.what());
  }
}

std::string epoch_to_jsonl(const EpochRecord& r) {
  std::string out;
  out += json{{"epoch", r.epoch}, {"split", "train"}, {"loss", r.train_loss}}.dump() + "\n";
  for (const auto& [name, a] : {std::pair{"val_seen", r.val_seen}, std::pair{"val_unseen", r.val_unseen}}) {
    if (a.episodes == 0) continue;
    out += json{{"epoch", r.epoch}, {"split", name},  {"NE", a.ne},  {"SR", a.sr},
                {"OSR", a.osr},     {"SPL", a.spl},   {"loss", r.train_loss}}
               .dump() +
           "\n";
  }
  return out;
}

std::string checkpoint_to_text(const Checkpoint& ck) {
  json params = json::array();
  for (const auto& p : ck.params)
    params.push_back(
        {{"name", p.name}, {"trainable", p.trainable}, {"shape", p.tensor.shape()}, {"values", p.tensor.storage()}});
  json history = json::array();
  for (const auto& h : ck.history)
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"val_seen", aggregate_json(h.val_seen)},
                       {"val_unseen", aggregate_json(h.val_unseen)}});
  json root = {{"schema_version", kCheckpointSchemaVersion},
               {"kind", "checkpoint"},
               {"dims", dims_to_json(ck.dims)},
               {"config", ck.config.empty() ? json(nullptr) : json::parse(ck.config)},
               {"run_config", ck.run_config.empty() ? json(nullptr) : json::parse(ck.run_config)},
               {"params", std::move(params)},
               {"adam", {{"step", ck.adam.step}, {"m", tensors_to_json(ck.adam.m)}, {"v", tensors_to_json(ck.adam.v)}}},
               {"rng_state", ck.rng_state},
               {"epoch", ck.epoch},
               {"cursor", ck.cursor},
               {"order", ck.order},
               {"epoch_loss_sum", ck.epoch_loss_sum},
               {"epoch_batches", ck.epoch_batches},
               {"step", ck.step},
               {"best_sr", ck.best_sr},
               {"best_epoch", ck.best_epoch},
               {"history", std::move(history)}};
  return root.dump() + "\n";
}

Checkpoint checkpoint_from_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    const int version = root.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw VersionError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointSchemaVersion) + ")");
    if (root.at("kind").get<std::string>() != "checkpoint") throw ParseError("file is not a checkpoint");
    Checkpoint ck;
    ck.dims = dims_from_json(root.at("dims"));
    if (!root.at("config").is_null()) ck.config = root.at("config").dump();
    if (root.contains("run_config") && !root.at("run_config").is_null()) ck.run_config = root.at("run_config").dump();
    for (const auto& p : root.at("params"))
      ck.params.add(p.at("name").get<std::string>(), tensor_from_json(p), p.at("trainable").get<bool>());
    const auto& adam = root.at("adam");
    ck.adam.step = adam.at("step").get<std::uint64_t>();
    for (const auto& t : adam.at("m")) ck.adam.m.push_back(tensor_from_json(t));
    for (const auto& t : adam.at("v")) ck.adam.v.push_back(tensor_from_json(t));
    ck.rng_state = root.at("rng_state").get<std::string>();
    ck.epoch = root.at("epoch").get<int>();
    ck.cursor = root.at("cursor").get<std::size_t>();
    ck.order = root.at("order").get<std::vector<int>>();
    ck.epoch_loss_sum = root.at("epoch_loss_sum").get<double>();
    ck.epoch_batches = root.at("epoch_batches").get<int>();
    ck.step = root.at("step").get<std::uint64_t>();
    ck.best_sr = root.at("best_sr").get<double>();
    ck.best_epoch = root.at("best_epoch").get<int>();
    for (const auto& h : root.at("history"))
      ck.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                            aggregate_from(h.at("val_seen")), aggregate_from(h.at("val_unseen"))});
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid checkpoint structure: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("invalid checkpoint tensor: ") + e.what());
  } catch (const ContractError& e) {
    throw ParseError(std::string("invalid checkpoint parameters: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out << checkpoint_to_text(ck);
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_text(ss.str());
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const worldgen::Benchmark& bench, agent::AgentModel model, TrainConfig cfg)
    : bench_(bench), model_(std::move(model)), cfg_(cfg), rng_(derive_seed({cfg.seed, 0x7261696eULL})) {
  if (cfg_.batch < 1) throw ConfigError("batch size must be at least 1");
  if (cfg_.epochs < 0) throw ConfigError("epoch count must be nonnegative");
  if (cfg_.adam.lr < 0.0) throw ConfigError("learning rate must be nonnegative");
  if (cfg_.clip_norm <= 0.0) throw ConfigError("clip norm must be positive");
  if (cfg_.loss.lambda < 0.0 || cfg_.loss.lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
  if (bench_.split(worldgen::Split::train).empty()) throw DataError("benchmark has no training episodes");
  const auto& d = model_.dims();
  if (d.vocab_size != static_cast<std::size_t>(bench_.vocab.size()) ||
      d.d_v != static_cast<std::size_t>(bench_.params.features.feature_dim()))
    throw ConfigError("model dims (vocab " + std::to_string(d.vocab_size) + ", d_v " + std::to_string(d.d_v) +
                      ") do not match the benchmark (vocab " + std::to_string(bench_.vocab.size()) + ", d_v " +
                      std::to_string(bench_.params.features.feature_dim()) + ")");
  cfg_.loss.success_threshold = bench_.success_threshold;
  adam_ = num::AdamState::zeros_like(model_.params());
  best_ = checkpoint();
}

Trainer Trainer::resume(const worldgen::Benchmark& bench, const Checkpoint& ck, int threads) {
  TrainConfig cfg = train_config_from_json(ck.config);
  cfg.threads = threads;
  Trainer t(bench, agent::AgentModel::from_parameters(ck.dims, ck.params), cfg);
  if (ck.adam.m.size() != t.model_.params().size()) throw ConfigError("optimizer state does not match the model");
  t.adam_ = ck.adam;
  t.rng_.restore(ck.rng_state);
  t.epoch_ = ck.epoch;
  t.cursor_ = ck.cursor;
  t.order_ = ck.order;
  t.epoch_loss_sum_ = ck.epoch_loss_sum;
  t.epoch_batches_ = ck.epoch_batches;
  t.best_sr_ = ck.best_sr;
  t.best_epoch_ = ck.best_epoch;
  t.history_ = ck.history;
  t.best_ = t.checkpoint();
  return t;
}

void Trainer::begin_epoch() {
  order_.clear();
  for (const auto* e : bench_.split(worldgen::Split::train)) order_.push_back(e->id);
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
  cursor_ = 0;
  epoch_loss_sum_ = 0.0;
  epoch_batches_ = 0;
}

double Trainer::step() {
  if (order_.empty() || epoch_done()) begin_epoch();
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(cfg_.batch));
  std::vector<const worldgen::Episode*> batch;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = cursor_; i < end; ++i) {
    batch.push_back(&bench_.episode(order_[i]));
    seeds.push_back(derive_seed({cfg_.seed, static_cast<std::uint64_t>(epoch_), static_cast<std::uint64_t>(order_[i])}));
  }
  BatchGradient g = cfg_.threads > 1
                        ? batch_gradient_parallel(model_, bench_, batch, seeds, cfg_.mode, cfg_.loss, cfg_.threads)
                        : batch_gradient_serial(model_, bench_, batch, seeds, cfg_.mode, cfg_.loss);
  if (!std::isfinite(g.mean_loss) || !num::all_finite(g.grads)) {
    std::string ids;
    for (std::size_t i = 0; i < batch.size(); ++i)
      ids += (i ? ", " : "") + std::to_string(batch[i]->id) + " (loss " + std::to_string(g.losses[i]) + ")";
    throw NumericError("non-finite loss or gradient at step " + std::to_string(adam_.step) + ", epoch " +
                       std::to_string(epoch_ + 1) + "; batch episodes: " + ids);
  }
  if (cfg_.adam.lr > 0.0) {
    num::clip_global_norm(g.grads, cfg_.clip_norm);
    num::adam_step(model_.params(), g.grads, adam_, cfg_.adam);
    agent::update_batchnorm(model_, g.bn, adam_.step == 1 ? 1.0 : cfg_.bn_momentum);
  }
  cursor_ = end;
  epoch_loss_sum_ += g.mean_loss;
  ++epoch_batches_;
  return g.mean_loss;
}

EpochRecord Trainer::finish_epoch() {
  EpochRecord r;
  r.epoch = ++epoch_;
  r.train_loss = epoch_batches_ ? epoch_loss_sum_ / epoch_batches_ : 0.0;
  if (cfg_.validate) {
    inference::DecodeOptions opt;
    opt.max_steps = cfg_.loss.max_steps;
    r.val_seen = metrics::evaluate_split_parallel(model_, bench_, worldgen::Split::val_seen, opt, cfg_.threads).summary;
    r.val_unseen =
        metrics::evaluate_split_parallel(model_, bench_, worldgen::Split::val_unseen, opt, cfg_.threads).summary;
  }
  order_.clear();
  cursor_ = 0;
  epoch_loss_sum_ = 0.0;
  epoch_batches_ = 0;
  history_.push_back(r);
  const double sr = cfg_.validate ? r.val_unseen.sr : 0.0;
  if (sr > best_sr_ || !cfg_.validate) {
    best_sr_ = sr;
    best_epoch_ = r.epoch;
    best_ = checkpoint();
  }
  return r;
}

void Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    do step();
    while (!epoch_done());
    const auto r = finish_epoch();
    if (on_epoch) on_epoch(r);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.dims = model_.dims();
  ck.params = model_.params();
  ck.adam = adam_;
  ck.rng_state = rng_.state();
  ck.config = train_config_to_json(cfg_);
  ck.epoch = epoch_;
  ck.cursor = cursor_;
  ck.order = order_;
  ck.epoch_loss_sum = epoch_loss_sum_;
  ck.epoch_batches = epoch_batches_;
  ck.step = adam_.step;
  ck.best_sr = best_sr_;
  ck.best_epoch = best_epoch_;
  ck.history = history_;
  return ck;
}

}  // namespace selfmon::training
