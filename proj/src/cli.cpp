#include "selfmon/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "selfmon/errors.hpp"
#include "selfmon/metrics.hpp"

namespace selfmon::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

json dims_json(const DimOverrides& d) {
  json j = json::object();
  auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("d_embed", d.d_embed);
  put("d_x", d.d_x);
  put("d_h", d.d_h);
  put("d_g", d.d_g);
  put("d_a", d.d_a);
  put("max_length", d.max_length);
  put("k_max", d.k_max);
  put("dropout", d.dropout);
  put("use_batchnorm", d.use_batchnorm);
  return j;
}

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

template <class T>
void take(const json& j, const char* key, std::optional<T>& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

// Keeps lambda and the progress-monitor flag consistent. `lambda_set` / `pm_set` say
// which of the two the caller specified in the current layer.
void reconcile_monitor(RunConfig& cfg, bool lambda_set, bool pm_set) {
  if (lambda_set && pm_set) {
    if (cfg.flags.progress_monitor != (cfg.lambda < 1.0))
      throw ConfigError("lambda " + std::to_string(cfg.lambda) + " contradicts progress_monitor=" +
                        (cfg.flags.progress_monitor ? "true" : "false"));
  } else if (lambda_set) {
    cfg.flags.progress_monitor = cfg.lambda < 1.0;
  } else if (pm_set) {
    if (!cfg.flags.progress_monitor) cfg.lambda = 1.0;
    else if (cfg.lambda >= 1.0) cfg.lambda = 0.5;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string with_run_config(json header, const RunConfig& cfg) {
  header["schema_version"] = kRunConfigSchemaVersion;
  header["run_config"] = json::parse(run_config_to_json(cfg));
  return header.dump() + "\n";
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j = {{"schema_version", kRunConfigSchemaVersion},
            {"benchmark", c.benchmark},
            {"preset", c.preset},
            {"dims", dims_json(c.dims)},
            {"lr", c.lr},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"lambda", c.lambda},
            {"beam_size", c.beam_size},
            {"max_steps", c.max_steps},
            {"pm_score", c.pm_score},
            {"state_factored", c.state_factored},
            {"flags",
             {{"co_grounding", c.flags.co_grounding},
              {"progress_monitor", c.flags.progress_monitor},
              {"beam", c.flags.beam},
              {"progress_inference", c.flags.progress_inference}}},
            {"seed", c.seed},
            {"deterministic", c.deterministic},
            {"threads", c.threads},
            {"out_dir", c.out_dir}};
  return j.dump();
}

RunConfig run_config_from_json(const std::string& text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown(j,
                   {"schema_version", "benchmark", "preset", "dims", "lr", "batch", "epochs", "lambda", "beam_size",
                    "max_steps", "pm_score", "state_factored", "flags", "seed", "deterministic", "threads", "out_dir"},
                   "run config");
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kRunConfigSchemaVersion)
      throw ConfigError("run config schema version " + j.at("schema_version").dump() + " is not supported");
    take(j, "benchmark", c.benchmark);
    take(j, "preset", c.preset);
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      reject_unknown(d, {"d_embed", "d_x", "d_h", "d_g", "d_a", "max_length", "k_max", "dropout", "use_batchnorm"},
                     "dims");
      take(d, "d_embed", c.dims.d_embed);
      take(d, "d_x", c.dims.d_x);
      take(d, "d_h", c.dims.d_h);
      take(d, "d_g", c.dims.d_g);
      take(d, "d_a", c.dims.d_a);
      take(d, "max_length", c.dims.max_length);
      take(d, "k_max", c.dims.k_max);
      take(d, "dropout", c.dims.dropout);
      take(d, "use_batchnorm", c.dims.use_batchnorm);
    }
    take(j, "lr", c.lr);
    take(j, "batch", c.batch);
    take(j, "epochs", c.epochs);
    take(j, "lambda", c.lambda);
    take(j, "beam_size", c.beam_size);
    take(j, "max_steps", c.max_steps);
    take(j, "pm_score", c.pm_score);
    take(j, "state_factored", c.state_factored);
    bool pm_set = false;
    if (j.contains("flags")) {
      const auto& f = j.at("flags");
      reject_unknown(f, {"co_grounding", "progress_monitor", "beam", "progress_inference"}, "flags");
      take(f, "co_grounding", c.flags.co_grounding);
      take(f, "progress_monitor", c.flags.progress_monitor);
      take(f, "beam", c.flags.beam);
      take(f, "progress_inference", c.flags.progress_inference);
      pm_set = f.contains("progress_monitor");
    }
    reconcile_monitor(c, j.contains("lambda"), pm_set);
    take(j, "seed", c.seed);
    take(j, "deterministic", c.deterministic);
    take(j, "threads", c.threads);
    take(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  if (!c.flags.co_grounding) throw ConfigError("co-grounding cannot be disabled; every ablation row uses it");
  if (c.flags.beam && c.flags.progress_inference)
    throw ConfigError("beam search and progress inference are exclusive inference modes");
  if (c.lambda < 0.0 || c.lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
  if (c.flags.progress_monitor != (c.lambda < 1.0))
    throw ConfigError("progress_monitor=" + std::string(c.flags.progress_monitor ? "true" : "false") +
                      " contradicts lambda " + std::to_string(c.lambda));
  if (c.lr < 0.0) throw ConfigError("learning rate must be nonnegative");
  if (c.batch < 1) throw ConfigError("batch size must be at least 1");
  if (c.epochs < 0) throw ConfigError("epoch count must be nonnegative");
  if (c.beam_size < 1) throw ConfigError("beam size must be at least 1");
  if (c.max_steps < 1) throw ConfigError("max steps must be at least 1");
  if (c.threads < 1) throw ConfigError("thread count must be at least 1");
  if (c.dims.dropout && (*c.dims.dropout < 0.0 || *c.dims.dropout >= 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
}

inference::Mode inference_mode(const RunConfig& c) {
  if (c.flags.beam) return inference::Mode::beam;
  if (c.flags.progress_inference) return inference::Mode::progress;
  return inference::Mode::greedy;
}

void set_inference_mode(RunConfig& c, inference::Mode mode) {
  c.flags.beam = mode == inference::Mode::beam;
  c.flags.progress_inference = mode == inference::Mode::progress;
}

training::TrainConfig train_config(const RunConfig& c) {
  training::TrainConfig t;
  t.adam.lr = c.lr;
  t.batch = c.batch;
  t.epochs = c.epochs;
  t.loss.lambda = c.lambda;
  t.loss.max_steps = c.max_steps;
  t.seed = c.seed;
  t.threads = c.threads;
  return t;
}

agent::ModelDims model_dims(const RunConfig& c, const worldgen::Benchmark& bench) {
  const auto vocab = static_cast<std::size_t>(bench.vocab.size());
  const auto d_v = static_cast<std::size_t>(bench.params.features.feature_dim());
  agent::ModelDims d =
      bench.params.preset == "full-scale" ? agent::ModelDims::full_scale(vocab, d_v) : agent::ModelDims::desk(vocab, d_v);
  const auto& o = c.dims;
  if (o.d_embed) d.d_embed = *o.d_embed;
  if (o.d_x) d.d_x = *o.d_x;
  if (o.d_h) d.d_h = *o.d_h;
  if (o.d_g) d.d_g = *o.d_g;
  if (o.d_a) d.d_a = *o.d_a;
  if (o.max_length) d.max_length = *o.max_length;
  if (o.k_max) d.k_max = *o.k_max;
  if (o.dropout) d.dropout = *o.dropout;
  if (o.use_batchnorm) d.use_batchnorm = *o.use_batchnorm;
  d.validate();
  return d;
}

inference::DecodeOptions decode_options(const RunConfig& c) {
  inference::DecodeOptions o;
  o.mode = inference_mode(c);
  o.max_steps = c.max_steps;
  o.beam.beam_size = c.beam_size;
  o.beam.max_steps = c.max_steps;
  o.beam.progress_score = c.pm_score;
  o.beam.state_factored = c.state_factored;
  return o;
}

std::vector<std::string> dims_diff(const agent::ModelDims& ck, const worldgen::Benchmark& bench) {
  std::vector<std::string> out;
  auto line = [&](const std::string& field, std::size_t a, std::size_t b, const char* relation) {
    out.push_back(field + ": checkpoint " + std::to_string(a) + ", benchmark " + relation + std::to_string(b));
  };
  const auto vocab = static_cast<std::size_t>(bench.vocab.size());
  const auto d_v = static_cast<std::size_t>(bench.params.features.feature_dim());
  if (ck.vocab_size != vocab) line("vocab_size", ck.vocab_size, vocab, "");
  if (ck.d_v != d_v) line("d_v", ck.d_v, d_v, "");
  std::size_t longest = 0;
  for (const auto& e : bench.episodes) longest = std::max(longest, e.instruction.size());
  if (ck.max_length < longest) line("max_length", ck.max_length, longest, "needs >= ");
  std::size_t degree = 0;
  for (const auto& g : bench.worlds)
    for (int v = 0; v < g.size(); ++v) degree = std::max(degree, g.neighbors(v).size());
  if (ck.k_max < degree) line("k_max", ck.k_max, degree, "needs >= ");
  return out;
}

std::vector<AblationRow> ablation_grid() {
  std::vector<AblationRow> rows;
  int n = 1;
  for (auto mode : {inference::Mode::greedy, inference::Mode::progress, inference::Mode::beam})
    for (bool pm : {false, true}) {
      AblationRow r;
      r.number = n++;
      r.flags.progress_monitor = pm;
      r.flags.beam = mode == inference::Mode::beam;
      r.flags.progress_inference = mode == inference::Mode::progress;
      rows.push_back(r);
    }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-3s %-3s %-3s %-7s %-9s %-5s | %11s %5s %5s %5s | %11s %5s %5s %5s\n", "#", "CG",
                "PM", "Greedy", "Progress", "Beam", "seen NE", "SR", "OSR", "SPL", "unseen NE", "SR", "OSR", "SPL");
  s << buf;
  auto cells = [](const std::optional<metrics::Aggregate>& a) {
    char b[64];
    if (!a) return std::string("          -     -     -     -");
    std::snprintf(b, sizeof b, "%11.2f %5.2f %5.2f %5.2f", a->ne, a->sr, a->osr, a->spl);
    return std::string(b);
  };
  for (const auto& r : rows) {
    auto mark = [](bool on) { return on ? "x" : ""; };
    std::snprintf(buf, sizeof buf, "%-3d %-3s %-3s %-7s %-9s %-5s | %s | %s\n", r.number,
                  mark(r.flags.co_grounding), mark(r.flags.progress_monitor),
                  mark(!r.flags.beam && !r.flags.progress_inference), mark(r.flags.progress_inference),
                  mark(r.flags.beam), cells(r.val_seen).c_str(), cells(r.val_unseen).c_str());
    s << buf;
  }
  return s.str();
}

// ---------------------------------------------------------------- commands

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

struct ModelFlags {
  std::optional<double> lr, lambda;
  std::optional<int> batch, epochs, max_steps;
  std::optional<std::size_t> beam_size;
  bool no_progress_monitor = false, no_pm_score = false, state_factored = false;
  std::optional<std::string> mode, hparams;
  DimOverrides dims;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config; command-line flags take precedence");
  cmd->add_option("--out-dir", f.out_dir, "Directory for output artifacts (env SELFMON_OUT_DIR)");
  cmd->add_option("--threads", f.threads, "Episode-level worker threads (env SELFMON_THREADS)");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_flag("--deterministic", f.deterministic, "Single-threaded, ignores SELFMON_THREADS");
}

void add_training(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--hparams", f.hparams, "Learning rate and batch preset: desk or full-scale")
      ->check(CLI::IsMember({"desk", "full-scale"}));
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--batch", f.batch, "Episodes per optimizer step");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--lambda", f.lambda, "Weight of the action loss; 1 disables the progress monitor loss");
  cmd->add_flag("--no-progress-monitor", f.no_progress_monitor, "Train with lambda = 1");
  cmd->add_option("--d-embed", f.dims.d_embed);
  cmd->add_option("--d-x", f.dims.d_x);
  cmd->add_option("--d-h", f.dims.d_h);
  cmd->add_option("--d-g", f.dims.d_g);
  cmd->add_option("--d-a", f.dims.d_a);
  cmd->add_option("--max-length", f.dims.max_length, "Instruction length L_max");
  cmd->add_option("--k-max", f.dims.k_max, "Navigable directions, STOP excluded");
  cmd->add_option("--dropout", f.dims.dropout);
}

void add_decoding(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--mode", f.mode, "greedy, progress or beam")->check(CLI::IsMember({"greedy", "progress", "beam"}));
  cmd->add_option("--beam-size", f.beam_size);
  cmd->add_option("--max-steps", f.max_steps, "Decision steps per episode");
  cmd->add_flag("--no-pm-score", f.no_pm_score, "Beam scores use action probabilities only");
  cmd->add_flag("--state-factored", f.state_factored, "At most one active hypothesis per viewpoint");
}

}  // namespace

void apply_hyperparameters(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg.lr = 3e-3;
    cfg.batch = 8;
  } else if (name == "full-scale") {
    cfg.lr = 1e-4;
    cfg.batch = 64;
  } else {
    throw ConfigError("unknown hyperparameter preset '" + name + "' (expected desk or full-scale)");
  }
}

namespace {

RunConfig resolve(const CommonFlags& common, const ModelFlags& m) {
  RunConfig c;
  if (!common.config.empty()) c = run_config_from_json(read_text(common.config), c);
  if (const char* dir = std::getenv("SELFMON_OUT_DIR"); dir && *dir) c.out_dir = dir;
  if (const char* t = std::getenv("SELFMON_THREADS"); t && *t) {
    char* end = nullptr;
    const long n = std::strtol(t, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError(std::string("SELFMON_THREADS must be a positive integer, got '") + t + "'");
    c.threads = static_cast<int>(n);
  }
  if (common.out_dir) c.out_dir = *common.out_dir;
  if (common.threads) c.threads = *common.threads;
  if (common.seed) c.seed = *common.seed;
  if (common.deterministic) c.deterministic = true;
  if (c.deterministic) c.threads = 1;

  if (m.hparams) apply_hyperparameters(c, *m.hparams);
  if (m.lr) c.lr = *m.lr;
  if (m.batch) c.batch = *m.batch;
  if (m.epochs) c.epochs = *m.epochs;
  if (m.max_steps) c.max_steps = *m.max_steps;
  if (m.beam_size) c.beam_size = *m.beam_size;
  if (m.no_pm_score) c.pm_score = false;
  if (m.state_factored) c.state_factored = true;
  if (m.mode) set_inference_mode(c, inference::mode_from_string(*m.mode));
  auto& d = c.dims;
  const auto& o = m.dims;
  if (o.d_embed) d.d_embed = o.d_embed;
  if (o.d_x) d.d_x = o.d_x;
  if (o.d_h) d.d_h = o.d_h;
  if (o.d_g) d.d_g = o.d_g;
  if (o.d_a) d.d_a = o.d_a;
  if (o.max_length) d.max_length = o.max_length;
  if (o.k_max) d.k_max = o.k_max;
  if (o.dropout) d.dropout = o.dropout;
  if (m.lambda) c.lambda = *m.lambda;
  if (m.no_progress_monitor) c.flags.progress_monitor = false;
  reconcile_monitor(c, m.lambda.has_value(), m.no_progress_monitor);
  validate(c);
  return c;
}

std::vector<worldgen::Split> eval_splits(const std::string& name) {
  if (name == "all") return {worldgen::Split::val_seen, worldgen::Split::val_unseen};
  const auto s = worldgen::split_from_string(name);
  return {s};
}

metrics::EvalResult evaluate(const agent::AgentModel& model, const worldgen::Benchmark& bench, worldgen::Split split,
                             const inference::DecodeOptions& opts, int threads) {
  return threads > 1 ? metrics::evaluate_split_parallel(model, bench, split, opts, threads)
                     : metrics::evaluate_split_serial(model, bench, split, opts);
}

agent::AgentModel load_model(const training::Checkpoint& ck, const worldgen::Benchmark& bench, std::ostream& err) {
  const auto diff = dims_diff(ck.dims, bench);
  if (!diff.empty()) {
    err << "checkpoint does not fit the benchmark:\n";
    for (const auto& l : diff) err << "  " << l << "\n";
    throw ConfigError("checkpoint/benchmark shape mismatch");
  }
  return agent::AgentModel::from_parameters(ck.dims, ck.params);
}

int cmd_gen(const RunConfig& c, const std::string& out_path, std::ostream& out) {
  auto params = worldgen::benchmark_preset(c.preset);
  const auto bench = worldgen::generate_benchmark(c.seed, params);
  const fs::path path = out_path.empty() ? fs::path(c.out_dir) / "benchmark.json" : fs::path(out_path);
  write_text(path, worldgen::dataset_to_text(bench));
  out << "benchmark " << path.string() << "\n"
      << "  preset " << params.preset << ", seed " << c.seed << "\n"
      << "  worlds " << bench.worlds.size() << " (" << params.train_worlds << " train, " << params.val_unseen_worlds
      << " unseen)\n"
      << "  episodes train " << bench.split(worldgen::Split::train).size() << ", val_seen "
      << bench.split(worldgen::Split::val_seen).size() << ", val_unseen "
      << bench.split(worldgen::Split::val_unseen).size() << "\n"
      << "  vocab size " << bench.vocab.size() << ", d_v " << params.features.feature_dim() << "\n"
      << "  success threshold " << fmt("%.3f", bench.success_threshold) << " m, mean shortest distance "
      << fmt("%.3f", bench.mean_shortest_distance()) << " m\n";
  return kOk;
}

int cmd_train(RunConfig c, const std::string& resume, std::ostream& out, std::ostream& err) {
  if (c.benchmark.empty()) throw ConfigError("train needs --benchmark");
  const auto bench = worldgen::load_dataset(c.benchmark);
  c.preset = bench.params.preset;
  const fs::path dir(c.out_dir);
  const std::string run_json = run_config_to_json(c);

  std::optional<training::Trainer> trainer;
  if (!resume.empty()) {
    const auto ck = training::load_checkpoint(resume);
    load_model(ck, bench, err);
    trainer.emplace(training::Trainer::resume(bench, ck, c.threads));
  } else {
    trainer.emplace(bench, agent::AgentModel::create(model_dims(c, bench), c.seed), train_config(c));
  }

  std::string log = with_run_config({{"kind", "metrics"}}, c);
  for (const auto& r : trainer->history()) log += training::epoch_to_jsonl(r);
  write_text(dir / "metrics.jsonl", log);

  auto save = [&](training::Checkpoint ck, const char* name) {
    ck.run_config = run_json;
    fs::create_directories(dir);
    training::save_checkpoint(ck, dir / name);
  };
  try {
    trainer->run([&](const training::EpochRecord& r) {
      log += training::epoch_to_jsonl(r);
      write_text(dir / "metrics.jsonl", log);
      save(trainer->checkpoint(), "checkpoint.json");
      save(trainer->best(), "best.json");
      out << "epoch " << r.epoch << "  loss " << fmt("%.4f", r.train_loss) << "  val_seen SR "
          << fmt("%.3f", r.val_seen.sr) << "  val_unseen SR " << fmt("%.3f", r.val_unseen.sr) << "\n";
      out.flush();
    });
  } catch (const NumericError& e) {
    json dump = {{"kind", "nan_dump"},
                 {"message", e.what()},
                 {"epoch", trainer->epochs_completed()},
                 {"step", trainer->checkpoint().step}};
    write_text(dir / "nan_dump.json", with_run_config(dump, c));
    err << "numeric failure, diagnostics in " << (dir / "nan_dump.json").string() << "\n";
    throw;
  }
  if (trainer->history().empty()) save(trainer->checkpoint(), "checkpoint.json");
  const auto& best = trainer->best();
  out << "best epoch " << best.best_epoch << " (val_unseen SR " << fmt("%.3f", std::max(best.best_sr, 0.0))
      << "), checkpoints in " << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, const std::string& split, std::ostream& out,
             std::ostream& err) {
  if (c.benchmark.empty()) throw ConfigError("eval needs --benchmark");
  const auto bench = worldgen::load_dataset(c.benchmark);
  const auto ck = training::load_checkpoint(checkpoint);
  const auto model = load_model(ck, bench, err);
  const auto opts = decode_options(c);
  const std::string mode = inference::to_string(opts.mode);

  std::string traj = with_run_config({{"kind", "trajectories"}, {"checkpoint", checkpoint}}, c);
  std::vector<std::pair<std::string, metrics::Aggregate>> rows;
  json summary = {{"kind", "evaluation"}, {"checkpoint", checkpoint}, {"mode", mode}, {"splits", json::object()}};
  for (auto s : eval_splits(split)) {
    const auto r = evaluate(model, bench, s, opts, c.threads);
    rows.emplace_back(r.split, r.summary);
    summary["splits"][r.split] = json::parse(metrics::aggregate_to_json(r.summary));
    for (std::size_t i = 0; i < r.logs.size(); ++i) {
      traj += inference::trajectory_to_jsonl(r.logs[i]);
      const auto& e = r.episodes[i];
      traj += json{{"episode", e.episode_id}, {"split", r.split},          {"visited", r.logs[i].visited},
                   {"NE", e.ne},              {"success", e.success},      {"oracle_success", e.oracle_success},
                   {"SPL", e.spl},            {"stitched_SPL", e.stitched_spl}, {"warning", r.logs[i].warning}}
                  .dump() +
              "\n";
    }
  }
  const fs::path dir(c.out_dir);
  write_text(dir / ("trajectories_" + mode + ".jsonl"), traj);
  write_text(dir / ("eval_" + mode + ".json"), with_run_config(summary, c));
  out << "mode " << mode;
  if (opts.mode == inference::Mode::beam)
    out << " (beam " << opts.beam.beam_size << (opts.beam.progress_score ? ", progress-scored" : ", action-only")
        << (opts.beam.state_factored ? ", state-factored" : "") << ")";
  out << "\n" << metrics::format_table(rows);
  return kOk;
}

int cmd_ablate(const RunConfig& c, const std::string& cg_checkpoint, const std::string& pm_checkpoint,
               std::ostream& out, std::ostream& err) {
  if (c.benchmark.empty()) throw ConfigError("ablate needs --benchmark");
  const auto bench = worldgen::load_dataset(c.benchmark);
  std::optional<agent::AgentModel> models[2];
  const std::string paths[2] = {cg_checkpoint, pm_checkpoint};
  for (int pm = 0; pm < 2; ++pm) {
    const char* flag = pm ? "--pm-checkpoint" : "--cg-checkpoint";
    if (paths[pm].empty() || !fs::exists(paths[pm])) {
      err << "missing checkpoint for " << flag << (paths[pm].empty() ? "" : " (" + paths[pm] + ")")
          << "; skipping rows\n";
      continue;
    }
    const auto ck = training::load_checkpoint(paths[pm]);
    if (!ck.config.empty()) {
      const double lambda = training::train_config_from_json(ck.config).loss.lambda;
      if ((lambda < 1.0) != static_cast<bool>(pm))
        err << "warning: " << paths[pm] << " was trained with lambda " << lambda << "\n";
    }
    models[pm].emplace(load_model(ck, bench, err));
  }
  auto rows = ablation_grid();
  json report = {{"kind", "ablation"}, {"rows", json::array()}};
  for (auto& row : rows) {
    const auto& model = models[row.flags.progress_monitor ? 1 : 0];
    RunConfig rc = c;
    rc.flags = row.flags;
    rc.pm_score = row.flags.progress_monitor;
    json jr = {{"row", row.number},
               {"co_grounding", row.flags.co_grounding},
               {"progress_monitor", row.flags.progress_monitor},
               {"mode", inference::to_string(inference_mode(rc))}};
    if (model) {
      const auto opts = decode_options(rc);
      row.val_seen = evaluate(*model, bench, worldgen::Split::val_seen, opts, c.threads).summary;
      row.val_unseen = evaluate(*model, bench, worldgen::Split::val_unseen, opts, c.threads).summary;
      jr["val_seen"] = json::parse(metrics::aggregate_to_json(*row.val_seen));
      jr["val_unseen"] = json::parse(metrics::aggregate_to_json(*row.val_unseen));
    }
    report["rows"].push_back(jr);
  }
  write_text(fs::path(c.out_dir) / "ablation.json", with_run_config(report, c));
  out << format_ablation(rows);
  return kOk;
}

int cmd_trace(const RunConfig& c, const std::string& checkpoint, int episode_id, const std::string& out_path,
              std::ostream& out, std::ostream& err) {
  if (c.benchmark.empty()) throw ConfigError("trace needs --benchmark");
  const auto bench = worldgen::load_dataset(c.benchmark);
  const auto model = load_model(training::load_checkpoint(checkpoint), bench, err);
  const auto opts = decode_options(c);
  const auto& episode = bench.episode(episode_id);
  const auto result = inference::decode_episode(model, bench, episode, opts);
  const auto& log = result.log;

  std::string text = with_run_config({{"kind", "trace"}, {"checkpoint", checkpoint}, {"episode", episode_id},
                                      {"instruction_length", log.instruction_length}},
                                     c);
  for (const auto& s : log.steps) {
    std::vector<double> alpha(s.alpha.begin(), s.alpha.begin() + std::min(s.alpha.size(), log.instruction_length));
    text += json{{"t", s.t}, {"viewpoint", s.viewpoint}, {"alpha", alpha}, {"p_pm", s.p_pm}}.dump() + "\n";
  }
  const fs::path path =
      out_path.empty() ? fs::path(c.out_dir) / ("trace_" + std::to_string(episode_id) + ".jsonl") : fs::path(out_path);
  write_text(path, text);

  const auto& graph = bench.world(episode.world_id);
  const double ne = metrics::navigation_error(graph, log.final_viewpoint(), episode.goal);
  const auto own = metrics::attention_diagonality(std::span(&log, 1));
  out << "episode " << episode_id << ": " << log.steps.size() << " steps, NE " << fmt("%.2f", ne) << " m, "
      << (metrics::success(ne, bench.success_threshold) ? "success" : "failure") << "\n"
      << "  trace " << path.string() << "\n"
      << "  attention diagonality (this episode) " << fmt("%.3f", own.spearman) << (own.degenerate ? " (degenerate)" : "")
      << "\n";

  std::vector<inference::TrajectoryLog> successes;
  for (auto split : {worldgen::Split::val_seen, worldgen::Split::val_unseen}) {
    const auto r = evaluate(model, bench, split, opts, c.threads);
    for (std::size_t i = 0; i < r.logs.size(); ++i)
      if (r.episodes[i].success) successes.push_back(r.logs[i]);
    const auto aw = metrics::progress_awareness(r);
    out << "  " << r.split << ": rising p_pm share " << fmt("%.2f", aw.rising_share_success) << " success vs "
        << fmt("%.2f", aw.rising_share_failure) << " failure; mean final p_pm " << fmt("%.3f", aw.mean_final_success)
        << " vs " << fmt("%.3f", aw.mean_final_failure) << " (" << aw.successes << "/" << aw.failures << ")\n";
  }
  if (successes.empty()) {
    out << "  attention diagonality over successful val episodes: none succeeded\n";
    return kOk;
  }
  const auto diag = metrics::attention_diagonality(successes);
  out << "  attention diagonality over successful val episodes " << fmt("%.3f", diag.spearman)
      << (diag.degenerate ? " (degenerate)" : "") << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-monitoring navigation agent: benchmark generation, training and evaluation"};
  app.require_subcommand(1);
  CommonFlags common;
  ModelFlags model;
  std::string benchmark, preset, out_file, checkpoint, resume, split = "all", cg_checkpoint, pm_checkpoint;
  int episode = -1;

  auto* gen = app.add_subcommand("gen", "Generate a benchmark file");
  add_common(gen, common);
  gen->add_option("--preset", preset, "desk or full-scale");
  gen->add_option("--out", out_file, "Output file (default <out-dir>/benchmark.json)");

  auto* train = app.add_subcommand("train", "Train an agent");
  add_common(train, common);
  add_training(train, model);
  train->add_option("--benchmark", benchmark, "Benchmark file");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--max-steps", model.max_steps, "Decision steps per training episode");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation splits");
  add_common(eval, common);
  add_decoding(eval, model);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--benchmark", benchmark, "Benchmark file");
  eval->add_option("--split", split, "val_seen, val_unseen or all");

  auto* ablate = app.add_subcommand("ablate", "Loss x inference-mode grid");
  add_common(ablate, common);
  ablate->add_option("--benchmark", benchmark, "Benchmark file");
  ablate->add_option("--cg-checkpoint", cg_checkpoint, "Agent trained with lambda = 1");
  ablate->add_option("--pm-checkpoint", pm_checkpoint, "Agent trained with the progress monitor loss");
  ablate->add_option("--beam-size", model.beam_size);
  ablate->add_option("--max-steps", model.max_steps, "Decision steps per episode");

  auto* trace = app.add_subcommand("trace", "Export per-step attention and progress for one episode");
  add_common(trace, common);
  add_decoding(trace, model);
  trace->add_option("--checkpoint", checkpoint)->required();
  trace->add_option("--benchmark", benchmark, "Benchmark file");
  trace->add_option("--episode", episode, "Episode id")->required();
  trace->add_option("--out", out_file, "Output file (default <out-dir>/trace_<id>.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigFailure;
  }

  try {
    RunConfig c = resolve(common, model);
    if (!benchmark.empty()) c.benchmark = benchmark;
    if (!preset.empty()) c.preset = preset;
    if (gen->parsed()) return cmd_gen(c, out_file, out);
    if (train->parsed()) return cmd_train(c, resume, out, err);
    if (eval->parsed()) return cmd_eval(c, checkpoint, split, out, err);
    if (ablate->parsed()) return cmd_ablate(c, cg_checkpoint, pm_checkpoint, out, err);
    if (trace->parsed()) return cmd_trace(c, checkpoint, episode, out_file, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace selfmon::cli
