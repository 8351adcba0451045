#include "selfmon/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "selfmon/errors.hpp"
#include "selfmon/rng.hpp"

namespace selfmon::worldgen {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val_seen: return "val_seen";
    case Split::val_unseen: return "val_unseen";
  }
  return "unknown";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val_seen") return Split::val_seen;
  if (name == "val_unseen") return Split::val_unseen;
  throw ParseError("unknown split '" + name + "'");
}

Episode sample_episode(const NavGraph& graph, std::uint64_t seed, const SamplingConstraints& c,
                       const Vocabulary& vocab) {
  if (graph.size() < 2) throw SamplingError("graph too small for an episode");
  Rng rng(seed);
  for (int attempt = 0; attempt < c.max_tries; ++attempt) {
    const int start = static_cast<int>(rng.index(graph.size()));
    const int goal = static_cast<int>(rng.index(graph.size()));
    if (start == goal) continue;
    auto path = graph.shortest_path(start, goal);
    const int edges = static_cast<int>(path.size()) - 1;
    if (edges < c.min_edges || edges > c.max_edges) continue;
    if (grammar::instruction_length(edges) > c.max_tokens) continue;
    if (graph.distance(start, goal) < c.min_distance) continue;
    Episode ep;
    ep.world_id = graph.world_id();
    ep.start = start;
    ep.goal = goal;
    ep.instruction = render_instruction(graph, path, vocab, rng);
    ep.path = std::move(path);
    return ep;
  }
  throw SamplingError("no start/goal pair satisfies the path constraints in world " +
                      std::to_string(graph.world_id()));
}

BenchmarkParams benchmark_preset(const std::string& name) {
  BenchmarkParams p;
  p.preset = name;
  if (name == "desk") return p;
  if (name == "full-scale") {
    p.features.appearance_dim = 2048;
    p.features.orientation_tiles = 32;
    p.sampling.max_tokens = 80;
    return p;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or full-scale)");
}

const NavGraph& Benchmark::world(std::uint64_t world_id) const {
  for (const auto& w : worlds)
    if (w.world_id() == world_id) return w;
  throw DataError("unknown world id " + std::to_string(world_id));
}

std::vector<const Episode*> Benchmark::split(Split s) const {
  std::vector<const Episode*> out;
  for (const auto& e : episodes)
    if (e.split == s) out.push_back(&e);
  return out;
}

const Episode& Benchmark::episode(int id) const {
  for (const auto& e : episodes)
    if (e.id == id) return e;
  throw DataError("unknown episode id " + std::to_string(id));
}

double Benchmark::mean_shortest_distance() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += world(e.world_id).distance(e.start, e.goal);
  return s / static_cast<double>(episodes.size());
}

namespace {

// Draws `count` episodes with distinct start/goal pairs, skipping pairs in `taken`.
void sample_world_episodes(const NavGraph& g, std::uint64_t seed, int world_index, int count, Split split,
                           const SamplingConstraints& c, const Vocabulary& vocab,
                           std::set<std::pair<int, int>>& taken, std::vector<Episode>& out) {
  int made = 0;
  for (std::uint64_t k = 0; made < count; ++k) {
    if (k > static_cast<std::uint64_t>(count) * 200)
      throw SamplingError("world " + std::to_string(world_index) + " has too few distinct admissible pairs");
    Episode ep = sample_episode(g, derive_seed({seed, 2, static_cast<std::uint64_t>(world_index), k}), c, vocab);
    if (!taken.insert({ep.start, ep.goal}).second) continue;
    ep.split = split;
    out.push_back(std::move(ep));
    ++made;
  }
}

}  // namespace

Benchmark generate_benchmark(std::uint64_t seed, const BenchmarkParams& params) {
  if (params.val_seen_worlds > params.train_worlds)
    throw ConfigError("val_seen episodes must come from train worlds");
  if (params.world.n_landmarks > params.features.appearance_dim)
    throw ConfigError("appearance block smaller than the landmark count");

  Benchmark b;
  b.seed = seed;
  b.params = params;
  b.vocab = Vocabulary::standard(params.world.n_landmarks);
  const int n_worlds = params.train_worlds + params.val_unseen_worlds;
  for (int w = 0; w < n_worlds; ++w)
    b.worlds.push_back(generate_world(derive_seed({seed, 1, static_cast<std::uint64_t>(w)}), params.world));

  // The success radius depends on the episodes and every episode must start
  // outside it, so iterate until the minimum start distance clears the radius.
  SamplingConstraints c = params.sampling;
  for (int round = 0;; ++round) {
    if (round > 32) throw SamplingError("success threshold did not settle");
    b.episodes.clear();
    for (int w = 0; w < params.train_worlds; ++w) {
      std::set<std::pair<int, int>> taken;
      sample_world_episodes(b.worlds[w], seed, w, params.episodes_per_train_world, Split::train, c, b.vocab, taken,
                            b.episodes);
      if (w < params.val_seen_worlds)
        sample_world_episodes(b.worlds[w], seed, w, params.episodes_per_val_seen_world, Split::val_seen, c, b.vocab,
                              taken, b.episodes);
    }
    for (int w = params.train_worlds; w < n_worlds; ++w) {
      std::set<std::pair<int, int>> taken;
      sample_world_episodes(b.worlds[w], seed, w, params.episodes_per_unseen_world, Split::val_unseen, c, b.vocab,
                            taken, b.episodes);
    }
    b.success_threshold = params.threshold_fraction * b.mean_shortest_distance();
    double min_start = std::numeric_limits<double>::infinity();
    for (const auto& e : b.episodes) min_start = std::min(min_start, b.world(e.world_id).distance(e.start, e.goal));
    if (min_start >= b.success_threshold) break;
    c.min_distance = b.success_threshold;
  }
  for (std::size_t i = 0; i < b.episodes.size(); ++i) b.episodes[i].id = static_cast<int>(i);
  return b;
}

// ---------------------------------------------------------------- serialization

namespace {

json to_json(const WorldParams& p) {
  return {{"n_viewpoints", p.n_viewpoints}, {"n_landmarks", p.n_landmarks}, {"k_max", p.k_max},
          {"extent", p.extent}, {"floors", p.floors}, {"floor_height", p.floor_height},
          {"min_separation", p.min_separation}, {"link_radius", p.link_radius},
          {"extra_edge_probability", p.extra_edge_probability}, {"max_attempts", p.max_attempts},
          {"distinct_neighbor_landmarks", p.distinct_neighbor_landmarks}};
}

WorldParams world_params_from(const json& j) {
  WorldParams p;
  p.n_viewpoints = j.at("n_viewpoints").get<int>();
  p.n_landmarks = j.at("n_landmarks").get<int>();
  p.k_max = j.at("k_max").get<int>();
  p.extent = j.at("extent").get<double>();
  p.floors = j.at("floors").get<int>();
  p.floor_height = j.at("floor_height").get<double>();
  p.min_separation = j.at("min_separation").get<double>();
  p.link_radius = j.at("link_radius").get<double>();
  p.extra_edge_probability = j.at("extra_edge_probability").get<double>();
  p.max_attempts = j.at("max_attempts").get<int>();
  p.distinct_neighbor_landmarks = j.at("distinct_neighbor_landmarks").get<bool>();
  return p;
}

json to_json(const BenchmarkParams& p) {
  return {{"preset", p.preset},
          {"world", to_json(p.world)},
          {"features",
           {{"appearance_dim", p.features.appearance_dim},
            {"orientation_tiles", p.features.orientation_tiles},
            {"noise_sigma", p.features.noise_sigma},
            {"feature_dim", p.features.feature_dim()}}},
          {"sampling",
           {{"min_edges", p.sampling.min_edges},
            {"max_edges", p.sampling.max_edges},
            {"max_tokens", p.sampling.max_tokens},
            {"min_distance", p.sampling.min_distance},
            {"max_tries", p.sampling.max_tries}}},
          {"train_worlds", p.train_worlds},
          {"episodes_per_train_world", p.episodes_per_train_world},
          {"val_seen_worlds", p.val_seen_worlds},
          {"episodes_per_val_seen_world", p.episodes_per_val_seen_world},
          {"val_unseen_worlds", p.val_unseen_worlds},
          {"episodes_per_unseen_world", p.episodes_per_unseen_world},
          {"threshold_fraction", p.threshold_fraction}};
}

BenchmarkParams benchmark_params_from(const json& j) {
  BenchmarkParams p;
  p.preset = j.at("preset").get<std::string>();
  p.world = world_params_from(j.at("world"));
  const auto& f = j.at("features");
  p.features.appearance_dim = f.at("appearance_dim").get<int>();
  p.features.orientation_tiles = f.at("orientation_tiles").get<int>();
  p.features.noise_sigma = f.at("noise_sigma").get<double>();
  const auto& s = j.at("sampling");
  p.sampling.min_edges = s.at("min_edges").get<int>();
  p.sampling.max_edges = s.at("max_edges").get<int>();
  p.sampling.max_tokens = s.at("max_tokens").get<int>();
  p.sampling.min_distance = s.at("min_distance").get<double>();
  p.sampling.max_tries = s.at("max_tries").get<int>();
  p.train_worlds = j.at("train_worlds").get<int>();
  p.episodes_per_train_world = j.at("episodes_per_train_world").get<int>();
  p.val_seen_worlds = j.at("val_seen_worlds").get<int>();
  p.episodes_per_val_seen_world = j.at("episodes_per_val_seen_world").get<int>();
  p.val_unseen_worlds = j.at("val_unseen_worlds").get<int>();
  p.episodes_per_unseen_world = j.at("episodes_per_unseen_world").get<int>();
  p.threshold_fraction = j.at("threshold_fraction").get<double>();
  return p;
}

json to_json(const NavGraph& g) {
  json vps = json::array();
  for (const auto& v : g.viewpoints())
    vps.push_back({{"id", v.id}, {"position", {v.position.x, v.position.y, v.position.z}}, {"landmark", v.landmark}});
  json edges = json::array();
  for (int i = 0; i < g.size(); ++i)
    for (const Edge& e : g.neighbors(i))
      edges.push_back({{"from", i}, {"to", e.target}, {"heading", e.heading}, {"elevation", e.elevation},
                       {"length", e.length}});
  return {{"world_id", g.world_id()}, {"viewpoints", std::move(vps)}, {"edges", std::move(edges)}};
}

NavGraph graph_from(const json& j) {
  std::vector<Viewpoint> vps;
  for (const auto& v : j.at("viewpoints")) {
    const auto& p = v.at("position");
    if (p.size() != 3) throw ParseError("viewpoint position must have 3 coordinates");
    vps.push_back({v.at("id").get<int>(), {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()},
                   v.at("landmark").get<int>()});
  }
  std::vector<std::vector<Edge>> adj(vps.size());
  for (const auto& e : j.at("edges")) {
    const int from = e.at("from").get<int>();
    if (from < 0 || from >= static_cast<int>(adj.size())) throw ParseError("edge source out of range");
    adj[from].push_back({e.at("to").get<int>(), e.at("heading").get<double>(), e.at("elevation").get<double>(),
                         e.at("length").get<double>()});
  }
  return NavGraph(j.at("world_id").get<std::uint64_t>(), std::move(vps), std::move(adj));
}

json to_json(const Episode& e) {
  return {{"id", e.id},       {"world_id", e.world_id}, {"split", to_string(e.split)},
          {"start", e.start}, {"goal", e.goal},         {"path", e.path},
          {"instruction", e.instruction}};
}

Episode episode_from(const json& j) {
  Episode e;
  e.id = j.at("id").get<int>();
  e.world_id = j.at("world_id").get<std::uint64_t>();
  e.split = split_from_string(j.at("split").get<std::string>());
  e.start = j.at("start").get<int>();
  e.goal = j.at("goal").get<int>();
  e.path = j.at("path").get<std::vector<int>>();
  e.instruction = j.at("instruction").get<std::vector<int>>();
  return e;
}

}  // namespace

std::string dataset_to_text(const Benchmark& b) {
  json worlds = json::array();
  for (const auto& w : b.worlds) worlds.push_back(to_json(w));
  json episodes = json::array();
  for (const auto& e : b.episodes) episodes.push_back(to_json(e));
  json root = {{"schema_version", kDatasetSchemaVersion},
               {"kind", "benchmark"},
               {"grammar_version", grammar::kVersion},
               {"seed", b.seed},
               {"params", to_json(b.params)},
               {"success_threshold", b.success_threshold},
               {"vocab", b.vocab.tokens()},
               {"worlds", std::move(worlds)},
               {"episodes", std::move(episodes)}};
  return root.dump(1) + "\n";
}

Benchmark dataset_from_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed dataset: ") + e.what());
  }
  try {
    const int version = root.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion)
      throw VersionError("dataset schema version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kDatasetSchemaVersion) + ")");
    if (root.at("kind").get<std::string>() != "benchmark") throw ParseError("file is not a benchmark");
    Benchmark b;
    b.seed = root.at("seed").get<std::uint64_t>();
    b.params = benchmark_params_from(root.at("params"));
    b.success_threshold = root.at("success_threshold").get<double>();
    b.vocab = Vocabulary(root.at("vocab").get<std::vector<std::string>>());
    for (const auto& w : root.at("worlds")) b.worlds.push_back(graph_from(w));
    for (const auto& e : root.at("episodes")) b.episodes.push_back(episode_from(e));
    for (const auto& e : b.episodes) {
      const NavGraph& g = b.world(e.world_id);
      if (!g.is_walk(e.path)) throw ParseError("episode " + std::to_string(e.id) + " path is not a walk");
      for (int t : e.instruction) b.vocab.token(t);
    }
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid dataset structure: ") + e.what());
  } catch (const EncodingError& e) {
    throw ParseError(std::string("invalid dataset instruction: ") + e.what());
  }
}

void save_dataset(const Benchmark& benchmark, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << dataset_to_text(benchmark);
  if (!out) throw DataError("failed writing " + path.string());
}

Benchmark load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return dataset_from_text(ss.str());
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace selfmon::worldgen
