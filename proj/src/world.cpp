#include "selfmon/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <tuple>

#include "selfmon/errors.hpp"
#include "selfmon/rng.hpp"

namespace selfmon::worldgen {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> dijkstra(const std::vector<std::vector<Edge>>& adj, int src) {
  const auto n = adj.size();
  std::vector<double> d(n, kInf);
  std::vector<bool> done(n, false);
  d[src] = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    int u = -1;
    for (std::size_t v = 0; v < n; ++v)
      if (!done[v] && (u < 0 || d[v] < d[u])) u = static_cast<int>(v);
    if (u < 0 || d[u] == kInf) break;
    done[u] = true;
    for (const Edge& e : adj[u]) d[e.target] = std::min(d[e.target], d[u] + e.length);
  }
  return d;
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

Edge make_edge(const Vec3& from, const Vec3& to, int target) {
  const double dx = to.x - from.x, dy = to.y - from.y, dz = to.z - from.z;
  Edge e;
  e.target = target;
  e.heading = std::atan2(dx, dy);
  e.elevation = std::atan2(dz, std::hypot(dx, dy));
  e.length = distance(from, to);
  return e;
}

bool is_connected(int n, const std::vector<std::vector<Edge>>& adjacency) {
  if (n == 0) return true;
  std::vector<bool> seen(n, false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  int count = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (const Edge& e : adjacency[u])
      if (!seen[e.target]) {
        seen[e.target] = true;
        ++count;
        q.push(e.target);
      }
  }
  return count == n;
}

NavGraph::NavGraph(std::uint64_t world_id, std::vector<Viewpoint> viewpoints,
                   std::vector<std::vector<Edge>> adjacency)
    : world_id_(world_id), viewpoints_(std::move(viewpoints)), adjacency_(std::move(adjacency)) {
  const int n = size();
  if (n == 0) throw DataError("navigation graph has no viewpoints");
  if (static_cast<int>(adjacency_.size()) != n) throw DataError("adjacency size differs from viewpoint count");
  for (int i = 0; i < n; ++i) {
    if (viewpoints_[i].id != i) throw DataError("viewpoint ids must be dense 0..N-1");
    auto& nbrs = adjacency_[i];
    std::sort(nbrs.begin(), nbrs.end(), [](const Edge& a, const Edge& b) { return a.target < b.target; });
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const int t = nbrs[k].target;
      if (t < 0 || t >= n || t == i) throw DataError("edge " + std::to_string(i) + "->" + std::to_string(t) + " invalid");
      if (k > 0 && nbrs[k - 1].target == t) throw DataError("duplicate edge at viewpoint " + std::to_string(i));
      if (!(nbrs[k].length > 0.0)) throw DataError("edge length must be positive");
    }
  }
  for (int i = 0; i < n; ++i)
    for (const Edge& e : adjacency_[i])
      if (!has_edge(e.target, i))
        throw DataError("edge " + std::to_string(i) + "->" + std::to_string(e.target) + " has no reverse");
  dist_.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const auto d = dijkstra(adjacency_, i);
    std::copy(d.begin(), d.end(), dist_.begin() + static_cast<std::ptrdiff_t>(i) * n);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      auto& a = dist_[static_cast<std::size_t>(i) * n + j];
      auto& b = dist_[static_cast<std::size_t>(j) * n + i];
      a = b = std::min(a, b);
    }
}

void NavGraph::check_id(int id) const {
  if (id < 0 || id >= size()) throw ContractError("viewpoint id " + std::to_string(id) + " out of range");
}

int NavGraph::max_degree() const {
  int m = 0;
  for (const auto& a : adjacency_) m = std::max(m, static_cast<int>(a.size()));
  return m;
}

bool NavGraph::has_edge(int a, int b) const {
  if (a < 0 || a >= size()) return false;
  const auto& nbrs = adjacency_[a];
  return std::any_of(nbrs.begin(), nbrs.end(), [b](const Edge& e) { return e.target == b; });
}

const Edge& NavGraph::edge(int a, int b) const {
  check_id(a);
  for (const Edge& e : adjacency_[a])
    if (e.target == b) return e;
  throw ContractError("no edge " + std::to_string(a) + "->" + std::to_string(b));
}

double NavGraph::distance(int a, int b) const {
  check_id(a);
  check_id(b);
  const double d = dist_[static_cast<std::size_t>(a) * size() + b];
  if (d == kInf) throw DistanceError("viewpoints " + std::to_string(a) + " and " + std::to_string(b) + " are disconnected");
  return d;
}

std::vector<int> NavGraph::shortest_path(int a, int b) const {
  const double total = distance(a, b);
  std::vector<int> path{a};
  int u = a;
  while (u != b) {
    const double remaining = distance(u, b);
    const double tol = 1e-9 * std::max(1.0, total);
    int next = -1;
    for (const Edge& e : adjacency_[u])
      if (std::abs(e.length + distance(e.target, b) - remaining) <= tol) {
        next = e.target;
        break;
      }
    if (next < 0) throw DistanceError("shortest path reconstruction failed");
    path.push_back(next);
    u = next;
  }
  return path;
}

double NavGraph::walk_length(std::span<const int> walk) const {
  double len = 0.0;
  for (std::size_t i = 1; i < walk.size(); ++i)
    if (walk[i] != walk[i - 1]) len += edge(walk[i - 1], walk[i]).length;
  return len;
}

bool NavGraph::is_walk(std::span<const int> walk) const {
  if (walk.empty()) return false;
  for (int v : walk)
    if (v < 0 || v >= size()) return false;
  for (std::size_t i = 1; i < walk.size(); ++i)
    if (walk[i] != walk[i - 1] && !has_edge(walk[i - 1], walk[i])) return false;
  return true;
}

double shortest_path_distance(const NavGraph& graph, int a, int b) { return graph.distance(a, b); }

NavGraph generate_world(std::uint64_t seed, const WorldParams& p) {
  if (p.n_viewpoints < 2) throw GenerationError("a world needs at least 2 viewpoints");
  if (p.k_max < 1) throw GenerationError("k_max must be at least 1");
  if (p.n_landmarks < 1) throw GenerationError("n_landmarks must be at least 1");
  if (p.floors < 1 || !(p.extent > 0.0)) throw GenerationError("invalid floor layout");
  const int n = p.n_viewpoints;

  for (int attempt = 0; attempt < p.max_attempts; ++attempt) {
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(attempt)}));

    std::vector<Vec3> pos;
    pos.reserve(n);
    for (int i = 0; i < n; ++i) {
      const int floor = p.floors == 1 ? 0 : static_cast<int>((static_cast<long>(i) * p.floors) / n);
      Vec3 v;
      for (int tries = 0; tries < 200; ++tries) {
        v = {rng.uniform(0.0, p.extent), rng.uniform(0.0, p.extent), floor * p.floor_height};
        bool ok = true;
        for (const Vec3& q : pos)
          if (q.z == v.z && distance(q, v) < p.min_separation) ok = false;
        if (ok) break;
      }
      pos.push_back(v);
    }

    struct Candidate {
      double cost;
      int a, b;
    };
    std::vector<Candidate> pairs;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        const double d = distance(pos[a], pos[b]);
        // Floor changes are rare "stairs": only used when the tree needs them.
        pairs.push_back({pos[a].z == pos[b].z ? d : 3.0 * d, a, b});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Candidate& x, const Candidate& y) {
      return x.cost != y.cost ? x.cost < y.cost : std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });

    std::vector<std::vector<Edge>> adj(n);
    auto connect = [&](int a, int b) {
      adj[a].push_back(make_edge(pos[a], pos[b], b));
      adj[b].push_back(make_edge(pos[b], pos[a], a));
    };
    auto deg = [&](int v) { return static_cast<int>(adj[v].size()); };
    auto linked = [&](int a, int b) {
      return std::any_of(adj[a].begin(), adj[a].end(), [b](const Edge& e) { return e.target == b; });
    };

    DisjointSets sets(n);
    int components = n;
    for (const auto& c : pairs) {
      if (deg(c.a) >= p.k_max || deg(c.b) >= p.k_max) continue;
      if (sets.find(c.a) == sets.find(c.b)) continue;
      sets.unite(c.a, c.b);
      connect(c.a, c.b);
      --components;
    }
    if (components != 1) continue;

    for (const auto& c : pairs) {
      if (pos[c.a].z != pos[c.b].z || c.cost > p.link_radius) continue;
      if (deg(c.a) >= p.k_max || deg(c.b) >= p.k_max || linked(c.a, c.b)) continue;
      if (rng.uniform() < p.extra_edge_probability) connect(c.a, c.b);
    }

    std::vector<int> landmark(n, -1);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(static_cast<std::size_t>(i) + 1)]);
    bool colored = true;
    for (int u : order) {
      std::vector<bool> forbidden(p.n_landmarks, false);
      if (p.distinct_neighbor_landmarks)
        for (const Edge& via : adj[u])
          for (const Edge& w : adj[via.target])
            if (w.target != u && landmark[w.target] >= 0) forbidden[landmark[w.target]] = true;
      std::vector<int> allowed;
      for (int l = 0; l < p.n_landmarks; ++l)
        if (!forbidden[l]) allowed.push_back(l);
      if (allowed.empty()) {
        colored = false;
        break;
      }
      landmark[u] = allowed[rng.index(allowed.size())];
    }
    if (!colored) continue;

    std::vector<Viewpoint> vps(n);
    for (int i = 0; i < n; ++i) vps[i] = {i, pos[i], landmark[i]};
    return NavGraph(splitmix64(seed), std::move(vps), std::move(adj));
  }
  throw GenerationError("could not generate a world with n_viewpoints=" + std::to_string(n) +
                        ", k_max=" + std::to_string(p.k_max) + " after " + std::to_string(p.max_attempts) +
                        " attempts");
}

}  // namespace selfmon::worldgen
