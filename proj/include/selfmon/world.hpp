#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace selfmon::worldgen {

struct Vec3 {
  double x = 0.0;  // meters
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

double distance(const Vec3& a, const Vec3& b);

struct Viewpoint {
  int id = 0;
  Vec3 position;
  int landmark = 0;
  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;
};

/// Directed half of an undirected navigable edge, as seen from its source.
struct Edge {
  int target = 0;
  double heading = 0.0;    // radians, clockwise from +y
  double elevation = 0.0;  // radians, positive upward
  double length = 0.0;     // meters
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Connected, undirected navigation graph with precomputed geodesic distances.
class NavGraph {
 public:
  NavGraph() = default;
  /// Validates dense ids, symmetric adjacency and connectivity; neighbor lists are
  /// sorted by target id.
  NavGraph(std::uint64_t world_id, std::vector<Viewpoint> viewpoints, std::vector<std::vector<Edge>> adjacency);

  std::uint64_t world_id() const { return world_id_; }
  int size() const { return static_cast<int>(viewpoints_.size()); }
  const Viewpoint& viewpoint(int id) const { return viewpoints_.at(id); }
  const std::vector<Viewpoint>& viewpoints() const { return viewpoints_; }
  std::span<const Edge> neighbors(int id) const { return adjacency_.at(id); }
  int degree(int id) const { return static_cast<int>(adjacency_.at(id).size()); }
  int max_degree() const;
  bool has_edge(int a, int b) const;
  const Edge& edge(int a, int b) const;

  /// Geodesic distance along edges weighted by Euclidean length.
  double distance(int a, int b) const;
  /// Shortest path a..b; among equal-length routes the lexicographically smallest.
  std::vector<int> shortest_path(int a, int b) const;
  /// Sum of edge lengths along a walk (consecutive entries must be adjacent).
  double walk_length(std::span<const int> walk) const;
  bool is_walk(std::span<const int> walk) const;

  friend bool operator==(const NavGraph& a, const NavGraph& b) {
    return a.world_id_ == b.world_id_ && a.viewpoints_ == b.viewpoints_ && a.adjacency_ == b.adjacency_;
  }

 private:
  void check_id(int id) const;

  std::uint64_t world_id_ = 0;
  std::vector<Viewpoint> viewpoints_;
  std::vector<std::vector<Edge>> adjacency_;
  std::vector<double> dist_;  // row-major all-pairs
};

/// BFS reachability from viewpoint 0.
bool is_connected(int n, const std::vector<std::vector<Edge>>& adjacency);

double shortest_path_distance(const NavGraph& graph, int a, int b);

/// Heading and elevation of the displacement from `from` to `to`.
Edge make_edge(const Vec3& from, const Vec3& to, int target);

struct WorldParams {
  int n_viewpoints = 25;
  int n_landmarks = 12;
  int k_max = 5;
  double extent = 12.0;  // meters, side of the square floor plan
  int floors = 2;
  double floor_height = 3.0;
  double min_separation = 1.5;
  double link_radius = 4.5;  // extra edges beyond the spanning tree stay this short
  double extra_edge_probability = 0.5;
  int max_attempts = 64;
  bool distinct_neighbor_landmarks = true;  // no two neighbors of a viewpoint share a landmark
  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

/// Deterministic in (seed, params). With distinct_neighbor_landmarks, neighbors of
/// any viewpoint carry pairwise distinct landmarks. Throws GenerationError when no attempt satisfies the params.
NavGraph generate_world(std::uint64_t seed, const WorldParams& params);

}  // namespace selfmon::worldgen
