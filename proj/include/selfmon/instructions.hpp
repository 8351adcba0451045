#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selfmon/rng.hpp"
#include "selfmon/world.hpp"

namespace selfmon::worldgen {

/// Bijective token <-> id table. Ids 0..4 are reserved: PAD, BOS, EOS, the
/// period that closes every clause, and the "stop" command word.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kPeriod = 3;
  static constexpr int kStop = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Reserved tokens, grammar words and `n_landmarks` landmark nouns.
  static Vocabulary standard(int n_landmarks);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Fixed template grammar, version 1:
///   instruction := BOS clause_1 ... clause_n "stop" "." EOS
///   clause_1    := VERB "to" "the" LANDMARK "."
///   clause_i    := VERB ADVERB "to" "the" LANDMARK "."      (i > 1)
/// ADVERB is left / right / straight from the heading change between consecutive
/// segments (beyond -30 / +30 degrees, else straight).
namespace grammar {

inline constexpr int kVersion = 1;
inline constexpr double kTurnThreshold = 0.5235987755982988;  // 30 degrees

const std::vector<std::string>& verbs();
std::string landmark_name(int landmark);
std::string turn_adverb(double previous_heading, double heading);
/// Token count of an instruction describing `segments` path edges.
int instruction_length(int segments);

}  // namespace grammar

/// Renders the instruction for a viewpoint path; verbs are drawn from `rng`.
std::vector<int> render_instruction(const NavGraph& graph, std::span<const int> path, const Vocabulary& vocab,
                                    Rng& rng);

/// Landmark ids named by the clauses of a rendered instruction, in order.
std::vector<int> parse_landmarks(std::span<const int> tokens, const Vocabulary& vocab);

std::string detokenize(std::span<const int> tokens, const Vocabulary& vocab);

}  // namespace selfmon::worldgen
