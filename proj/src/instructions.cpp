#include "selfmon/instructions.hpp"

#include <cmath>

#include "selfmon/errors.hpp"

namespace selfmon::worldgen {
namespace {

const std::vector<std::string> kLandmarkNames = {"table", "stairs", "couch",  "bed",    "door",   "lamp",
                                                 "rug",   "sink",   "mirror", "plant",  "window", "painting"};

constexpr double kPi = 3.141592653589793;

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 5 || tokens_[kPad] != "<pad>" || tokens_[kBos] != "<bos>" || tokens_[kEos] != "<eos>" ||
      tokens_[kPeriod] != "." || tokens_[kStop] != "stop")
    throw DataError("vocabulary must start with <pad> <bos> <eos> . stop");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
}

Vocabulary Vocabulary::standard(int n_landmarks) {
  std::vector<std::string> t = {"<pad>", "<bos>", "<eos>", ".", "stop", "to", "the", "left", "right", "straight"};
  for (const auto& v : grammar::verbs()) t.push_back(v);
  for (int l = 0; l < n_landmarks; ++l) t.push_back(grammar::landmark_name(l));
  return Vocabulary(std::move(t));
}

int Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw EncodingError("token '" + std::string(token) + "' not in vocabulary");
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw EncodingError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

namespace grammar {

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"go", "walk", "head", "move", "proceed", "continue", "travel", "step"};
  return v;
}

std::string landmark_name(int landmark) {
  if (landmark < 0) throw ContractError("negative landmark id");
  if (landmark < static_cast<int>(kLandmarkNames.size())) return kLandmarkNames[landmark];
  return "object" + std::to_string(landmark);
}

std::string turn_adverb(double previous_heading, double heading) {
  double delta = std::remainder(heading - previous_heading, 2.0 * kPi);
  if (delta < -kTurnThreshold) return "left";
  if (delta > kTurnThreshold) return "right";
  return "straight";
}

int instruction_length(int segments) { return segments < 1 ? 0 : 6 * segments + 3; }

}  // namespace grammar

std::vector<int> render_instruction(const NavGraph& graph, std::span<const int> path, const Vocabulary& vocab,
                                    Rng& rng) {
  if (path.size() < 2) throw SamplingError("an instruction needs a path of at least one edge");
  std::vector<int> out{Vocabulary::kBos};
  const auto& verbs = grammar::verbs();
  double previous_heading = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const Edge& e = graph.edge(path[i - 1], path[i]);
    out.push_back(vocab.id(verbs[rng.index(verbs.size())]));
    if (i > 1) out.push_back(vocab.id(grammar::turn_adverb(previous_heading, e.heading)));
    out.push_back(vocab.id("to"));
    out.push_back(vocab.id("the"));
    out.push_back(vocab.id(grammar::landmark_name(graph.viewpoint(path[i]).landmark)));
    out.push_back(Vocabulary::kPeriod);
    previous_heading = e.heading;
  }
  out.push_back(Vocabulary::kStop);
  out.push_back(Vocabulary::kPeriod);
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<int> parse_landmarks(std::span<const int> tokens, const Vocabulary& vocab) {
  // A landmark is the word after "to the".
  std::vector<int> out;
  const int to = vocab.id("to"), the = vocab.id("the");
  for (std::size_t i = 2; i < tokens.size(); ++i)
    if (tokens[i - 2] == to && tokens[i - 1] == the) {
      const std::string& name = vocab.token(tokens[i]);
      int landmark = -1;
      for (int l = 0; l < static_cast<int>(kLandmarkNames.size()); ++l)
        if (kLandmarkNames[l] == name) landmark = l;
      if (landmark < 0 && name.rfind("object", 0) == 0) landmark = std::stoi(name.substr(6));
      if (landmark < 0) throw ParseError("'" + name + "' is not a landmark");
      out.push_back(landmark);
    }
  return out;
}

std::string detokenize(std::span<const int> tokens, const Vocabulary& vocab) {
  std::string s;
  for (int t : tokens) {
    if (t == Vocabulary::kPad) continue;
    if (!s.empty()) s += ' ';
    s += vocab.token(t);
  }
  return s;
}

}  // namespace selfmon::worldgen
