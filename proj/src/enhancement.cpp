#include "avedit/enhancement.hpp"

#include <algorithm>
#include <unordered_set>

namespace avedit {

const char* to_string(TokenClass c) {
  switch (c) {
    case TokenClass::kSot: return "sot";
    case TokenClass::kEdit: return "edit";
    case TokenClass::kOther: return "other";
  }
  return "?";
}

int TokenClassMap::count(TokenClass c) const {
  return static_cast<int>(std::count(classes.begin(), classes.end(), c));
}

TokenClassMap classify_tokens(const TokenSequence& train, const TokenSequence& edit) {
  std::unordered_set<std::string> seen;
  for (int i = 0; i < train.size(); ++i)
    if (train.markers[static_cast<std::size_t>(i)] == TokenMarker::kWord) seen.insert(train.words[static_cast<std::size_t>(i)]);
  TokenClassMap out;
  out.classes.resize(static_cast<std::size_t>(edit.size()), TokenClass::kOther);
  for (int i = 0; i < edit.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (i == 0) {
      out.classes[k] = TokenClass::kSot;
    } else if (edit.markers[k] == TokenMarker::kWord && !seen.count(edit.words[k])) {
      out.classes[k] = TokenClass::kEdit;
    }
  }
  return out;
}

void EnhancementConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (!(beta >= 1.0 && beta <= 4.0)) throw RangeError("beta must lie in [1, 4], got " + std::to_string(beta));
}

bool EnhancementConfig::applies(int layer, int step) const {
  return (layers.empty() || layers.count(layer)) && (steps.empty() || steps.count(step));
}

}  // namespace avedit
