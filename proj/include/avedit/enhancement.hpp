#pragma once

#include "avedit/backbones.hpp"
#include "avedit/conditioning.hpp"

#include <set>
#include <vector>

namespace avedit {

enum class TokenClass { kSot, kEdit, kOther };

const char* to_string(TokenClass c);

/// Per-position class of an editing prompt relative to the training prompt.
struct TokenClassMap {
  std::vector<TokenClass> classes;

  int size() const { return static_cast<int>(classes.size()); }
  int count(TokenClass c) const;
};

/// Word tokens of `edit` whose word does not occur in `train` become edit
/// tokens; position 0 is sot; everything else, including eot and the
/// placeholder, is other.
TokenClassMap classify_tokens(const TokenSequence& train, const TokenSequence& edit);

struct EnhancementConfig {
  double alpha = 0.6;  // <sot> column gain, [0, 1]
  double beta = 3.0;   // edit column gain, [1, 4]
  std::set<int> layers;  // empty: every cross-attention layer
  std::set<int> steps;   // empty: every sampling step

  void validate() const;
  bool applies(int layer, int step) const;
  bool identity() const { return alpha == 1.0 && beta == 1.0; }
};

/// Column-wise gains on the post-softmax map, no renormalization.
template <typename S>
void rescale_attention(AttentionMap<S>& map, const TokenClassMap& classes, const EnhancementConfig& cfg) {
  cfg.validate();
  if (map.weights.cols() != classes.size()) {
    throw ShapeError("rescale_attention: map has " + std::to_string(map.weights.cols()) + " columns but " +
                     std::to_string(classes.size()) + " token classes");
  }
  const S a = static_cast<S>(cfg.alpha), b = static_cast<S>(cfg.beta);
  for (int j = 0; j < classes.size(); ++j) {
    const TokenClass c = classes.classes[static_cast<std::size_t>(j)];
    if (c == TokenClass::kSot && cfg.alpha != 1.0) map.weights.col(j) *= a;
    else if (c == TokenClass::kEdit && cfg.beta != 1.0) map.weights.col(j) *= b;
  }
  if (!cfg.identity()) map.row_stochastic = false;
}

template <typename S>
AttentionMap<S> rescale_attention(const AttentionMap<S>& map, const TokenClassMap& classes,
                                  const EnhancementConfig& cfg) {
  AttentionMap<S> out = map;
  rescale_attention(out, classes, cfg);
  return out;
}

/// Hook for the vision U-Net applying rescale_attention within the configured
/// layer/step scope.
template <typename S>
AttentionHook<S> make_enhancement_hook(TokenClassMap classes, EnhancementConfig cfg) {
  cfg.validate();
  return [classes = std::move(classes), cfg](AttentionMap<S>& map) {
    if (cfg.applies(map.layer, map.step)) rescale_attention(map, classes, cfg);
  };
}

/// Sum of attention weights falling on edit-class columns.
template <typename S>
double edit_attention_mass(const std::vector<AttentionMap<S>>& maps, const TokenClassMap& classes) {
  double total = 0.0;
  for (const auto& m : maps) {
    if (m.weights.cols() != classes.size()) throw ShapeError("edit_attention_mass: column mismatch");
    for (int j = 0; j < classes.size(); ++j)
      if (classes.classes[static_cast<std::size_t>(j)] == TokenClass::kEdit) total += m.weights.col(j).template cast<double>().sum();
  }
  return total;
}

}  // namespace avedit
