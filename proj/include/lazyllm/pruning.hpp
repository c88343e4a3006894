#pragma once

// Token importance scoring and keep-set selection.
//
// The importance of token i at layer l is the head-averaged attention
// probability that the newest token assigns to i. A boundary (layer b,
// fraction f) keeps the top ceil(f * |candidates|) scored tokens for layers
// b..L-1; protected tokens (the last prompt token and every generated token)
// are never candidates and are always kept.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lazyllm/kernels.hpp"
#include "lazyllm/model.hpp"

namespace lazyllm {

enum class Policy { baseline, lazy, random, static_prune };

std::string_view policy_name(Policy p);
/// Accepts baseline|none|lazy|random|static.
Policy parse_policy(std::string_view name);

/// Pruning happens before layer `layer` (0-based), i.e. after `layer` layers
/// have been computed; scores come from layer `layer - 1`.
struct Boundary {
    std::size_t layer = 0;
    double keep_fraction = 1.0;

    bool operator==(const Boundary&) const = default;
};

struct PruningSchedule {
    Policy policy = Policy::baseline;
    std::vector<Boundary> boundaries;       // lazy
    std::size_t static_score_layer = 2;     // static: boundary layer
    double static_keep_fraction = 0.5;      // static
    double drop_ratio = 0.5;                // random
    std::uint64_t seed = 0;                 // random

    /// Boundaries the engine applies within a step for this policy.
    std::vector<Boundary> effective_boundaries() const;
};

/// Parses "layer:fraction[,layer:fraction]*"; empty text gives no boundaries.
std::vector<Boundary> parse_schedule(std::string_view text);
std::string format_schedule(std::span<const Boundary> boundaries);

/// Throws ConfigError naming the offending boundary.
void validate_schedule(const PruningSchedule& schedule, const ModelConfig& config);

struct TokenScore {
    std::int64_t token;
    float score;
};
using ImportanceScores = std::vector<TokenScore>;

/// Sorted, duplicate-free token indices.
using KeepSet = std::vector<std::int64_t>;

/// Mean over heads of probs[h][captured_row][column of token] for each candidate.
ImportanceScores importance_scores(const AttentionProbs& probs, std::size_t captured_row,
                                   std::span<const std::int64_t> key_positions,
                                   std::span<const std::int64_t> candidates);

/// ceil(f * n), with a tolerance so that e.g. 0.7 * 10 yields 7, not 8.
std::size_t keep_count(double keep_fraction, std::size_t n);

KeepSet select_keep_set(const ImportanceScores& scores, double keep_fraction, std::span<const std::int64_t> protected_tokens);

/// Seeded uniform sample of ceil((1 - drop_ratio) * |candidates|) prompt tokens
/// plus the protected ones.
KeepSet random_keep_set(std::span<const std::int64_t> prompt_tokens, double drop_ratio, std::uint64_t seed,
                        std::span<const std::int64_t> protected_tokens);

/// Same rule as select_keep_set; the caller applies the result once and
/// reuses it for every later layer and step.
KeepSet static_keep_set(const ImportanceScores& scores_at_layer, double keep_fraction,
                        std::span<const std::int64_t> protected_tokens);

}  // namespace lazyllm
