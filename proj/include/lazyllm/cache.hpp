#pragma once

// Per-layer KV cache, Aux Cache and frontier tracking.
//
// Every registered token i has a frontier f(i): its KV rows exist exactly at
// layers [0, f(i)). A token that was pruned before layer f(i) < L keeps its
// input hidden state for layer f(i) in the Aux Cache, so it can later be
// revived at f(i) without recomputing the shallower layers. Token indices are
// absolute sequence positions.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lazyllm/tensor.hpp"

namespace lazyllm {

struct GatheredKv {
    Matrix keys;
    Matrix values;
    std::vector<std::int64_t> positions;
};

class LayeredCaches {
public:
    LayeredCaches(std::size_t num_layers, std::size_t width);

    std::size_t num_layers() const { return num_layers_; }
    std::size_t width() const { return width_; }

    /// Makes a token known to the cache with frontier 0.
    void register_token(std::int64_t token);
    bool is_registered(std::int64_t token) const;
    /// Registered tokens in ascending order.
    const std::vector<std::int64_t>& tokens() const { return tokens_; }
    void reserve(std::size_t token_capacity);

    int frontier(std::int64_t token) const;
    std::vector<int> frontier_snapshot() const;

    /// Extends the token's KV prefix by one layer; `layer` must equal its
    /// frontier. Consumes any Aux entry at that layer.
    void kv_insert(std::size_t layer, std::int64_t token, std::span<const float> key, std::span<const float> value);
    bool has_kv(std::size_t layer, std::int64_t token) const;

    /// Rows for `tokens` in ascending position order; throws MissingKvError
    /// if any token's frontier is <= layer.
    GatheredKv kv_gather(std::size_t layer, std::span<const std::int64_t> tokens) const;

    void aux_store(std::size_t layer, std::int64_t token, std::span<const float> hidden);
    /// Non-destructive read; the entry is dropped by the next kv_insert at `layer`.
    std::span<const float> aux_take(std::size_t layer, std::int64_t token) const;
    bool has_aux(std::size_t layer, std::int64_t token) const;
    std::size_t aux_count() const;

    /// Checks the state between engine steps: frontiers in [1, L], prefix
    /// coverage, Aux-iff-frontier < L, single Aux entry per token, and (when
    /// `previous` is a snapshot from frontier_snapshot) frontier monotonicity.
    /// Returns human-readable violations; empty means consistent.
    std::vector<std::string> verify_invariants(std::span<const int> previous = {}) const;

    /// {frontiers, per-layer KV token lists, per-layer Aux token lists}.
    nlohmann::json debug_snapshot() const;

    /// Fault injection for tests: removes a KV entry without touching the frontier.
    void erase_kv_for_testing(std::size_t layer, std::int64_t token);

private:
    std::size_t slot(std::int64_t token) const;
    void check_layer(std::size_t layer) const;

    std::size_t num_layers_;
    std::size_t width_;
    std::size_t capacity_ = 0;
    std::vector<std::int64_t> tokens_;
    std::vector<int> frontier_;                      // indexed by token, -1 = unregistered
    std::vector<std::vector<float>> keys_, values_;  // per layer, capacity x width
    std::vector<std::vector<std::uint8_t>> present_; // per layer, capacity
    std::vector<std::unordered_map<std::int64_t, std::vector<float>>> aux_;
};

}  // namespace lazyllm
