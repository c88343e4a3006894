#include "lazyllm/cache.hpp"

#include <algorithm>
#include <string>

#include "lazyllm/errors.hpp"

namespace lazyllm {

LayeredCaches::LayeredCaches(std::size_t num_layers, std::size_t width)
    : num_layers_(num_layers),
      width_(width),
      keys_(num_layers),
      values_(num_layers),
      present_(num_layers),
      aux_(num_layers) {}

void LayeredCaches::reserve(std::size_t token_capacity) {
    if (token_capacity <= capacity_) return;
    for (std::size_t l = 0; l < num_layers_; ++l) {
        keys_[l].resize(token_capacity * width_);
        values_[l].resize(token_capacity * width_);
        present_[l].resize(token_capacity, 0);
    }
    frontier_.resize(token_capacity, -1);
    capacity_ = token_capacity;
}

void LayeredCaches::register_token(std::int64_t token) {
    if (token < 0) throw InputError("cache: negative token index");
    const auto t = static_cast<std::size_t>(token);
    if (t >= capacity_) reserve(std::max<std::size_t>(t + 1, capacity_ * 2));
    if (frontier_[t] >= 0) throw InvariantViolation("cache: token " + std::to_string(token) + " registered twice");
    frontier_[t] = 0;
    tokens_.insert(std::upper_bound(tokens_.begin(), tokens_.end(), token), token);
}

bool LayeredCaches::is_registered(std::int64_t token) const {
    return token >= 0 && static_cast<std::size_t>(token) < capacity_ && frontier_[static_cast<std::size_t>(token)] >= 0;
}

std::size_t LayeredCaches::slot(std::int64_t token) const {
    if (!is_registered(token)) throw InputError("cache: token " + std::to_string(token) + " is not registered");
    return static_cast<std::size_t>(token);
}

void LayeredCaches::check_layer(std::size_t layer) const {
    if (layer >= num_layers_) throw InputError("cache: layer " + std::to_string(layer) + " out of range");
}

int LayeredCaches::frontier(std::int64_t token) const { return frontier_[slot(token)]; }

std::vector<int> LayeredCaches::frontier_snapshot() const { return frontier_; }

void LayeredCaches::kv_insert(std::size_t layer, std::int64_t token, std::span<const float> key,
                              std::span<const float> value) {
    check_layer(layer);
    const std::size_t s = slot(token);
    if (key.size() != width_ || value.size() != width_) throw ShapeError("kv_insert: row width mismatch");
    if (static_cast<std::size_t>(frontier_[s]) != layer) {
        throw InvariantViolation("kv_insert: token " + std::to_string(token) + " at layer " + std::to_string(layer) +
                                 " but frontier is " + std::to_string(frontier_[s]));
    }
    std::copy(key.begin(), key.end(), keys_[layer].begin() + static_cast<std::ptrdiff_t>(s * width_));
    std::copy(value.begin(), value.end(), values_[layer].begin() + static_cast<std::ptrdiff_t>(s * width_));
    present_[layer][s] = 1;
    frontier_[s] = static_cast<int>(layer) + 1;
    aux_[layer].erase(token);
}

bool LayeredCaches::has_kv(std::size_t layer, std::int64_t token) const {
    check_layer(layer);
    return is_registered(token) && present_[layer][static_cast<std::size_t>(token)] != 0;
}

GatheredKv LayeredCaches::kv_gather(std::size_t layer, std::span<const std::int64_t> tokens) const {
    check_layer(layer);
    GatheredKv out;
    out.positions.assign(tokens.begin(), tokens.end());
    std::sort(out.positions.begin(), out.positions.end());
    out.keys = Matrix(out.positions.size(), width_);
    out.values = Matrix(out.positions.size(), width_);
    for (std::size_t r = 0; r < out.positions.size(); ++r) {
        const std::size_t s = slot(out.positions[r]);
        if (frontier_[s] <= static_cast<int>(layer) || !present_[layer][s]) {
            throw MissingKvError("kv_gather: token " + std::to_string(out.positions[r]) + " has no KV at layer " +
                                 std::to_string(layer));
        }
        std::copy_n(keys_[layer].begin() + static_cast<std::ptrdiff_t>(s * width_), width_, out.keys.row(r).begin());
        std::copy_n(values_[layer].begin() + static_cast<std::ptrdiff_t>(s * width_), width_,
                    out.values.row(r).begin());
    }
    return out;
}

void LayeredCaches::aux_store(std::size_t layer, std::int64_t token, std::span<const float> hidden) {
    check_layer(layer);
    const std::size_t s = slot(token);
    if (hidden.size() != width_) throw ShapeError("aux_store: row width mismatch");
    if (static_cast<std::size_t>(frontier_[s]) != layer) {
        throw InvariantViolation("aux_store: token " + std::to_string(token) + " has frontier " +
                                 std::to_string(frontier_[s]) + ", not " + std::to_string(layer));
    }
    for (const auto& layer_aux : aux_) {
        if (layer_aux.contains(token)) {
            throw InvariantViolation("aux_store: token " + std::to_string(token) + " already has an Aux entry");
        }
    }
    aux_[layer].emplace(token, std::vector<float>(hidden.begin(), hidden.end()));
}

std::span<const float> LayeredCaches::aux_take(std::size_t layer, std::int64_t token) const {
    check_layer(layer);
    auto it = aux_[layer].find(token);
    if (it == aux_[layer].end()) {
        throw MissingAuxError("aux_take: no Aux entry for token " + std::to_string(token) + " at layer " +
                              std::to_string(layer));
    }
    return it->second;
}

bool LayeredCaches::has_aux(std::size_t layer, std::int64_t token) const {
    check_layer(layer);
    return aux_[layer].contains(token);
}

std::size_t LayeredCaches::aux_count() const {
    std::size_t n = 0;
    for (const auto& a : aux_) n += a.size();
    return n;
}

std::vector<std::string> LayeredCaches::verify_invariants(std::span<const int> previous) const {
    std::vector<std::string> issues;
    const int depth = static_cast<int>(num_layers_);
    for (std::int64_t token : tokens_) {
        const auto s = static_cast<std::size_t>(token);
        const int f = frontier_[s];
        const std::string who = "token " + std::to_string(token);
        if (f < 1 || f > depth) issues.push_back(who + ": frontier " + std::to_string(f) + " outside [1, L]");
        for (std::size_t l = 0; l < num_layers_; ++l) {
            const bool expect = static_cast<int>(l) < f;
            if ((present_[l][s] != 0) != expect) {
                issues.push_back(who + ": prefix coverage broken at layer " + std::to_string(l) + " (frontier " +
                                 std::to_string(f) + ")");
            }
        }
        std::size_t aux_entries = 0;
        for (std::size_t l = 0; l < num_layers_; ++l) {
            if (!aux_[l].contains(token)) continue;
            ++aux_entries;
            if (static_cast<int>(l) != f) {
                issues.push_back(who + ": Aux entry at layer " + std::to_string(l) + " but frontier " +
                                 std::to_string(f));
            }
        }
        if (aux_entries > 1) issues.push_back(who + ": " + std::to_string(aux_entries) + " Aux entries");
        if (f >= 0 && f < depth && aux_entries == 0) {
            issues.push_back(who + ": frontier " + std::to_string(f) + " < L without an Aux entry");
        }
        if (s < previous.size() && previous[s] > f) {
            issues.push_back(who + ": frontier decreased from " + std::to_string(previous[s]) + " to " +
                             std::to_string(f));
        }
    }
    for (std::size_t l = 0; l < num_layers_; ++l) {
        for (const auto& [token, row] : aux_[l]) {
            if (!is_registered(token)) issues.push_back("Aux entry for unregistered token " + std::to_string(token));
        }
    }
    return issues;
}

nlohmann::json LayeredCaches::debug_snapshot() const {
    nlohmann::json frontiers = nlohmann::json::object();
    for (std::int64_t t : tokens_) frontiers[std::to_string(t)] = frontier_[static_cast<std::size_t>(t)];
    nlohmann::json kv = nlohmann::json::array();
    nlohmann::json aux = nlohmann::json::array();
    for (std::size_t l = 0; l < num_layers_; ++l) {
        std::vector<std::int64_t> kv_tokens;
        for (std::int64_t t : tokens_) {
            if (present_[l][static_cast<std::size_t>(t)]) kv_tokens.push_back(t);
        }
        std::vector<std::int64_t> aux_tokens;
        for (const auto& [t, row] : aux_[l]) aux_tokens.push_back(t);
        std::sort(aux_tokens.begin(), aux_tokens.end());
        kv.push_back(kv_tokens);
        aux.push_back(aux_tokens);
    }
    return {{"frontiers", frontiers}, {"kv", kv}, {"aux", aux}};
}

void LayeredCaches::erase_kv_for_testing(std::size_t layer, std::int64_t token) {
    check_layer(layer);
    present_[layer][slot(token)] = 0;
}

}  // namespace lazyllm
