#include "lazyllm/pruning.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <unordered_set>

#include "lazyllm/errors.hpp"

namespace lazyllm {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

KeepSet with_protected(std::vector<std::int64_t> kept, std::span<const std::int64_t> protected_tokens) {
    kept.insert(kept.end(), protected_tokens.begin(), protected_tokens.end());
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    return kept;
}

}  // namespace

std::string_view policy_name(Policy p) {
    switch (p) {
        case Policy::baseline: return "baseline";
        case Policy::lazy: return "lazy";
        case Policy::random: return "random";
        case Policy::static_prune: return "static";
    }
    return "unknown";
}

Policy parse_policy(std::string_view name) {
    if (name == "baseline" || name == "none") return Policy::baseline;
    if (name == "lazy") return Policy::lazy;
    if (name == "random") return Policy::random;
    if (name == "static") return Policy::static_prune;
    throw ConfigError("unknown policy '" + std::string(name) + "'");
}

std::vector<Boundary> PruningSchedule::effective_boundaries() const {
    switch (policy) {
        case Policy::lazy: return boundaries;
        case Policy::static_prune: return {Boundary{static_score_layer, static_keep_fraction}};
        case Policy::baseline:
        case Policy::random: return {};
    }
    return {};
}

std::vector<Boundary> parse_schedule(std::string_view text) {
    std::vector<Boundary> out;
    if (trim(text).empty()) return out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("schedule item '" + item + "' is not layer:fraction");
        Boundary b;
        const std::string layer_text = trim(item.substr(0, colon));
        const std::string frac_text = trim(item.substr(colon + 1));
        const auto [lp, lec] = std::from_chars(layer_text.data(), layer_text.data() + layer_text.size(), b.layer);
        if (lec != std::errc() || lp != layer_text.data() + layer_text.size()) {
            throw ConfigError("schedule item '" + item + "': bad layer");
        }
        try {
            std::size_t used = 0;
            b.keep_fraction = std::stod(frac_text, &used);
            if (used != frac_text.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("schedule item '" + item + "': bad fraction");
        }
        out.push_back(b);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string format_schedule(std::span<const Boundary> boundaries) {
    std::ostringstream os;
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        if (i) os << ',';
        os << boundaries[i].layer << ':' << boundaries[i].keep_fraction;
    }
    return os.str();
}

void validate_schedule(const PruningSchedule& schedule, const ModelConfig& config) {
    const auto bs = schedule.effective_boundaries();
    for (std::size_t i = 0; i < bs.size(); ++i) {
        const Boundary& b = bs[i];
        const std::string where = "boundary " + std::to_string(b.layer) + ":" + std::to_string(b.keep_fraction);
        if (b.layer < 1 || b.layer > config.num_layers - 1) {
            throw ConfigError(where + ": layer must be in [1, " + std::to_string(config.num_layers - 1) + "]");
        }
        if (!(b.keep_fraction > 0.0 && b.keep_fraction <= 1.0)) {
            throw ConfigError(where + ": keep fraction must be in (0, 1]");
        }
        if (i > 0 && b.layer <= bs[i - 1].layer) {
            throw ConfigError(where + ": boundary layers must be strictly increasing");
        }
    }
    if (schedule.policy == Policy::random && !(schedule.drop_ratio >= 0.0 && schedule.drop_ratio < 1.0)) {
        throw ConfigError("drop ratio must be in [0, 1)");
    }
}

ImportanceScores importance_scores(const AttentionProbs& probs, std::size_t captured_row,
                                   std::span<const std::int64_t> key_positions,
                                   std::span<const std::int64_t> candidates) {
    if (captured_row >= probs.query_rows.size()) throw InputError("importance_scores: query row not captured");
    if (key_positions.size() != probs.keys) throw ShapeError("importance_scores: key positions mismatch");
    ImportanceScores out;
    out.reserve(candidates.size());
    for (std::int64_t token : candidates) {
        auto it = std::lower_bound(key_positions.begin(), key_positions.end(), token);
        if (it == key_positions.end() || *it != token) {
            throw InputError("importance_scores: token " + std::to_string(token) + " is not among the keys");
        }
        const auto col = static_cast<std::size_t>(it - key_positions.begin());
        float sum = 0.0f;
        for (std::size_t h = 0; h < probs.heads; ++h) sum += probs.at(h, captured_row, col);
        out.push_back({token, sum / static_cast<float>(probs.heads)});
    }
    return out;
}

std::size_t keep_count(double keep_fraction, std::size_t n) {
    const double raw = std::ceil(keep_fraction * static_cast<double>(n) - 1e-9);
    return std::min(n, static_cast<std::size_t>(std::max(0.0, raw)));
}

KeepSet select_keep_set(const ImportanceScores& scores, double keep_fraction,
                        std::span<const std::int64_t> protected_tokens) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep fraction must be in (0, 1]");
    const std::unordered_set<std::int64_t> prot(protected_tokens.begin(), protected_tokens.end());
    ImportanceScores candidates;
    for (const TokenScore& s : scores) {
        if (!prot.contains(s.token)) candidates.push_back(s);
    }
    if (candidates.empty() && protected_tokens.empty()) throw InputError("select_keep_set: nothing to keep");
    const std::size_t k = keep_count(keep_fraction, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                      [](const TokenScore& a, const TokenScore& b) {
                          return a.score != b.score ? a.score > b.score : a.token < b.token;
                      });
    std::vector<std::int64_t> kept;
    kept.reserve(k + protected_tokens.size());
    for (std::size_t i = 0; i < k; ++i) kept.push_back(candidates[i].token);
    return with_protected(std::move(kept), protected_tokens);
}

KeepSet random_keep_set(std::span<const std::int64_t> prompt_tokens, double drop_ratio, std::uint64_t seed,
                        std::span<const std::int64_t> protected_tokens) {
    if (!(drop_ratio >= 0.0 && drop_ratio < 1.0)) throw ConfigError("drop ratio must be in [0, 1)");
    const std::unordered_set<std::int64_t> prot(protected_tokens.begin(), protected_tokens.end());
    std::vector<std::int64_t> pool;
    for (std::int64_t t : prompt_tokens) {
        if (!prot.contains(t)) pool.push_back(t);
    }
    const std::size_t k = keep_count(1.0 - drop_ratio, pool.size());
    // Partial Fisher-Yates over the candidate pool.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    return with_protected(std::move(pool), protected_tokens);
}

KeepSet static_keep_set(const ImportanceScores& scores_at_layer, double keep_fraction,
                        std::span<const std::int64_t> protected_tokens) {
    return select_keep_set(scores_at_layer, keep_fraction, protected_tokens);
}

}  // namespace lazyllm
