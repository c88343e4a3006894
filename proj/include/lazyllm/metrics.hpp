#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lazyllm/ledger.hpp"

namespace lazyllm::bench {

struct GenerationReport {
    std::string policy;
    std::string schedule;  // echo of the effective boundaries, "layer:fraction,..."
    double drop_ratio = 0.0;
    std::uint64_t seed = 0;
    std::size_t prompt_length = 0;
    std::size_t num_layers = 0;
    std::vector<int> generated_ids;
    double ttft_seconds = 0.0;
    double total_seconds = 0.0;
    std::uint64_t prompt_compute_events = 0;
    std::uint64_t total_compute_events = 0;
    double percent_prompt_tokens_computed = 0.0;
    std::vector<std::vector<double>> cumulative_usage;        // [step][layer]
    std::vector<std::vector<std::uint32_t>> live_set_sizes;   // [step][layer]
    std::size_t revivals = 0;
    std::vector<float> first_token_logits;
};

/// Field names of the JSON report are part of the external interface.
nlohmann::json to_json(const GenerationReport& report);
/// Same as to_json without the walltime fields.
nlohmann::json to_json_without_timings(const GenerationReport& report);

/// 100 * events / (N * L).
double percent_prompt_tokens_computed(std::uint64_t prompt_events, std::size_t prompt_length, std::size_t num_layers);
double percent_prompt_tokens_computed(const ComputeLedger& ledger);

/// [step][layer] fraction of prompt tokens computed at `layer` in steps <= step.
std::vector<std::vector<double>> cumulative_usage_series(const ComputeLedger& ledger);

struct FidelityResult {
    double token_match_rate = 0.0;  // common-prefix length / longer output length
    bool first_token_agreement = false;
    double first_logit_divergence = 0.0;  // KL(baseline || policy) on softmaxed logits
};

FidelityResult fidelity(const GenerationReport& baseline, const GenerationReport& policy);

/// KL(softmax(p) || softmax(q)) in nats, evaluated in double precision.
double kl_divergence_from_logits(std::span<const float> p_logits, std::span<const float> q_logits);

}  // namespace lazyllm::bench
