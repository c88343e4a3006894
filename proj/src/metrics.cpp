#include "lazyllm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lazyllm/errors.hpp"

namespace lazyllm::bench {

nlohmann::json to_json(const GenerationReport& r) {
    nlohmann::json j = to_json_without_timings(r);
    j["ttft_seconds"] = r.ttft_seconds;
    j["total_seconds"] = r.total_seconds;
    return j;
}

nlohmann::json to_json_without_timings(const GenerationReport& r) {
    return {
        {"policy", r.policy},
        {"schedule", r.schedule},
        {"drop_ratio", r.drop_ratio},
        {"seeds", {{"policy_seed", r.seed}}},
        {"prompt_length", r.prompt_length},
        {"num_layers", r.num_layers},
        {"generated_ids", r.generated_ids},
        {"prompt_compute_events", r.prompt_compute_events},
        {"total_compute_events", r.total_compute_events},
        {"percent_prompt_tokens_computed", r.percent_prompt_tokens_computed},
        {"cumulative_usage", r.cumulative_usage},
        {"live_set_sizes", r.live_set_sizes},
        {"revivals", r.revivals},
        {"first_token_logits", r.first_token_logits},
    };
}

double percent_prompt_tokens_computed(std::uint64_t prompt_events, std::size_t prompt_length, std::size_t num_layers) {
    if (prompt_length == 0 || num_layers == 0) throw InputError("percent computed: empty prompt or model");
    return 100.0 * static_cast<double>(prompt_events) /
           (static_cast<double>(prompt_length) * static_cast<double>(num_layers));
}

double percent_prompt_tokens_computed(const ComputeLedger& ledger) {
    return percent_prompt_tokens_computed(ledger.prompt_events(), ledger.prompt_length(), ledger.num_layers());
}

std::vector<std::vector<double>> cumulative_usage_series(const ComputeLedger& ledger) {
    const auto& per_step = ledger.prompt_events_per_step();
    const double n = static_cast<double>(ledger.prompt_length());
    std::vector<std::vector<double>> series;
    std::vector<std::uint64_t> running(ledger.num_layers(), 0);
    for (const auto& step : per_step) {
        std::vector<double> row(ledger.num_layers());
        for (std::size_t l = 0; l < ledger.num_layers(); ++l) {
            running[l] += step[l];
            row[l] = static_cast<double>(running[l]) / n;
        }
        series.push_back(std::move(row));
    }
    return series;
}

double kl_divergence_from_logits(std::span<const float> p_logits, std::span<const float> q_logits) {
    if (p_logits.size() != q_logits.size() || p_logits.empty()) throw ShapeError("KL: logit vectors differ in length");
    auto log_softmax = [](std::span<const float> x) {
        const double mx = *std::max_element(x.begin(), x.end());
        double sum = 0.0;
        for (float v : x) sum += std::exp(static_cast<double>(v) - mx);
        const double lse = mx + std::log(sum);
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(x[i]) - lse;
        return out;
    };
    const auto lp = log_softmax(p_logits);
    const auto lq = log_softmax(q_logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    return std::max(0.0, kl);
}

FidelityResult fidelity(const GenerationReport& baseline, const GenerationReport& policy) {
    FidelityResult out;
    const auto& a = baseline.generated_ids;
    const auto& b = policy.generated_ids;
    const std::size_t longest = std::max(a.size(), b.size());
    std::size_t common = 0;
    while (common < a.size() && common < b.size() && a[common] == b[common]) ++common;
    out.token_match_rate = longest == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(longest);
    out.first_token_agreement = !a.empty() && !b.empty() && a.front() == b.front();
    if (!baseline.first_token_logits.empty() && !policy.first_token_logits.empty()) {
        out.first_logit_divergence = kl_divergence_from_logits(baseline.first_token_logits, policy.first_token_logits);
    }
    return out;
}

}  // namespace lazyllm::bench
