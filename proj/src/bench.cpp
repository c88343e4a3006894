#include "lazyllm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lazyllm/errors.hpp"

namespace lazyllm::bench {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

GenerationReport run_once(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                          std::size_t max_new_tokens) {
    GenerationSession session(model, schedule);
    return session.generate(prompt, max_new_tokens);
}

}  // namespace

TimingStats summarize(std::vector<double> samples) {
    TimingStats s;
    if (samples.empty()) return s;
    s.mean = mean_of(samples);
    double var = 0.0;
    for (double x : samples) var += (x - s.mean) * (x - s.mean);
    s.stdev = samples.size() > 1 ? std::sqrt(var / static_cast<double>(samples.size() - 1)) : 0.0;
    s.min = *std::min_element(samples.begin(), samples.end());
    s.max = *std::max_element(samples.begin(), samples.end());
    s.samples = std::move(samples);
    return s;
}

TimingStats measure_ttft(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                         std::size_t repeats, std::size_t warmup) {
    if (repeats == 0) throw ConfigError("measure_ttft: repeats must be >= 1");
    std::vector<double> samples;
    for (std::size_t i = 0; i < warmup + repeats; ++i) {
        GenerationSession session(model, schedule);
        const auto start = Clock::now();
        session.prefill(prompt);
        const double t = seconds_since(start);
        if (i >= warmup) samples.push_back(t);
    }
    return summarize(std::move(samples));
}

TimingStats measure_generation(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                               std::size_t max_new_tokens, std::size_t repeats, std::size_t warmup) {
    if (repeats == 0) throw ConfigError("measure_generation: repeats must be >= 1");
    std::vector<double> samples;
    for (std::size_t i = 0; i < warmup + repeats; ++i) {
        GenerationSession session(model, schedule);
        const auto start = Clock::now();
        session.generate(prompt, max_new_tokens);
        const double t = seconds_since(start);
        if (i >= warmup) samples.push_back(t);
    }
    return summarize(std::move(samples));
}

AttentionProfile attention_profile(const Model& model, std::span<const int> prompt, std::size_t bins,
                                   std::vector<double> thresholds) {
    if (bins == 0) throw ConfigError("attention_profile: bins must be >= 1");
    AttentionProfile profile;
    profile.bins = bins;
    profile.thresholds = std::move(thresholds);
    const std::size_t n = prompt.size();
    std::vector<std::int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    SessionOptions opts;
    opts.layer_observer = [&](std::size_t step, std::size_t layer, std::span<const std::int64_t>,
                              const LayerOutput& out) {
        if (step != 0) return;
        LayerProfile lp;
        lp.layer = layer;
        for (const TokenScore& s : importance_scores(out.probs, out.probs.query_rows.size() - 1, out.key_positions, all)) {
            lp.scores.push_back(s.score);
        }
        lp.histogram.assign(bins, 0);
        std::size_t below_uniform = 0;
        lp.fraction_below.assign(profile.thresholds.size(), 0.0);
        for (float s : lp.scores) {
            const auto bin = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0f, s) * static_cast<float>(bins)));
            ++lp.histogram[bin];
            if (static_cast<double>(s) < 1.0 / static_cast<double>(n)) ++below_uniform;
            for (std::size_t t = 0; t < profile.thresholds.size(); ++t) {
                if (static_cast<double>(s) < profile.thresholds[t]) lp.fraction_below[t] += 1.0;
            }
        }
        lp.fraction_below_uniform = static_cast<double>(below_uniform) / static_cast<double>(n);
        for (double& f : lp.fraction_below) f /= static_cast<double>(n);
        profile.layers.push_back(std::move(lp));
    };
    GenerationSession session(model, PruningSchedule{}, std::move(opts));
    session.prefill(prompt);
    return profile;
}

std::string profile_csv(const AttentionProfile& profile) {
    std::ostringstream os;
    os << "layer,bin_low,bin_high,count\n";
    for (const LayerProfile& lp : profile.layers) {
        for (std::size_t b = 0; b < profile.bins; ++b) {
            os << lp.layer << ',' << static_cast<double>(b) / static_cast<double>(profile.bins) << ','
               << static_cast<double>(b + 1) / static_cast<double>(profile.bins) << ',' << lp.histogram[b] << '\n';
        }
    }
    return os.str();
}

SweepGrid run_sweep(const Model& model, const std::vector<std::vector<int>>& corpus,
                    std::span<const std::size_t> layer_grid, std::span<const double> fraction_grid,
                    const SweepOptions& options) {
    if (corpus.empty()) throw ConfigError("run_sweep: empty corpus");
    const PruningSchedule baseline;
    std::vector<GenerationReport> base_reports;
    std::vector<double> base_ttft;
    for (const auto& prompt : corpus) {
        base_reports.push_back(run_once(model, prompt, baseline, options.max_new_tokens));
        base_ttft.push_back(measure_ttft(model, prompt, baseline, options.repeats, options.warmup).mean);
    }

    SweepGrid grid;
    for (std::size_t layer : layer_grid) {
        for (double fraction : fraction_grid) {
            PruningSchedule schedule;
            schedule.policy = Policy::lazy;
            schedule.boundaries = {Boundary{layer, fraction}};
            validate_schedule(schedule, model.config());

            SweepRow row;
            row.prune_layer = layer;
            row.keep_fraction = fraction;
            for (std::size_t p = 0; p < corpus.size(); ++p) {
                const GenerationReport rep = run_once(model, corpus[p], schedule, options.max_new_tokens);
                const FidelityResult fid = fidelity(base_reports[p], rep);
                row.fidelity += fid.token_match_rate;
                row.first_token_agreement += fid.first_token_agreement ? 1.0 : 0.0;
                row.first_logit_divergence += fid.first_logit_divergence;
                row.percent_computed += rep.percent_prompt_tokens_computed;
                row.ttft_speedup += base_ttft[p] / measure_ttft(model, corpus[p], schedule, options.repeats, options.warmup).mean;
            }
            const auto n = static_cast<double>(corpus.size());
            row.fidelity /= n;
            row.first_token_agreement /= n;
            row.first_logit_divergence /= n;
            row.percent_computed /= n;
            row.ttft_speedup /= n;
            grid.rows.push_back(row);
        }
    }
    return grid;
}

std::string sweep_csv(const SweepGrid& grid) {
    std::ostringstream os;
    os.precision(10);
    os << "prune_layer,keep_fraction,fidelity,ttft_speedup,percent_computed\n";
    for (const SweepRow& r : grid.rows) {
        os << r.prune_layer << ',' << r.keep_fraction << ',' << r.fidelity << ',' << r.ttft_speedup << ','
           << r.percent_computed << '\n';
    }
    return os.str();
}

BenchSummary run_benchmark(const Model& model, const std::vector<std::vector<int>>& corpus,
                           const std::vector<PruningSchedule>& schedules, const BenchOptions& options) {
    if (corpus.empty()) throw ConfigError("run_benchmark: empty corpus");
    std::vector<PruningSchedule> order{PruningSchedule{}};
    for (const PruningSchedule& s : schedules) {
        if (s.policy != Policy::baseline) order.push_back(s);
    }

    std::vector<GenerationReport> base_reports;
    BenchSummary summary;
    for (const PruningSchedule& schedule : order) {
        PolicySummary ps;
        ps.policy = std::string(policy_name(schedule.policy));
        ps.schedule = format_schedule(schedule.effective_boundaries());
        for (std::size_t p = 0; p < corpus.size(); ++p) {
            const GenerationReport rep = run_once(model, corpus[p], schedule, options.max_new_tokens);
            if (schedule.policy == Policy::baseline) base_reports.push_back(rep);
            const FidelityResult fid = fidelity(base_reports[p], rep);
            ps.token_match_rate += fid.token_match_rate;
            ps.first_token_agreement += fid.first_token_agreement ? 1.0 : 0.0;
            ps.first_logit_divergence += fid.first_logit_divergence;
            ps.percent_computed += rep.percent_prompt_tokens_computed;
            ps.ttft_per_prompt.push_back(measure_ttft(model, corpus[p], schedule, options.repeats, options.warmup).mean);
            ps.total_per_prompt.push_back(
                measure_generation(model, corpus[p], schedule, options.max_new_tokens, options.repeats, options.warmup).mean);
        }
        const auto n = static_cast<double>(corpus.size());
        ps.token_match_rate /= n;
        ps.first_token_agreement /= n;
        ps.first_logit_divergence /= n;
        ps.percent_computed /= n;
        ps.mean_ttft_seconds = mean_of(ps.ttft_per_prompt);
        ps.mean_total_seconds = mean_of(ps.total_per_prompt);
        if (schedule.policy == Policy::baseline) {
            summary.baseline_mean_ttft_seconds = ps.mean_ttft_seconds;
            summary.baseline_mean_total_seconds = ps.mean_total_seconds;
        }
        ps.ttft_speedup = summary.baseline_mean_ttft_seconds / ps.mean_ttft_seconds;
        ps.generation_speedup = summary.baseline_mean_total_seconds / ps.mean_total_seconds;
        summary.policies.push_back(std::move(ps));
    }
    return summary;
}

nlohmann::json to_json(const BenchSummary& s) {
    nlohmann::json rows = nlohmann::json::array();
    for (const PolicySummary& p : s.policies) {
        rows.push_back({{"policy", p.policy},
                        {"schedule", p.schedule},
                        {"mean_ttft_seconds", p.mean_ttft_seconds},
                        {"mean_total_seconds", p.mean_total_seconds},
                        {"ttft_speedup", p.ttft_speedup},
                        {"generation_speedup", p.generation_speedup},
                        {"percent_prompt_tokens_computed", p.percent_computed},
                        {"token_match_rate", p.token_match_rate},
                        {"first_token_agreement", p.first_token_agreement},
                        {"first_logit_divergence", p.first_logit_divergence},
                        {"ttft_seconds_per_prompt", p.ttft_per_prompt},
                        {"total_seconds_per_prompt", p.total_per_prompt}});
    }
    return {{"baseline_mean_ttft_seconds", s.baseline_mean_ttft_seconds},
            {"baseline_mean_total_seconds", s.baseline_mean_total_seconds},
            {"policies", rows}};
}

std::string bench_csv(const BenchSummary& s) {
    std::ostringstream os;
    os.precision(10);
    os << "policy,schedule,ttft_speedup,generation_speedup,percent_computed,token_match_rate,first_token_agreement,"
          "first_logit_divergence\n";
    for (const PolicySummary& p : s.policies) {
        os << p.policy << ",\"" << p.schedule << "\"," << p.ttft_speedup << ',' << p.generation_speedup << ','
           << p.percent_computed << ',' << p.token_match_rate << ',' << p.first_token_agreement << ','
           << p.first_logit_divergence << '\n';
    }
    return os.str();
}

std::vector<std::string> check_usage_series(const std::vector<std::vector<double>>& series) {
    std::vector<std::string> issues;
    for (std::size_t t = 0; t < series.size(); ++t) {
        for (std::size_t l = 0; l < series[t].size(); ++l) {
            if (t > 0 && series[t][l] < series[t - 1][l]) {
                issues.push_back("usage decreases at step " + std::to_string(t) + " layer " + std::to_string(l));
            }
            if (l > 0 && series[t][l] > series[t][l - 1]) {
                issues.push_back("usage grows with depth at step " + std::to_string(t) + " layer " + std::to_string(l));
            }
            if (series[t][l] > 1.0) issues.push_back("usage above 1 at step " + std::to_string(t));
        }
    }
    return issues;
}

VerifyReport verify_generation(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                               std::size_t max_new_tokens, SessionOptions options) {
    VerifyReport vr;
    std::vector<int> previous;
    auto user_observer = options.step_observer;
    options.step_observer = [&](const GenerationSession& s, std::size_t step) {
        for (std::string& v : s.caches().verify_invariants(previous)) {
            vr.violations.push_back("step " + std::to_string(step) + ": " + v);
        }
        for (std::string& v : s.ledger().violations()) {
            vr.violations.push_back("step " + std::to_string(step) + ": " + v);
        }
        for (std::string& v : check_usage_series(cumulative_usage_series(s.ledger()))) {
            vr.violations.push_back("step " + std::to_string(step) + ": " + v);
        }
        previous = s.caches().frontier_snapshot();
        ++vr.steps_checked;
        if (user_observer) user_observer(s, step);
    };
    try {
        GenerationSession session(model, schedule, std::move(options));
        vr.report = session.generate(prompt, max_new_tokens);
        vr.revivals = vr.report.revivals;
    } catch (const InvariantViolation& e) {
        vr.violations.push_back(std::string("engine: ") + e.what());
    }
    return vr;
}

}  // namespace lazyllm::bench
