#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lazyllm/engine.hpp"
#include "lazyllm/metrics.hpp"
#include "lazyllm/model.hpp"
#include "lazyllm/pruning.hpp"

namespace lazyllm::bench {

inline constexpr std::size_t kDefaultWarmup = 5;

struct TimingStats {
    double mean = 0.0;
    double stdev = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::vector<double> samples;
};

TimingStats summarize(std::vector<double> samples);

/// Walltime of prefill only (prompt in, first token out). Warmup runs are
/// discarded.
TimingStats measure_ttft(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                         std::size_t repeats, std::size_t warmup = kDefaultWarmup);

/// Walltime of the full generation loop.
TimingStats measure_generation(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                               std::size_t max_new_tokens, std::size_t repeats, std::size_t warmup = kDefaultWarmup);

struct LayerProfile {
    std::size_t layer = 0;
    std::vector<float> scores;        // per prompt token, w.r.t. the next token
    std::vector<std::size_t> histogram;
    double fraction_below_uniform = 0.0;  // scores < 1/N
    std::vector<double> fraction_below;   // one per requested threshold
};

struct AttentionProfile {
    std::size_t bins = 0;
    std::vector<double> thresholds;
    std::vector<LayerProfile> layers;
};

/// Importance scores of every prompt token at every layer for the first
/// token prediction of an unpruned prefill, with a histogram over [0, 1].
AttentionProfile attention_profile(const Model& model, std::span<const int> prompt, std::size_t bins = 20,
                                   std::vector<double> thresholds = {});
std::string profile_csv(const AttentionProfile& profile);

struct SweepOptions {
    std::size_t max_new_tokens = 1;
    std::size_t repeats = 1;
    std::size_t warmup = 0;
};

struct SweepRow {
    std::size_t prune_layer = 0;
    double keep_fraction = 1.0;
    double fidelity = 0.0;
    double ttft_speedup = 0.0;
    double percent_computed = 0.0;
    double first_token_agreement = 0.0;
    double first_logit_divergence = 0.0;
};

struct SweepGrid {
    std::vector<SweepRow> rows;
};

/// Single-boundary lazy schedules over every (layer, fraction) cell, averaged
/// over the corpus.
SweepGrid run_sweep(const Model& model, const std::vector<std::vector<int>>& corpus,
                    std::span<const std::size_t> layer_grid, std::span<const double> fraction_grid,
                    const SweepOptions& options = {});
std::string sweep_csv(const SweepGrid& grid);

struct BenchOptions {
    std::size_t max_new_tokens = 16;
    std::size_t repeats = 3;
    std::size_t warmup = kDefaultWarmup;
};

struct PolicySummary {
    std::string policy;
    std::string schedule;
    double mean_ttft_seconds = 0.0;
    double mean_total_seconds = 0.0;
    double ttft_speedup = 0.0;        // baseline mean TTFT / policy mean TTFT
    double generation_speedup = 0.0;  // baseline mean total / policy mean total
    double percent_computed = 0.0;
    double token_match_rate = 0.0;
    double first_token_agreement = 0.0;
    double first_logit_divergence = 0.0;
    std::vector<double> ttft_per_prompt;
    std::vector<double> total_per_prompt;
};

struct BenchSummary {
    double baseline_mean_ttft_seconds = 0.0;
    double baseline_mean_total_seconds = 0.0;
    std::vector<PolicySummary> policies;
};

/// Baseline is always run first and is the reference for speedups and
/// fidelity; it is added if missing from `schedules`.
BenchSummary run_benchmark(const Model& model, const std::vector<std::vector<int>>& corpus,
                           const std::vector<PruningSchedule>& schedules, const BenchOptions& options = {});
nlohmann::json to_json(const BenchSummary& summary);
std::string bench_csv(const BenchSummary& summary);

struct VerifyReport {
    std::size_t steps_checked = 0;
    std::size_t revivals = 0;
    std::vector<std::string> violations;
    bench::GenerationReport report;
};

/// Generates with invariant checks (cache invariants, frontier monotonicity,
/// at-most-once ledger, usage-series shape) after every step. Engine
/// invariant exceptions are reported as violations.
VerifyReport verify_generation(const Model& model, std::span<const int> prompt, const PruningSchedule& schedule,
                               std::size_t max_new_tokens, SessionOptions options = {});

/// Monotone in steps and nonincreasing across layers; returns violations.
std::vector<std::string> check_usage_series(const std::vector<std::vector<double>>& series);

}  // namespace lazyllm::bench
