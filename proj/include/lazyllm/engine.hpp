#pragma once

// Generation with dynamic progressive token pruning.
//
// Prefill and every decode step run the same per-layer loop. Layer 0 starts
// from the step's live set (all prompt tokens for prefill, the newest token
// for decode). At each boundary the newest token's attention row from the
// previous layer scores the current key context and a keep set is chosen.
// Live tokens that are dropped park their hidden state in the Aux Cache at
// that layer; kept tokens whose frontier equals the layer are revived from
// the Aux Cache and become live; kept tokens with deeper frontiers contribute
// cached K/V only. Every (token, layer) pair is computed at most once over
// the session.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lazyllm/cache.hpp"
#include "lazyllm/ledger.hpp"
#include "lazyllm/metrics.hpp"
#include "lazyllm/model.hpp"
#include "lazyllm/pruning.hpp"

namespace lazyllm {

class GenerationSession;

/// Everything a keep-set override sees at a boundary.
struct BoundaryContext {
    std::size_t step;
    std::size_t boundary_index;
    std::size_t layer;
    const ImportanceScores& scores;              // non-protected candidates
    std::span<const std::int64_t> context;       // key context at layer - 1
    std::span<const std::int64_t> protected_tokens;
};

struct SessionOptions {
    /// Returning a set replaces the policy's choice at that boundary. Used to
    /// script prune/revive scenarios.
    std::function<std::optional<KeepSet>(const BoundaryContext&)> keep_override;
    /// Called after every completed step (0 = prefill).
    std::function<void(const GenerationSession&, std::size_t step)> step_observer;
    /// Called after each layer with the live tokens and the layer output.
    std::function<void(std::size_t step, std::size_t layer, std::span<const std::int64_t> live, const LayerOutput&)>
        layer_observer;
    /// Called with the Aux Cache row each revived token re-enters with.
    std::function<void(std::size_t step, std::size_t layer, std::int64_t token, std::span<const float> hidden)>
        revival_observer;
    /// Keep the final-layer hidden rows of the last step.
    bool record_final_hidden = false;
};

struct StepHidden {
    std::vector<std::int64_t> tokens;
    Matrix hidden;  // final-layer hidden states (before the final norm)
};

/// Argmax with ties resolved to the lowest id.
int greedy_sample(std::span<const float> logits);

class GenerationSession {
public:
    GenerationSession(const Model& model, PruningSchedule schedule, SessionOptions options = {});

    /// Runs the prompt and returns the first generated token.
    int prefill(std::span<const int> prompt_ids);
    /// Feeds the latest generated token and returns the next one.
    int decode_step();

    /// Prefill plus decode loop. Stops after `max_new_tokens` or once a stop id
    /// is produced (the stop id is kept in the output).
    bench::GenerationReport generate(std::span<const int> prompt_ids, std::size_t max_new_tokens,
                                     std::span<const int> stop_ids = {});

    const Model& model() const { return model_; }
    const PruningSchedule& schedule() const { return schedule_; }
    const LayeredCaches& caches() const { return caches_; }
    const ComputeLedger& ledger() const { return *ledger_; }
    const std::vector<int>& generated() const { return generated_; }
    std::size_t prompt_length() const { return prompt_length_; }
    std::size_t steps_completed() const { return steps_; }

    const std::vector<float>& first_token_logits() const { return first_logits_; }
    const std::vector<float>& last_logits() const { return last_logits_; }
    const StepHidden& final_hidden() const { return final_hidden_; }
    /// Keep set chosen by the static policy during prefill.
    const KeepSet& static_keep_set() const { return static_keep_; }
    /// Last prompt token and all generated tokens fed so far.
    std::vector<std::int64_t> protected_tokens() const;

private:
    int run_step(std::vector<std::int64_t> live, Matrix hidden);
    KeepSet choose_keep_set(std::size_t step, std::size_t boundary_index, const Boundary& boundary,
                            const AttentionProbs& probs, std::span<const std::int64_t> context,
                            std::span<const std::int64_t> protected_tokens);

    const Model& model_;
    PruningSchedule schedule_;
    std::vector<Boundary> boundaries_;
    SessionOptions options_;
    LayeredCaches caches_;
    std::optional<ComputeLedger> ledger_;
    std::vector<int> prompt_ids_;
    std::vector<int> generated_;
    std::size_t prompt_length_ = 0;
    std::size_t steps_ = 0;
    std::vector<float> first_logits_;
    std::vector<float> last_logits_;
    StepHidden final_hidden_;
    KeepSet static_keep_;
};

}  // namespace lazyllm
