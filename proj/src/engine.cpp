#include "lazyllm/engine.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include "lazyllm/errors.hpp"

namespace lazyllm {
namespace {

using Clock = std::chrono::steady_clock;

bool contains(std::span<const std::int64_t> sorted, std::int64_t token) {
    return std::binary_search(sorted.begin(), sorted.end(), token);
}

std::vector<std::int64_t> difference(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
    std::vector<std::int64_t> out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

int greedy_sample(std::span<const float> logits) {
    if (logits.empty()) throw InputError("greedy_sample: empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best);
}

GenerationSession::GenerationSession(const Model& model, PruningSchedule schedule, SessionOptions options)
    : model_(model),
      schedule_(std::move(schedule)),
      options_(std::move(options)),
      caches_(model.config().num_layers, model.config().d_model) {
    validate_schedule(schedule_, model_.config());
    boundaries_ = schedule_.effective_boundaries();
}

std::vector<std::int64_t> GenerationSession::protected_tokens() const {
    std::vector<std::int64_t> out;
    if (prompt_length_ > 0) out.push_back(static_cast<std::int64_t>(prompt_length_) - 1);
    // generated_[k] sits at position N + k; the last one has not been fed yet
    // unless a decode step is running, which the caller accounts for.
    for (std::size_t k = 0; k + 1 < generated_.size(); ++k) {
        out.push_back(static_cast<std::int64_t>(prompt_length_ + k));
    }
    return out;
}

int GenerationSession::prefill(std::span<const int> prompt_ids) {
    if (prompt_ids.empty()) throw InputError("prefill: empty prompt");
    if (ledger_) throw InvariantViolation("prefill: session already started");
    if (prompt_ids.size() > model_.config().max_position) {
        throw InputError("prefill: prompt of " + std::to_string(prompt_ids.size()) + " tokens exceeds max_position");
    }
    prompt_ids_.assign(prompt_ids.begin(), prompt_ids.end());
    prompt_length_ = prompt_ids.size();
    ledger_.emplace(prompt_length_, model_.config().num_layers);

    std::vector<std::int64_t> all(prompt_length_);
    for (std::size_t i = 0; i < prompt_length_; ++i) all[i] = static_cast<std::int64_t>(i);
    std::vector<std::int64_t> live = all;
    if (schedule_.policy == Policy::random) {
        const std::int64_t last = static_cast<std::int64_t>(prompt_length_) - 1;
        live = random_keep_set(all, schedule_.drop_ratio, schedule_.seed, std::span(&last, 1));
    }
    caches_.reserve(prompt_length_ + 64);
    std::vector<int> ids;
    ids.reserve(live.size());
    for (std::int64_t t : live) {
        caches_.register_token(t);
        ids.push_back(prompt_ids_[static_cast<std::size_t>(t)]);
    }
    const int token = run_step(std::move(live), model_.embed(ids));
    first_logits_ = last_logits_;
    generated_.push_back(token);
    return token;
}

int GenerationSession::decode_step() {
    if (!ledger_ || generated_.empty()) throw InvariantViolation("decode_step: prefill has not run");
    const auto position = static_cast<std::int64_t>(prompt_length_ + generated_.size() - 1);
    if (static_cast<std::size_t>(position) >= model_.config().max_position) {
        throw InputError("decode_step: position " + std::to_string(position) + " exceeds max_position");
    }
    caches_.register_token(position);
    const int id = generated_.back();
    const int token = run_step({position}, model_.embed(std::span(&id, 1)));
    generated_.push_back(token);
    return token;
}

KeepSet GenerationSession::choose_keep_set(std::size_t step, std::size_t boundary_index, const Boundary& boundary,
                                           const AttentionProbs& probs, std::span<const std::int64_t> context,
                                           std::span<const std::int64_t> protected_tokens) {
    const bool static_reuse = schedule_.policy == Policy::static_prune && step > 0;
    ImportanceScores scores;
    if (!static_reuse || options_.keep_override) {
        const auto candidates = difference(context, protected_tokens);
        scores = importance_scores(probs, probs.query_rows.size() - 1, context, candidates);
    }
    if (options_.keep_override) {
        BoundaryContext ctx{step, boundary_index, boundary.layer, scores, context, protected_tokens};
        if (auto forced = options_.keep_override(ctx)) {
            KeepSet keep = std::move(*forced);
            std::sort(keep.begin(), keep.end());
            keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
            for (std::int64_t p : protected_tokens) {
                if (!contains(keep, p)) {
                    throw InvariantViolation("keep set override drops protected token " + std::to_string(p));
                }
            }
            return keep;
        }
    }
    if (schedule_.policy == Policy::static_prune) {
        if (step == 0) {
            static_keep_ = lazyllm::static_keep_set(scores, boundary.keep_fraction, protected_tokens);
            return static_keep_;
        }
        KeepSet keep = static_keep_;
        keep.insert(keep.end(), protected_tokens.begin(), protected_tokens.end());
        std::sort(keep.begin(), keep.end());
        keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
        return keep;
    }
    return select_keep_set(scores, boundary.keep_fraction, protected_tokens);
}

int GenerationSession::run_step(std::vector<std::int64_t> live, Matrix hidden) {
    const std::size_t step = ledger_->begin_step();
    const std::size_t num_layers = model_.config().num_layers;
    const std::int64_t newest = live.back();

    // Protected: last prompt token and every generated token in the sequence,
    // including the one being fed in this step.
    std::vector<std::int64_t> prot = protected_tokens();
    if (step > 0) prot.push_back(newest);
    std::sort(prot.begin(), prot.end());

    std::vector<std::int64_t> context = caches_.tokens();
    std::vector<std::int64_t> scored_context;
    AttentionProbs last_probs;
    std::size_t next_boundary = 0;

    for (std::size_t layer = 0; layer < num_layers; ++layer) {
        if (next_boundary < boundaries_.size() && boundaries_[next_boundary].layer == layer) {
            const Boundary& boundary = boundaries_[next_boundary];
            KeepSet keep = choose_keep_set(step, next_boundary, boundary, last_probs, scored_context, prot);
            for (std::int64_t t : keep) {
                if (!contains(scored_context, t)) {
                    throw InvariantViolation("boundary " + std::to_string(layer) + ": kept token " + std::to_string(t) +
                                             " is outside the previous keep set");
                }
            }

            std::vector<std::int64_t> next_live;
            Matrix next_hidden;
            std::size_t li = 0;
            for (std::int64_t t : keep) {
                while (li < live.size() && live[li] < t) {
                    caches_.aux_store(layer, live[li], hidden.row(li));
                    ++li;
                }
                if (li < live.size() && live[li] == t) {
                    next_live.push_back(t);
                    next_hidden.append_row(hidden.row(li));
                    ++li;
                    continue;
                }
                const int f = caches_.frontier(t);
                if (f == static_cast<int>(layer)) {
                    next_live.push_back(t);
                    const auto parked = caches_.aux_take(layer, t);
                    next_hidden.append_row(parked);
                    ledger_->record_revival(t, layer);
                    if (options_.revival_observer) options_.revival_observer(step, layer, t, parked);
                } else if (f < static_cast<int>(layer)) {
                    throw InvariantViolation("boundary " + std::to_string(layer) + ": kept token " + std::to_string(t) +
                                             " has frontier " + std::to_string(f));
                }
            }
            for (; li < live.size(); ++li) caches_.aux_store(layer, live[li], hidden.row(li));

            live = std::move(next_live);
            hidden = std::move(next_hidden);
            context = std::move(keep);
            ++next_boundary;
        }

        const auto external = difference(context, live);
        const GatheredKv gathered = caches_.kv_gather(layer, external);
        LayerOutput out = model_.layer_forward(layer, hidden, live, gathered.keys, gathered.values,
                                               gathered.positions, ProbsCapture::last_query);
        for (std::size_t r = 0; r < live.size(); ++r) {
            caches_.kv_insert(layer, live[r], out.keys.row(r), out.values.row(r));
            ledger_->record(live[r], layer);
        }
        if (options_.layer_observer) options_.layer_observer(step, layer, live, out);
        hidden = std::move(out.hidden);
        last_probs = std::move(out.probs);
        scored_context = std::move(out.key_positions);
    }

    if (live.empty() || live.back() != newest) {
        throw InvariantViolation("step " + std::to_string(step) + ": newest token left the live set");
    }
    last_logits_ = model_.logits(model_.final_norm(hidden.row(live.size() - 1)));
    if (options_.record_final_hidden) final_hidden_ = StepHidden{live, hidden};
    ++steps_;
    if (options_.step_observer) options_.step_observer(*this, step);
    return greedy_sample(last_logits_);
}

bench::GenerationReport GenerationSession::generate(std::span<const int> prompt_ids, std::size_t max_new_tokens,
                                                    std::span<const int> stop_ids) {
    if (max_new_tokens == 0) throw InputError("generate: max_new_tokens must be >= 1");
    auto is_stop = [&](int id) { return std::find(stop_ids.begin(), stop_ids.end(), id) != stop_ids.end(); };

    const auto start = Clock::now();
    int token = prefill(prompt_ids);
    const auto first = Clock::now();
    while (generated_.size() < max_new_tokens && !is_stop(token)) token = decode_step();
    const auto end = Clock::now();

    bench::GenerationReport r;
    r.policy = std::string(policy_name(schedule_.policy));
    r.schedule = format_schedule(boundaries_);
    r.drop_ratio = schedule_.policy == Policy::random ? schedule_.drop_ratio : 0.0;
    r.seed = schedule_.seed;
    r.prompt_length = prompt_length_;
    r.num_layers = model_.config().num_layers;
    r.generated_ids = generated_;
    r.ttft_seconds = std::chrono::duration<double>(first - start).count();
    r.total_seconds = std::chrono::duration<double>(end - start).count();
    r.prompt_compute_events = ledger_->prompt_events();
    r.total_compute_events = ledger_->total_events();
    r.percent_prompt_tokens_computed = bench::percent_prompt_tokens_computed(*ledger_);
    r.cumulative_usage = bench::cumulative_usage_series(*ledger_);
    r.live_set_sizes = ledger_->live_sizes();
    r.revivals = ledger_->revivals().size();
    r.first_token_logits = first_logits_;
    return r;
}

}  // namespace lazyllm
