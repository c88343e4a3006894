#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "lazyllm/engine.hpp"
#include "lazyllm/errors.hpp"
#include "lazyllm/reference.hpp"
#include "support.hpp"

using namespace lazyllm;
namespace ts = testing_support;

namespace {

const Model& tiny_model() {
    static const Model m = generate_random_model(ts::tiny_config(4, 2, 16, 32), 1);
    return m;
}

PruningSchedule lazy(std::vector<Boundary> b) {
    PruningSchedule s;
    s.policy = Policy::lazy;
    s.boundaries = std::move(b);
    return s;
}

bool is_subset(const std::vector<std::int64_t>& small, const std::vector<std::int64_t>& big) {
    return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

}  // namespace

TEST_CASE("greedy_sample") {
    CHECK(greedy_sample(std::vector<float>{0.1f, 0.9f, 0.3f}) == 1);
    CHECK(greedy_sample(std::vector<float>(7, 2.5f)) == 0);
    CHECK(greedy_sample(std::vector<float>{-1.0f, 3.0f, 3.0f}) == 1);
    CHECK_THROWS_AS(greedy_sample(std::vector<float>{}), InputError);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto v = ts::random_vector(1 + rng() % 300, rng);
        std::size_t best = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] > v[best]) best = i;
        CHECK(greedy_sample(v) == static_cast<int>(best));
    }
}

TEST_CASE("prefill event count and cache state for one boundary") {
    const Model& m = tiny_model();
    GenerationSession s(m, lazy({{2, 0.5}}));
    s.prefill(ts::random_prompt(8, 2));
    const ComputeLedger& ledger = s.ledger();
    CHECK(ledger.total_events() == 26);
    CHECK(ledger.prompt_events() == 26);
    CHECK(ledger.live_sizes()[0] == std::vector<std::uint32_t>{8, 8, 5, 5});

    std::size_t parked = 0, complete = 0;
    for (std::int64_t t = 0; t < 8; ++t) {
        const int f = s.caches().frontier(t);
        if (f == 2) {
            ++parked;
            CHECK(s.caches().has_aux(2, t));
        } else {
            CHECK(f == 4);
            ++complete;
        }
    }
    CHECK(s.caches().aux_count() == 3);
    CHECK(parked == 3);
    CHECK(complete == 5);
    CHECK(s.caches().frontier(7) == 4);  // protected
    CHECK(s.caches().verify_invariants().empty());
}

TEST_CASE("prefill events follow the closed form") {
    const Model& m = tiny_model();
    const std::uint64_t L = m.config().num_layers;
    for (std::uint64_t b = 1; b < L; ++b) {
        for (std::uint64_t num : {10u, 7u, 4u, 1u}) {
            for (std::uint64_t n : {2u, 5u, 8u, 13u, 31u}) {
                GenerationSession s(m, lazy({{b, double(num) / 10.0}}));
                s.prefill(ts::random_prompt(n, n + b));
                CAPTURE(b);
                CAPTURE(num);
                CAPTURE(n);
                CHECK(s.ledger().prompt_events() == ts::closed_form_events(b, num, 10, n, L));
            }
        }
    }
}

TEST_CASE("empty schedule reproduces the monolithic reference") {
    const Model& m = tiny_model();
    const auto prompt = ts::random_prompt(24, 5);
    const std::size_t max_new = 8;
    const auto want = reference::generate(m, prompt, max_new);
    for (Policy p : {Policy::baseline, Policy::lazy}) {
        PruningSchedule sched;
        sched.policy = p;
        SessionOptions opt;
        opt.record_final_hidden = true;
        GenerationSession s(m, sched, opt);
        const auto report = s.generate(prompt, max_new);
        CHECK(report.generated_ids == want);
        CHECK(report.percent_prompt_tokens_computed == 100.0);
        CHECK(report.revivals == 0);

        // Final hidden state of the last fed token against a full recompute.
        std::vector<int> seq = prompt;
        seq.insert(seq.end(), want.begin(), want.end() - 1);
        const auto ref = reference::forward(m, seq);
        const StepHidden& fh = s.final_hidden();
        REQUIRE(fh.tokens == std::vector<std::int64_t>{static_cast<std::int64_t>(seq.size() - 1)});
        float diff = 0.0f;
        for (std::size_t c = 0; c < m.config().d_model; ++c)
            diff = std::max(diff, std::abs(fh.hidden(0, c) - ref.final_hidden(seq.size() - 1, c)));
        CHECK(diff <= 1e-5f);
        CHECK(s.last_logits().size() == m.config().vocab_size);
    }
}

TEST_CASE("keep fraction 1.0 everywhere equals baseline") {
    const Model& m = tiny_model();
    const auto prompt = ts::random_prompt(30, 6);
    GenerationSession base(m, PruningSchedule{});
    GenerationSession full(m, lazy({{1, 1.0}, {2, 1.0}, {3, 1.0}}));
    const auto a = base.generate(prompt, 6);
    const auto b = full.generate(prompt, 6);
    CHECK(a.generated_ids == b.generated_ids);
    CHECK(a.first_token_logits == b.first_token_logits);
    CHECK(b.percent_prompt_tokens_computed == 100.0);
}

TEST_CASE("generate: one token, stop ids, determinism") {
    const Model& m = tiny_model();
    const auto prompt = ts::random_prompt(40, 7);
    GenerationSession one(m, lazy({{1, 0.6}, {3, 0.3}}));
    GenerationSession pre(m, lazy({{1, 0.6}, {3, 0.3}}));
    const auto r = one.generate(prompt, 1);
    REQUIRE(r.generated_ids.size() == 1);
    CHECK(r.generated_ids[0] == pre.prefill(prompt));
    CHECK(r.ttft_seconds <= r.total_seconds);
    CHECK_THROWS_AS(GenerationSession(m, PruningSchedule{}).generate(prompt, 0), InputError);

    GenerationSession x(m, lazy({{1, 0.6}, {3, 0.3}})), y(m, lazy({{1, 0.6}, {3, 0.3}}));
    const auto rx = x.generate(prompt, 10), ry = y.generate(prompt, 10);
    CHECK(rx.generated_ids == ry.generated_ids);
    CHECK(rx.cumulative_usage == ry.cumulative_usage);
    CHECK(rx.live_set_sizes == ry.live_set_sizes);
    CHECK(rx.revivals == ry.revivals);
    for (std::int64_t t = 0; t < 50; ++t)
        for (std::size_t l = 0; l < 4; ++l) CHECK(x.ledger().event_count(t, l) == y.ledger().event_count(t, l));

    // Stop at the first produced id: output keeps it and ends there.
    GenerationSession z(m, PruningSchedule{});
    const int first = z.prefill(prompt);
    GenerationSession w(m, PruningSchedule{});
    const std::vector<int> stop{first};
    CHECK(w.generate(prompt, 10, stop).generated_ids == std::vector<int>{first});
}

TEST_CASE("empty schedule: each decode step adds one event per layer") {
    const Model& m = tiny_model();
    std::vector<std::uint64_t> totals;
    SessionOptions opt;
    opt.step_observer = [&](const GenerationSession& s, std::size_t) { totals.push_back(s.ledger().total_events()); };
    GenerationSession s(m, PruningSchedule{}, opt);
    s.generate(ts::random_prompt(12, 8), 5);
    REQUIRE(totals.size() == 5);
    CHECK(totals[0] == 12 * 4);
    for (std::size_t i = 1; i < totals.size(); ++i) CHECK(totals[i] - totals[i - 1] == 4);
    CHECK(s.ledger().prompt_events() == 48);
}

TEST_CASE("lazy decoding: nesting, context, at-most-once") {
    const Model& m = tiny_model();
    const std::size_t n = 48;
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::int64_t>> ctx;
    const GenerationSession* session = nullptr;
    std::vector<std::string> problems;
    SessionOptions opt;
    opt.layer_observer = [&](std::size_t step, std::size_t layer, std::span<const std::int64_t> live,
                             const LayerOutput& out) {
        ctx[{step, layer}] = out.key_positions;
        if (!std::is_sorted(live.begin(), live.end())) problems.push_back("live set unsorted");
        // Below the first boundary every registered token is visible.
        if (layer == 0 && out.key_positions != session->caches().tokens()) problems.push_back("layer 0 context");
    };
    std::vector<int> snapshot;
    opt.step_observer = [&](const GenerationSession& s, std::size_t) {
        for (const auto& v : s.caches().verify_invariants(snapshot)) problems.push_back(v);
        for (const auto& v : s.ledger().violations()) problems.push_back(v);
        snapshot = s.caches().frontier_snapshot();
    };
    GenerationSession s(m, lazy({{1, 0.7}, {2, 0.5}, {3, 0.3}}), opt);
    session = &s;
    const auto r = s.generate(ts::random_prompt(n, 9), 12);
    CHECK(problems.empty());
    for (const auto& p : problems) MESSAGE(p);
    for (std::size_t step = 0; step < 12; ++step) {
        for (std::size_t l = 0; l + 1 < 4; ++l) CHECK(is_subset(ctx[{step, l + 1}], ctx[{step, l}]));
        // Protected tokens stay visible at every layer.
        const auto last = static_cast<std::int64_t>(n + step - (step > 0 ? 1 : 0));
        CHECK(std::binary_search(ctx[{step, 3}].begin(), ctx[{step, 3}].end(), std::int64_t(n - 1)));
        CHECK(std::binary_search(ctx[{step, 3}].begin(), ctx[{step, 3}].end(), step > 0 ? last : std::int64_t(n - 1)));
    }
    CHECK(r.prompt_compute_events <= n * 4);
    CHECK(r.percent_prompt_tokens_computed < 100.0);
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(n + 12); ++t)
        for (std::size_t l = 0; l < 4; ++l) CHECK(s.ledger().event_count(t, l) <= 1);
    for (std::size_t k = 0; k + 1 < s.generated().size(); ++k)
        CHECK(s.caches().frontier(static_cast<std::int64_t>(n + k)) == 4);
}

TEST_CASE("scripted revival restores the Aux row") {
    const Model& m = tiny_model();
    const std::size_t n = 8;
    std::vector<std::int64_t> dropped;
    std::map<std::int64_t, std::vector<float>> parked;
    std::map<std::int64_t, std::vector<float>> revived;
    std::vector<int> frontier_after_prefill;

    SessionOptions opt;
    opt.step_observer = [&](const GenerationSession& s, std::size_t step) {
        if (step != 0) return;
        frontier_after_prefill = s.caches().frontier_snapshot();
        for (std::int64_t t = 0; t < static_cast<std::int64_t>(n); ++t) {
            if (s.caches().has_aux(2, t)) {
                dropped.push_back(t);
                const auto row = s.caches().aux_take(2, t);
                parked[t].assign(row.begin(), row.end());
            }
        }
    };
    // Decode step 1 keeps the whole context, which revives every parked token.
    opt.keep_override = [](const BoundaryContext& c) -> std::optional<KeepSet> {
        if (c.step == 1) return KeepSet(c.context.begin(), c.context.end());
        return std::nullopt;
    };
    opt.revival_observer = [&](std::size_t step, std::size_t layer, std::int64_t token, std::span<const float> h) {
        CHECK(step == 1);
        CHECK(layer == 2);
        revived[token].assign(h.begin(), h.end());
    };
    GenerationSession s(m, lazy({{2, 0.5}}), opt);
    s.generate(ts::random_prompt(n, 10), 3);

    REQUIRE(dropped.size() == 3);
    const ComputeLedger& ledger = s.ledger();
    CHECK(ledger.revivals().size() == 3);
    for (std::int64_t t : dropped) {
        CAPTURE(t);
        CHECK(frontier_after_prefill[static_cast<std::size_t>(t)] == 2);
        CHECK(s.caches().frontier(t) == 4);
        CHECK(ledger.event_step(t, 1) == 0);
        CHECK(ledger.event_step(t, 2) == 1);
        CHECK(ledger.event_step(t, 3) == 1);
        CHECK(ledger.event_count(t, 2) == 1);
        CHECK(revived[t] == parked[t]);
        CHECK_FALSE(s.caches().has_aux(2, t));

        // The K row inserted at layer 2 is the projection of the parked row.
        const auto& lw = m.weights().layers[2];
        const Matrix h(1, m.config().d_model, parked[t]);
        const std::vector<std::int64_t> pos{t};
        const Matrix k = kernels::rope_apply(kernels::matmul(kernels::rms_norm(h, lw.attn_norm), lw.wk), pos,
                                             m.config().head_dim());
        const GatheredKv g = s.caches().kv_gather(2, pos);
        CHECK(g.keys == k);
    }
    CHECK(s.caches().aux_count() == 0);
    CHECK(s.ledger().violations().empty());
}

TEST_CASE("nesting and protection violations abort the step") {
    const Model& m = tiny_model();
    const auto prompt = ts::random_prompt(16, 11);

    SessionOptions widen;
    widen.keep_override = [&](const BoundaryContext& c) -> std::optional<KeepSet> {
        if (c.boundary_index != 1) return std::nullopt;
        KeepSet all(prompt.size());
        std::iota(all.begin(), all.end(), 0);
        return all;
    };
    GenerationSession a(m, lazy({{1, 0.3}, {3, 0.5}}), widen);
    CHECK_THROWS_AS(a.prefill(prompt), InvariantViolation);

    SessionOptions unprotect;
    unprotect.keep_override = [](const BoundaryContext& c) -> std::optional<KeepSet> {
        return KeepSet(c.context.begin(), c.context.begin() + 1);
    };
    GenerationSession b(m, lazy({{2, 0.5}}), unprotect);
    CHECK_THROWS_AS(b.prefill(prompt), InvariantViolation);
}

TEST_CASE("static policy reuses the prefill keep set") {
    const Model& m = tiny_model();
    const std::size_t n = 20;
    PruningSchedule sched;
    sched.policy = Policy::static_prune;
    sched.static_score_layer = 2;
    sched.static_keep_fraction = 0.4;
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::int64_t>> ctx;
    SessionOptions opt;
    opt.layer_observer = [&](std::size_t step, std::size_t layer, std::span<const std::int64_t>,
                             const LayerOutput& out) { ctx[{step, layer}] = out.key_positions; };
    GenerationSession s(m, sched, opt);
    s.generate(ts::random_prompt(n, 12), 7);
    const KeepSet& fixed = s.static_keep_set();
    CHECK(fixed.size() == 1 + keep_count(0.4, n - 1));
    for (std::size_t step = 0; step < 7; ++step) {
        KeepSet want = fixed;
        for (std::size_t k = 0; k < step; ++k) want.push_back(static_cast<std::int64_t>(n + k));
        for (std::size_t l = 2; l < 4; ++l) CHECK(ctx[{step, l}] == want);
    }
    // Tokens dropped by the static set are never revived.
    CHECK(s.ledger().revivals().empty());

    PruningSchedule keep_all = sched;
    keep_all.static_keep_fraction = 1.0;
    const auto prompt = ts::random_prompt(n, 13);
    CHECK(GenerationSession(m, keep_all).generate(prompt, 5).generated_ids ==
          GenerationSession(m, PruningSchedule{}).generate(prompt, 5).generated_ids);
}

TEST_CASE("random policy drops tokens before prefill") {
    const Model& m = tiny_model();
    const std::size_t n = 30;
    PruningSchedule sched;
    sched.policy = Policy::random;
    sched.drop_ratio = 0.5;
    sched.seed = 42;
    std::vector<std::int64_t> first_ctx;
    SessionOptions opt;
    opt.layer_observer = [&](std::size_t step, std::size_t layer, std::span<const std::int64_t>,
                             const LayerOutput& out) {
        if (step == 0 && layer == 0) first_ctx = out.key_positions;
    };
    GenerationSession s(m, sched, opt);
    const auto r = s.generate(ts::random_prompt(n, 14), 4);
    std::vector<std::int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const std::int64_t last = n - 1;
    const KeepSet want = random_keep_set(all, 0.5, 42, std::span(&last, 1));
    CHECK(first_ctx == want);  // original positions, not compacted
    CHECK(r.prompt_compute_events == want.size() * 4);
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(n); ++t)
        CHECK(s.caches().is_registered(t) == std::binary_search(want.begin(), want.end(), t));
    CHECK(r.drop_ratio == 0.5);

    PruningSchedule none = sched;
    none.drop_ratio = 0.0;
    const auto prompt = ts::random_prompt(n, 15);
    CHECK(GenerationSession(m, none).generate(prompt, 4).generated_ids ==
          GenerationSession(m, PruningSchedule{}).generate(prompt, 4).generated_ids);
}

TEST_CASE("session misuse") {
    const Model& m = tiny_model();
    GenerationSession s(m, PruningSchedule{});
    CHECK_THROWS_AS(s.decode_step(), InvariantViolation);
    CHECK_THROWS_AS(s.prefill(std::vector<int>{}), InputError);
    s.prefill(ts::random_prompt(4, 1));
    CHECK_THROWS_AS(s.prefill(ts::random_prompt(4, 1)), InvariantViolation);
    CHECK_THROWS_AS(GenerationSession(m, lazy({{0, 0.5}})), ConfigError);
    CHECK_THROWS_AS(GenerationSession(m, lazy({{3, 0.5}, {2, 0.5}})), ConfigError);
}
