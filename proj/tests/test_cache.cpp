#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "lazyllm/cache.hpp"
#include "lazyllm/errors.hpp"
#include "support.hpp"

using namespace lazyllm;
namespace ts = testing_support;

namespace {

constexpr std::size_t kLayers = 4;
constexpr std::size_t kWidth = 6;

std::vector<float> row_for(std::int64_t token, std::size_t layer, float salt) {
    std::vector<float> r(kWidth);
    for (std::size_t c = 0; c < kWidth; ++c) r[c] = salt + float(token) * 10.0f + float(layer) + 0.01f * float(c);
    return r;
}

void fill_layers(LayeredCaches& c, std::int64_t token, std::size_t upto) {
    for (std::size_t l = 0; l < upto; ++l) c.kv_insert(l, token, row_for(token, l, 0.0f), row_for(token, l, 0.5f));
}

}  // namespace

TEST_CASE("kv_insert extends the prefix") {
    LayeredCaches c(kLayers, kWidth);
    c.register_token(3);
    CHECK(c.frontier(3) == 0);
    fill_layers(c, 3, kLayers);
    CHECK(c.frontier(3) == static_cast<int>(kLayers));
    CHECK(c.aux_count() == 0);
    for (std::size_t l = 0; l < kLayers; ++l) CHECK(c.has_kv(l, 3));
    CHECK(c.verify_invariants().empty());
}

TEST_CASE("kv_insert out of order is a contract violation") {
    LayeredCaches c(kLayers, kWidth);
    c.register_token(0);
    fill_layers(c, 0, 1);
    CHECK_THROWS_AS(c.kv_insert(2, 0, row_for(0, 2, 0), row_for(0, 2, 0)), InvariantViolation);
    CHECK_THROWS_AS(c.kv_insert(0, 0, row_for(0, 0, 0), row_for(0, 0, 0)), InvariantViolation);
    CHECK_THROWS_AS(c.kv_insert(0, 9, row_for(9, 0, 0), row_for(9, 0, 0)), InputError);
    CHECK_THROWS_AS(c.kv_insert(1, 0, std::vector<float>(2), row_for(0, 1, 0)), ShapeError);
    CHECK(c.frontier(0) == 1);
}

TEST_CASE("kv_gather") {
    LayeredCaches c(kLayers, kWidth);
    for (std::int64_t t : {0, 1, 2, 5, 7}) {
        c.register_token(t);
        fill_layers(c, t, t == 5 ? 1 : kLayers);
    }
    const GatheredKv none = c.kv_gather(2, {});
    CHECK(none.keys.rows() == 0);
    CHECK(none.values.rows() == 0);
    CHECK(none.positions.empty());

    // Shuffled request comes back in position order with the stored rows.
    std::vector<std::int64_t> req{7, 0, 2, 1};
    const GatheredKv g = c.kv_gather(1, req);
    std::vector<std::int64_t> sorted = req;
    std::sort(sorted.begin(), sorted.end());
    CHECK(g.positions == sorted);
    for (std::size_t r = 0; r < sorted.size(); ++r) {
        const auto k = row_for(sorted[r], 1, 0.0f), v = row_for(sorted[r], 1, 0.5f);
        CHECK(std::equal(k.begin(), k.end(), g.keys.row(r).begin()));
        CHECK(std::equal(v.begin(), v.end(), g.values.row(r).begin()));
    }

    CHECK_THROWS_AS(c.kv_gather(1, std::vector<std::int64_t>{5}), MissingKvError);
    CHECK_NOTHROW(c.kv_gather(0, std::vector<std::int64_t>{5}));
}

TEST_CASE("aux store, take and consumption") {
    LayeredCaches c(kLayers, kWidth);
    c.register_token(4);
    fill_layers(c, 4, 2);
    const auto hidden = row_for(4, 2, 0.25f);
    c.aux_store(2, 4, hidden);
    CHECK(c.has_aux(2, 4));
    CHECK(c.aux_count() == 1);
    CHECK(c.verify_invariants().empty());

    const auto got = c.aux_take(2, 4);
    CHECK(std::equal(hidden.begin(), hidden.end(), got.begin(), got.end()));
    // Reads are non-destructive.
    const auto again = c.aux_take(2, 4);
    CHECK(std::equal(hidden.begin(), hidden.end(), again.begin(), again.end()));

    CHECK_THROWS_AS(c.aux_take(1, 4), MissingAuxError);
    CHECK_THROWS_AS(c.aux_store(2, 4, hidden), InvariantViolation);
    CHECK_THROWS_AS(c.aux_store(1, 4, hidden), InvariantViolation);

    c.kv_insert(2, 4, row_for(4, 2, 0), row_for(4, 2, 0));
    CHECK_FALSE(c.has_aux(2, 4));
    CHECK_THROWS_AS(c.aux_take(2, 4), MissingAuxError);
    CHECK(c.frontier(4) == 3);
    // Mid-revival: frontier below L and no Aux entry yet.
    CHECK_FALSE(c.verify_invariants().empty());
    c.kv_insert(3, 4, row_for(4, 3, 0), row_for(4, 3, 0));
    CHECK(c.verify_invariants().empty());
}

TEST_CASE("aux store rejects fully computed tokens") {
    LayeredCaches c(kLayers, kWidth);
    c.register_token(1);
    fill_layers(c, 1, kLayers);
    CHECK_THROWS(c.aux_store(kLayers - 1, 1, row_for(1, 0, 0)));
}

TEST_CASE("scripted prune and revive frontier sequence") {
    LayeredCaches c(kLayers, kWidth);
    std::vector<int> frontiers;
    c.register_token(0);
    fill_layers(c, 0, 1);
    frontiers.push_back(c.frontier(0));
    c.aux_store(1, 0, row_for(0, 1, 0.75f));  // pruned before layer 1
    const auto before = c.frontier_snapshot();
    CHECK(c.verify_invariants(before).empty());
    // Revived in a later step at layer 1 and carried to the end.
    const auto h = c.aux_take(1, 0);
    CHECK(h[0] == row_for(0, 1, 0.75f)[0]);
    for (std::size_t l = 1; l < kLayers; ++l) c.kv_insert(l, 0, row_for(0, l, 0), row_for(0, l, 0));
    frontiers.push_back(c.frontier(0));
    CHECK(frontiers == std::vector<int>{1, static_cast<int>(kLayers)});
    CHECK(c.verify_invariants(before).empty());
}

TEST_CASE("verify_invariants reports faults") {
    LayeredCaches fresh(kLayers, kWidth);
    CHECK(fresh.verify_invariants().empty());

    LayeredCaches c(kLayers, kWidth);
    for (std::int64_t t = 0; t < 3; ++t) {
        c.register_token(t);
        fill_layers(c, t, kLayers);
    }
    CHECK(c.verify_invariants().empty());
    c.erase_kv_for_testing(1, 2);
    const auto v = c.verify_invariants();
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("token 2") != std::string::npos);

    // A frontier that moved backwards relative to a snapshot.
    LayeredCaches d(kLayers, kWidth);
    d.register_token(0);
    fill_layers(d, 0, 2);
    d.aux_store(2, 0, row_for(0, 2, 0));
    CHECK(d.verify_invariants().empty());
    std::vector<int> later = d.frontier_snapshot();
    later[0] = 3;
    CHECK_FALSE(d.verify_invariants(later).empty());
}

TEST_CASE("register and snapshot") {
    LayeredCaches c(kLayers, kWidth);
    for (std::int64_t t : {9, 2, 5}) c.register_token(t);
    CHECK(c.tokens() == std::vector<std::int64_t>{2, 5, 9});
    CHECK_THROWS_AS(c.register_token(5), InvariantViolation);
    CHECK_THROWS_AS(c.register_token(-1), InputError);
    CHECK_FALSE(c.is_registered(3));
    fill_layers(c, 2, 2);
    c.aux_store(2, 2, row_for(2, 2, 0));
    fill_layers(c, 5, kLayers);

    const auto snap = c.debug_snapshot();
    CHECK(snap.at("frontiers").at("2") == 2);
    CHECK(snap.at("frontiers").at("9") == 0);
    CHECK(snap.at("kv").at(1) == std::vector<std::int64_t>{2, 5});
    CHECK(snap.at("kv").at(3) == std::vector<std::int64_t>{5});
    CHECK(snap.at("aux").at(2) == std::vector<std::int64_t>{2});
    CHECK(snap.at("aux").at(0).empty());
}

TEST_CASE("random step sequences keep the invariants") {
    // Each step advances one token from its frontier to a random depth and
    // parks it in the Aux Cache unless it reached L.
    std::mt19937_64 rng(17);
    LayeredCaches c(kLayers, kWidth);
    for (std::int64_t t = 0; t < 40; ++t) {
        c.register_token(t);
        fill_layers(c, t, 1);
        c.aux_store(1, t, row_for(t, 1, 0));
    }
    std::vector<int> snap = c.frontier_snapshot();
    REQUIRE(c.verify_invariants().empty());
    for (int step = 0; step < 500; ++step) {
        const std::int64_t t = std::uniform_int_distribution<std::int64_t>(0, 39)(rng);
        const int f = c.frontier(t);
        if (f == static_cast<int>(kLayers)) continue;
        const int target = std::uniform_int_distribution<int>(f + 1, static_cast<int>(kLayers))(rng);
        for (int l = f; l < target; ++l) {
            const auto layer = static_cast<std::size_t>(l);
            c.kv_insert(layer, t, row_for(t, layer, 0), row_for(t, layer, 1));
        }
        if (target < static_cast<int>(kLayers)) c.aux_store(static_cast<std::size_t>(target), t, row_for(t, 9, 0));
        REQUIRE(c.verify_invariants(snap).empty());
        snap = c.frontier_snapshot();
    }
}
