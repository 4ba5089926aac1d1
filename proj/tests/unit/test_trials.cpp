#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "thermopalm/trials.hpp"

using namespace thermopalm;

TEST(Exp2Table, BalancedAndComplete) {
    const auto t = exp2_trial_table(Exp2Config{}, 30.0, 4);
    ASSERT_EQ(t.size(), 40u);
    std::map<std::pair<Comparison, Polarity>, int> cells;
    int equal = 0;
    for (const auto& x : t) {
        ++cells[{x.comparison, x.polarity}];
        equal += x.equal;
        EXPECT_EQ(x.first_c, 30.0 + polarity_sign(x.polarity) * 8.0);
        EXPECT_EQ(x.equal, x.first_c == x.second_c);
        EXPECT_GE(x.second_c, 15.0);
        EXPECT_LE(x.second_c, 45.0);
    }
    EXPECT_EQ(cells.size(), 4u);
    for (const auto& [_, n] : cells) EXPECT_EQ(n, 10);
    EXPECT_EQ(equal, 20);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].index, static_cast<int>(i));
}

TEST(Exp2Table, OddRepetitionsStillBalanceOverall) {
    Exp2Config cfg;
    cfg.repetitions = 5;
    const auto t = exp2_trial_table(cfg, 30.0, 1);
    EXPECT_EQ(std::count_if(t.begin(), t.end(), [](const auto& x) { return x.equal; }), 10);
}

TEST(Exp2Table, SeedDeterminesOrder) {
    const auto a = exp2_trial_table(Exp2Config{}, 30.0, 4);
    const auto b = exp2_trial_table(Exp2Config{}, 30.0, 4);
    const auto c = exp2_trial_table(Exp2Config{}, 30.0, 5);
    auto key = [](const std::vector<Exp2Trial>& v) {
        std::vector<std::tuple<int, int, double, double>> k;
        for (const auto& x : v) k.emplace_back(static_cast<int>(x.comparison), static_cast<int>(x.polarity), x.first_c, x.second_c);
        return k;
    };
    EXPECT_EQ(key(a), key(b));
    EXPECT_NE(key(a), key(c));
    auto sa = key(a), sc = key(c);
    std::sort(sa.begin(), sa.end());
    std::sort(sc.begin(), sc.end());
    EXPECT_EQ(sa, sc);
}

TEST(Exp3Table, ThirtyChangedPairsPerPolarity) {
    const auto t = exp3_pair_table(Exp3Config{}, 9);
    ASSERT_EQ(t.size(), 72u);
    for (Polarity p : {Polarity::warm, Polarity::cool}) {
        std::set<std::pair<std::string, std::string>> changed;
        int catches = 0;
        for (const auto& x : t) {
            if (x.polarity != p) continue;
            if (x.changed) {
                EXPECT_NE(x.first, x.second);
                changed.insert({x.first, x.second});
            } else {
                EXPECT_EQ(x.first, x.second);
                ++catches;
            }
        }
        EXPECT_EQ(changed.size(), 30u);
        EXPECT_EQ(catches, 6);
        EXPECT_EQ(std::count_if(t.begin(), t.end(), [&](const auto& x) { return x.polarity == p && x.changed; }), 30);
    }
}

TEST(Exp3Table, SeedReproducible) {
    const auto a = exp3_pair_table(Exp3Config{}, 2);
    const auto b = exp3_pair_table(Exp3Config{}, 2);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].first, b[i].first);
        EXPECT_EQ(a[i].second, b[i].second);
        EXPECT_EQ(a[i].polarity, b[i].polarity);
    }
}

TEST(SeededShuffle, IsAPermutation) {
    std::mt19937_64 rng(1);
    std::vector<int> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i;
    auto w = v;
    seeded_shuffle(w, rng);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}

TEST(TrialRecord, JsonRoundTrip) {
    TrialRecord r;
    r.session_id = "s1";
    r.participant_id = "p7";
    r.experiment = "exp1";
    r.seed = 42;
    r.trial_index = 3;
    r.condition = {{"polarity", "warm"}, {"pattern", "line"}};
    r.stimulus = {{"reference_c", 34.0}, {"test_c", 37.6}};
    r.response = "different";
    r.ground_truth_different = true;
    r.correct = true;
    r.response_time_s = 0.25;
    r.session_time_s = 12.34;
    const auto j = to_json(r);
    EXPECT_EQ(j["schema"], 1);
    EXPECT_EQ(j["session_time_us"], 12340000);
    EXPECT_EQ(trial_record_from_json(nlohmann::ordered_json::parse(j.dump())), r);
}
