#include <random>

#include <gtest/gtest.h>

#include "soar/analyzer.hpp"
#include "test_support.hpp"

using namespace soar;

namespace {

Finding on(const std::string& asset, const std::optional<std::string>& entry, const Catalog& cat, Tick t = 0) {
    Finding f;
    f.asset_id = asset;
    if (entry) {
        f.catalog_entry_id = *entry;
        f.cve_id = cat.at(*entry).cve_id;
    }
    f.detected_tick = f.last_seen_tick = t;
    f.lifecycle = Lifecycle::Queued;
    return f;
}

nlohmann::json single_asset(double crit, const std::string& exposure) {
    auto doc = test::neutral_scenario(1, 1);
    doc["assets"][0]["criticality"] = crit;
    doc["assets"][0]["exposure"] = exposure;
    return doc;
}

// The weighted sum written out by hand.
double hand_score(double sev, double crit, bool exploited, double central, double expo) {
    return 0.30 * sev + 0.25 * crit + 0.20 * (exploited ? 1.0 : 0.0) + 0.15 * central + 0.10 * expo;
}

}  // namespace

TEST(Analyzer, CanonicalCveScoresNinetySeven) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    ScoringConfig cfg;
    cfg.exploit_intel = {"CVE-2024-21302"};
    auto f = on("scada-1", "unpatched-systems", env.catalog());
    EXPECT_DOUBLE_EQ(analyze(f, env, cfg), 0.97);
    EXPECT_EQ(f.impact_score, 0.97);
    EXPECT_EQ(f.lifecycle, Lifecycle::Analyzed);
    EXPECT_NEAR(impact_score_raw(f, env, cfg), hand_score(1.0, 1.0, true, 0.8, 1.0), 1e-12);
}

TEST(Analyzer, ZeroInputsScoreZero) {
    const auto env = test::load_env(single_asset(0.0, "AirGapped"));
    ScoringConfig cfg;
    cfg.w_cvss = 0.40;
    cfg.w_expo = 0.0;
    auto f = on("node-0", std::nullopt, env.catalog());
    f.anomaly_score = 0.0;
    EXPECT_DOUBLE_EQ(analyze(f, env, cfg), 0.0);
}

TEST(Analyzer, HandEvaluatedMidScore) {
    const auto env = test::load_env(single_asset(0.5, "InternetFacing"));
    ASSERT_EQ(env.catalog().at("insecure-protocols").declared_score.to_string(), "7.0");
    auto f = on("node-0", "insecure-protocols", env.catalog());
    EXPECT_DOUBLE_EQ(analyze(f, env, ScoringConfig{}), 0.44);
    EXPECT_NEAR(impact_score_raw(f, env, ScoringConfig{}), hand_score(0.7, 0.5, false, 0.0, 1.0), 1e-12);
}

TEST(Analyzer, CvssOnlyWeightGivesComputedScore) {
    const auto env = test::load_env(single_asset(0.5, "InternalOnly"));
    ScoringConfig cfg{1.0, 0.0, 0.0, 0.0, 0.0, {}, SeverityBasis::Computed};
    for (const auto& e : env.catalog().entries()) {
        auto f = on("node-0", e.entry_id, env.catalog());
        EXPECT_DOUBLE_EQ(impact_score_raw(f, env, cfg), e.computed_score.tenths() / 100.0) << e.entry_id;
    }
}

TEST(Analyzer, BoundsAndMonotonicity) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto cat = test::bundled_catalog();
    for (int i = 0; i < 300; ++i) {
        const double crit = u(rng);
        const std::string expo = i % 3 == 0 ? "InternetFacing" : i % 3 == 1 ? "InternalOnly" : "AirGapped";
        const auto env = test::load_env(single_asset(crit, expo));
        auto f = on("node-0", std::nullopt, cat);
        f.anomaly_score = 15.0 * u(rng);
        const double s = impact_score_raw(f, env, ScoringConfig{});
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);

        auto g = f;
        g.anomaly_score += 1.0;
        EXPECT_GE(impact_score_raw(g, env, ScoringConfig{}), s);
        const auto higher = test::load_env(single_asset(std::min(1.0, crit + 0.1), expo));
        EXPECT_GE(impact_score_raw(f, higher, ScoringConfig{}), s);
    }
    ScoringConfig cfg;
    cfg.exploit_intel = {"CVE-2024-21302"};
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    auto f = on("scada-1", "unpatched-systems", env.catalog());
    EXPECT_GT(impact_score_raw(f, env, cfg), impact_score_raw(f, env, ScoringConfig{}));
}

TEST(Analyzer, DownAssetIsGone) {
    auto doc = single_asset(0.5, "InternalOnly");
    doc["assets"][0]["state"] = "Down";
    const auto env = test::load_env(doc);
    auto f = on("node-0", std::nullopt, env.catalog());
    try {
        analyze(f, env, ScoringConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AssetGone);
    }
}

TEST(Analyzer, WeightValidation) {
    ScoringConfig bad;
    bad.w_cvss = 0.5;
    EXPECT_THROW(bad.validate(), Error);
    bad.w_cvss = -0.1;
    bad.w_crit = 0.65;
    EXPECT_THROW(bad.validate(), Error);
    EXPECT_NO_THROW(ScoringConfig{}.validate());
}

TEST(Analyzer, TableOnePriorityOrderingOnNeutralAssets) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto env = test::load_env(test::neutral_scenario(10, seed));
        const auto& cat = env.catalog();
        std::vector<Finding> fs;
        for (std::size_t i = 0; i < cat.entries().size(); ++i) {
            fs.push_back(on("node-" + std::to_string(i), cat.entries()[i].entry_id, cat));
            fs.back().finding_id = "F-" + std::to_string(i);
            analyze(fs.back(), env, ScoringConfig{});
        }
        std::vector<const Finding*> ptrs;
        for (const auto& f : fs) ptrs.push_back(&f);
        int last = -1;
        for (const Finding* f : prioritize(ptrs, cat)) {
            const int band = static_cast<int>(cat.at(*f->catalog_entry_id).priority_band);
            EXPECT_GE(band, last) << *f->catalog_entry_id;
            last = band;
        }
    }
}

TEST(Analyzer, TieBreaks) {
    const auto env = test::load_env(test::neutral_scenario(3, 1));
    const auto& cat = env.catalog();
    EXPECT_TRUE(prioritize({}, cat).empty());

    FindingQueue q;
    auto a = on("node-0", std::nullopt, cat, 10);
    auto b = on("node-1", std::nullopt, cat, 5);
    auto c = on("node-2", std::nullopt, cat, 1);
    for (auto* f : {&a, &b, &c}) f->lifecycle = Lifecycle::Detected;
    q.enqueue(a);
    q.enqueue(b);
    q.enqueue(c);
    q.at("F-0001").impact_score = 0.9;
    q.at("F-0002").impact_score = 0.9;
    q.at("F-0003").impact_score = 0.2;
    const auto r = build_report(q, env, 20);
    ASSERT_EQ(r.entries.size(), 3u);
    EXPECT_EQ(r.entries[0].finding_id, "F-0002");  // equal score, earlier detection
    EXPECT_EQ(r.entries[1].finding_id, "F-0001");
    EXPECT_EQ(r.entries[2].finding_id, "F-0003");
    EXPECT_EQ(r.entries[0].rank, 1);
    EXPECT_EQ(r.entries[2].rank, 3);

    // Same score and tick: the higher computed CVSS first, then cve id.
    auto x = on("node-0", "insecure-protocols", cat, 3);
    auto y = on("node-1", "insufficient-logging", cat, 3);
    x.impact_score = y.impact_score = 0.5;
    EXPECT_EQ(priority_before(x, y, cat), cat.at("insecure-protocols").computed_score > cat.at("insufficient-logging").computed_score);
}

TEST(Analyzer, WeightScalingKeepsOrder) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    const auto& cat = env.catalog();
    std::vector<Finding> fs;
    int n = 0;
    for (const auto& a : env.assets()) {
        for (const auto& e : cat.entries()) {
            fs.push_back(on(a.id, e.entry_id, cat));
            fs.back().finding_id = "F-" + std::to_string(n++);
        }
    }
    auto order = [&](const ScoringConfig& cfg) {
        auto copy = fs;
        for (auto& f : copy) analyze(f, env, cfg);
        std::vector<const Finding*> ptrs;
        for (const auto& f : copy) ptrs.push_back(&f);
        std::vector<std::string> ids;
        for (const auto* f : prioritize(ptrs, cat)) ids.push_back(f->finding_id);
        return ids;
    };
    ScoringConfig base;
    ScoringConfig scaled = base;
    const double k = 3.7;
    double sum = 0;
    for (double* w : {&scaled.w_cvss, &scaled.w_crit, &scaled.w_exploit, &scaled.w_central, &scaled.w_expo}) {
        *w *= k;
        sum += *w;
    }
    for (double* w : {&scaled.w_cvss, &scaled.w_crit, &scaled.w_exploit, &scaled.w_central, &scaled.w_expo}) *w /= sum;
    EXPECT_EQ(order(base), order(scaled));
}

TEST(Analyzer, EmptyQueueEmptyReport) {
    const auto env = test::load_env(test::neutral_scenario(2, 1));
    const auto r = build_report(FindingQueue{}, env, 0);
    EXPECT_TRUE(r.entries.empty());
    EXPECT_EQ(r.to_json()["entries"].size(), 0u);
}
