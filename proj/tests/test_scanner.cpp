#include <cmath>

#include <gtest/gtest.h>

#include "soar/scanner.hpp"
#include "test_support.hpp"

using namespace soar;

namespace {

nlohmann::json quiet_canonical(std::uint64_t seed = 42) {
    auto doc = test::scenario_json("canonical_grid");
    doc["attack_schedule"] = nlohmann::json::array();
    doc["seed"] = seed;
    return doc;
}

// Warms a model on `ticks` quiet batches.
void warm(BaselineModel& m, Environment& env, const Catalog& cat, int ticks) {
    for (int t = 0; t < ticks; ++t) update_and_detect(m, env.step(), cat);
}

Finding anomaly(const std::string& asset, double score) {
    Finding f;
    f.asset_id = asset;
    f.anomaly_score = score;
    return f;
}

Finding signature(const std::string& asset, const std::string& entry, const Catalog& cat) {
    Finding f;
    f.asset_id = asset;
    f.catalog_entry_id = entry;
    f.cve_id = cat.at(entry).cve_id;
    return f;
}

}  // namespace

TEST(Scanner, NothingDuringWarmup) {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto doc = test::scenario_json("canonical_grid");
        doc["seed"] = seed;
        for (auto& s : doc["attack_schedule"]) s["tick"] = 0;
        auto env = test::load_env(doc);
        BaselineModel m;
        for (int t = 0; t < m.config().warmup_ticks - 1; ++t) {
            EXPECT_TRUE(update_and_detect(m, env.step(), env.catalog()).empty()) << "tick " << t;
        }
    }
}

TEST(Scanner, FirmwareSignatureFindsCve) {
    auto env = test::load_env(quiet_canonical());
    BaselineModel m;
    warm(m, env, env.catalog(), 60);
    env.inject_vuln("scada-1", "unpatched-systems");
    const auto found = update_and_detect(m, env.step(), env.catalog());
    const auto it = std::find_if(found.begin(), found.end(), [](const Finding& f) { return f.cve_id.has_value(); });
    ASSERT_NE(it, found.end());
    EXPECT_EQ(*it->cve_id, "CVE-2024-21302");
    EXPECT_EQ(it->asset_id, "scada-1");
}

TEST(Scanner, QuietBatchAfterWarmupIsClean) {
    auto env = test::load_env(quiet_canonical());
    BaselineModel m;
    warm(m, env, env.catalog(), 60);
    const auto b = env.step();
    for (const auto& f : detect(m, b, env.catalog())) EXPECT_TRUE(f.is_anomaly()) << f.asset_id;
}

TEST(Scanner, TenfoldInboundTrafficIsAnomalous) {
    auto env = test::load_env(quiet_canonical());
    BaselineModel m;
    const std::size_t fi = static_cast<std::size_t>(Feature::TrafficInBytes);
    // Independent EWMA over the same stream.
    double mean = 0.0, var = 0.0;
    int n = 0;
    const double alpha = m.config().ewma_decay;
    for (int t = 0; t < 200; ++t) {
        const auto b = env.step();
        const double x = b.find("ops-srv")->features[fi];
        if (n == 0) {
            mean = x;
        } else {
            const double d = x - mean;
            mean += alpha * d;
            var = (1 - alpha) * (var + alpha * d * d);
        }
        ++n;
        update_and_detect(m, b, env.catalog());
    }
    auto b = env.step();
    TelemetryBatch probe{b.tick, {*b.find("ops-srv")}};
    probe.records[0].features[fi] = 10 * mean;
    const double z = 9 * mean / std::sqrt(var);
    EXPECT_GE(z, 4.0);
    const auto found = detect(m, probe, env.catalog());
    ASSERT_EQ(found.size(), 1u);
    EXPECT_TRUE(found[0].is_anomaly());
    EXPECT_EQ(found[0].peak_feature, Feature::TrafficInBytes);
    EXPECT_NEAR(found[0].anomaly_score, z, 1e-6 * z);
}

TEST(Scanner, DetectIsPureInTheModel) {
    auto env = test::load_env(test::scenario_json("canonical_grid"));
    BaselineModel m;
    for (int t = 0; t < 70; ++t) {
        const auto b = env.step();
        const auto once = detect(m, b, env.catalog());
        const auto twice = detect(m, b, env.catalog());
        ASSERT_EQ(once.size(), twice.size());
        for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(to_json(once[i]), to_json(twice[i]));
        update_and_detect(m, b, env.catalog());
    }
}

TEST(Scanner, EverySignatureInjectionIsFoundWithinOneTick) {
    const auto cat = test::bundled_catalog();
    for (const auto& entry : cat.entries()) {
        auto env = test::load_env(quiet_canonical());
        BaselineModel m;
        warm(m, env, cat, 55);
        env.inject_vuln("ops-srv", entry.entry_id);
        bool seen = false;
        for (int t = 0; t < 2 && !seen; ++t) {
            for (const auto& f : update_and_detect(m, env.step(), cat)) {
                seen = seen || (f.asset_id == "ops-srv" && f.catalog_entry_id == entry.entry_id);
            }
        }
        EXPECT_TRUE(seen) << entry.entry_id;
    }
}

TEST(Scanner, FalsePositiveRateOnQuietRuns) {
    int findings = 0;
    long asset_ticks = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto env = test::load_env(quiet_canonical(seed));
        BaselineModel m;
        for (int t = 0; t < 500; ++t) {
            const auto f = update_and_detect(m, env.step(), env.catalog());
            findings += static_cast<int>(f.size());
            if (t >= m.config().warmup_ticks) asset_ticks += static_cast<long>(env.assets().size());
        }
    }
    const double per_100 = 100.0 * findings / static_cast<double>(asset_ticks);
    RecordProperty("false_positives_per_100_asset_ticks", std::to_string(per_100));
    std::printf("quiet-run anomalies: %d over %ld asset-ticks (%.4f per 100)\n", findings, asset_ticks, per_100);
    EXPECT_LT(per_100, 1.0);
}

TEST(Scanner, RiskLattice) {
    const auto cat = test::bundled_catalog();
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    EXPECT_EQ(classify_risk(signature("scada-1", "unpatched-systems", cat), env.asset("scada-1"), cat), RiskBand::High);

    Asset ws;
    ws.asset_class = AssetClass::Workstation;
    ws.criticality = 0.1;
    EXPECT_EQ(classify_risk(anomaly("ws", 1.0), ws, cat), RiskBand::Low);

    Asset gap;
    gap.exposure = Exposure::AirGapped;
    gap.criticality = 0.5;
    ASSERT_EQ(cat.at("misconfiguration").priority_band, PriorityBand::MediumHigh);
    EXPECT_EQ(classify_risk(signature("x", "misconfiguration", cat), gap, cat), RiskBand::Medium);
    gap.exposure = Exposure::InternetFacing;
    EXPECT_EQ(classify_risk(signature("x", "misconfiguration", cat), gap, cat), RiskBand::High);
}

TEST(Scanner, ContainmentByBand) {
    auto env = test::load_env(quiet_canonical());
    const auto cat = test::bundled_catalog();

    auto high = signature("scada-1", "unpatched-systems", cat);
    high.risk_band = RiskBand::High;
    const auto h0 = env.trajectory_hash();
    auto rec = instant_containment(high, env);
    ASSERT_TRUE(rec);
    EXPECT_EQ(rec->kind, ContainmentKind::Isolate);
    EXPECT_TRUE(rec->env_mutated);
    EXPECT_EQ(rec->tick, env.clock());
    EXPECT_EQ(env.asset("scada-1").state, AssetState::Isolated);
    EXPECT_NE(env.trajectory_hash(), h0);

    auto again = anomaly("scada-1", 9.0);
    again.risk_band = RiskBand::High;
    const auto h1 = env.trajectory_hash();
    EXPECT_FALSE(instant_containment(again, env));
    EXPECT_FALSE(instant_containment(high, env));
    EXPECT_EQ(env.trajectory_hash(), h1);

    auto low = anomaly("fw-1", 1.0);
    low.risk_band = RiskBand::Low;
    const auto before = env.state_hash();
    auto alert = instant_containment(low, env);
    ASSERT_TRUE(alert);
    EXPECT_EQ(alert->kind, ContainmentKind::Alert);
    EXPECT_FALSE(alert->env_mutated);
    EXPECT_EQ(env.state_hash(), before);

    auto medium = signature("hmi-1", "insecure-protocols", cat);
    medium.risk_band = RiskBand::Medium;
    auto restrict = instant_containment(medium, env);
    ASSERT_TRUE(restrict);
    EXPECT_EQ(restrict->kind, ContainmentKind::Restrict);
    medium.risk_band = RiskBand::High;
    auto escalated = instant_containment(medium, env);
    ASSERT_TRUE(escalated);
    EXPECT_EQ(escalated->kind, ContainmentKind::Isolate);
}

TEST(Scanner, QueueDedupFollowsLifecycle) {
    const auto cat = test::bundled_catalog();
    FindingQueue q;
    auto f = signature("scada-1", "unpatched-systems", cat);
    f.detected_tick = f.last_seen_tick = 60;
    const auto first = q.enqueue(f);
    EXPECT_FALSE(first.merged);
    EXPECT_EQ(q.size(), 1u);

    f.detected_tick = f.last_seen_tick = 61;
    const auto second = q.enqueue(f);
    EXPECT_TRUE(second.merged);
    EXPECT_EQ(second.finding_id, first.finding_id);
    EXPECT_EQ(q.size(), 1u);
    EXPECT_EQ(q.at(first.finding_id).detected_tick, 60);
    EXPECT_EQ(q.at(first.finding_id).last_seen_tick, 61);

    auto& open = q.at(first.finding_id);
    for (auto l : {Lifecycle::Analyzed, Lifecycle::Planned, Lifecycle::Remediating, Lifecycle::Resolved}) open.advance(l);
    f.detected_tick = f.last_seen_tick = 90;
    const auto third = q.enqueue(f);
    EXPECT_FALSE(third.merged);
    EXPECT_EQ(q.size(), 2u);
    EXPECT_EQ(q.open_count(), 1u);
}

TEST(Scanner, LifecycleOnlyMovesForward) {
    Finding f;
    f.advance(Lifecycle::Queued);
    f.advance(Lifecycle::Analyzed);
    EXPECT_THROW(f.advance(Lifecycle::Queued), Error);
    EXPECT_THROW(f.advance(Lifecycle::Rejected), Error);
    EXPECT_THROW(f.advance(Lifecycle::Resolved), Error);
    f.advance(Lifecycle::Planned);
    f.advance(Lifecycle::AwaitingApproval);
    f.advance(Lifecycle::Rejected);
    EXPECT_TRUE(is_terminal(f.lifecycle));
}

TEST(Scanner, ModelAndQueueRoundTrip) {
    auto env = test::load_env(test::scenario_json("canonical_grid"));
    BaselineModel m;
    FindingQueue q;
    for (int t = 0; t < 80; ++t) {
        for (auto& f : update_and_detect(m, env.step(), env.catalog())) {
            f.risk_band = classify_risk(f, env.asset(f.asset_id), env.catalog());
            q.enqueue(f);
        }
    }
    EXPECT_EQ(BaselineModel::from_json(m.to_json()), m);
    EXPECT_EQ(FindingQueue::from_json(q.to_json()).to_json(), q.to_json());
    EXPECT_GE(q.size(), 1u);
}
