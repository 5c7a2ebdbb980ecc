#include <chrono>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "soar/mapper.hpp"
#include "test_support.hpp"

using namespace soar;

namespace {

const State kState{VulnClass::UnpatchedSystems, AssetClass::Server, Exposure::InternalOnly};

// One state; `winner` resolves with probability p_win, everything else
// resolves with probability p_other. Records every action taken.
class ScriptedEnv final : public TrainingEnvironment {
public:
    ScriptedEnv(ActionKind winner, double p_win, double p_other, bool always_terminal)
        : winner_(winner), p_win_(p_win), p_other_(p_other), always_terminal_(always_terminal) {}

    State reset(Rng&) override { return kState; }
    Transition act(ActionKind a, Rng& rng) override {
        taken.push_back(a);
        Transition t;
        t.next = kState;
        const double p = a == winner_ ? p_win_ : p_other_;
        t.resolved = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
        t.terminal = always_terminal_;
        return t;
    }

    std::vector<ActionKind> taken;

private:
    ActionKind winner_;
    double p_win_, p_other_;
    bool always_terminal_;
};

// Several states drawn uniformly; records (state, action) pairs.
class MultiStateEnv final : public TrainingEnvironment {
public:
    explicit MultiStateEnv(std::vector<State> states) : states_(std::move(states)) {}
    State reset(Rng& rng) override {
        cur_ = states_[std::uniform_int_distribution<std::size_t>(0, states_.size() - 1)(rng)];
        return cur_;
    }
    Transition act(ActionKind a, Rng& rng) override {
        taken.emplace_back(cur_, a);
        Transition t;
        t.next = cur_;
        t.resolved = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.3;
        return t;
    }
    std::vector<std::pair<State, ActionKind>> taken;

private:
    std::vector<State> states_;
    State cur_;
};

Finding cve_finding(const Catalog& cat) {
    Finding f;
    f.finding_id = "F-0001";
    f.asset_id = "scada-1";
    f.catalog_entry_id = "unpatched-systems";
    f.cve_id = cat.at("unpatched-systems").cve_id;
    f.risk_band = RiskBand::High;
    f.lifecycle = Lifecycle::Analyzed;
    f.impact_score = 0.97;
    return f;
}

PolicyTable ban_all_but(const State& s, std::set<ActionKind> keep) {
    PolicyTable pt;
    for (std::size_t i = 0; i < kActionCount; ++i) {
        if (!keep.count(action_at(i))) pt.feedback(s, action_at(i), PolicyTable::Verdict::Ban);
    }
    return pt;
}

}  // namespace

TEST(Mapper, StateEncoding) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    const auto f = cve_finding(env.catalog());
    const auto s = encode_state(f, env.asset("scada-1"), env.catalog());
    EXPECT_EQ(s, (State{VulnClass::UnpatchedSystems, AssetClass::ScadaController, Exposure::InternetFacing}));
    EXPECT_EQ(s, encode_state(f, env.asset("scada-1"), env.catalog()));
    EXPECT_EQ(s.to_string(), "UnpatchedSystems/ScadaController/InternetFacing");
    EXPECT_EQ(State::parse(s.to_string()), s);

    Finding an;
    an.asset_id = "ws";
    Asset ws;
    ws.asset_class = AssetClass::Workstation;
    ws.exposure = Exposure::InternalOnly;
    EXPECT_EQ(encode_state(an, ws, env.catalog()),
              (State{VulnClass::Anomaly, AssetClass::Workstation, Exposure::InternalOnly}));

    for (std::size_t i = 0; i < kStateCount; ++i) EXPECT_EQ(State::from_index(i).index(), i);
    EXPECT_EQ(kStateCount, 231u);
}

TEST(Mapper, OneStateTerminalConvergesToOne) {
    ScriptedEnv env(ActionKind::FirmwareUpgrade, 1.0, 0.0, false);
    RlConfig cfg;
    cfg.episodes = 1000;
    const auto pt = train(env, cfg, 11);
    EXPECT_NEAR(pt.q(kState, ActionKind::FirmwareUpgrade), 1.0, 1e-6);
    EXPECT_EQ(pt.greedy(kState), ActionKind::FirmwareUpgrade);
}

TEST(Mapper, OneStateTerminalErrorNeverGrows) {
    ScriptedEnv env(ActionKind::FirmwareUpgrade, 1.0, 0.0, false);
    RlConfig cfg;
    cfg.episodes = 1;
    PolicyTable pt;
    double err = std::fabs(pt.q(kState, ActionKind::FirmwareUpgrade) - 1.0);
    int visits = 0;
    for (int ep = 0; ep < 1500; ++ep) {
        pt = train(env, cfg, 100 + ep, std::move(pt));
        const int v = pt.visits(kState, ActionKind::FirmwareUpgrade);
        const double e = std::fabs(pt.q(kState, ActionKind::FirmwareUpgrade) - 1.0);
        if (v > visits) EXPECT_LE(e, err + 1e-15) << "episode " << ep;
        err = e;
        visits = v;
    }
    EXPECT_LT(err, 1e-6);
}

TEST(Mapper, BanditPicksHigherExpectedReward) {
    // Both actions end the episode; AutoPatch pays 1.0 always, FixMisconfig
    // pays 1.0 one time in five, so the expected rewards are 1.0 and 0.2.
    ScriptedEnv env(ActionKind::AutoPatch, 1.0, 0.2, true);
    auto start = ban_all_but(kState, {ActionKind::AutoPatch, ActionKind::FixMisconfig});
    RlConfig cfg;
    cfg.episodes = 4000;
    const auto pt = train(env, cfg, 3, start);
    EXPECT_EQ(pt.greedy(kState), ActionKind::AutoPatch);
    EXPECT_NEAR(pt.q(kState, ActionKind::AutoPatch), 1.0, 1e-3);
    EXPECT_NEAR(pt.q(kState, ActionKind::FixMisconfig), 0.2, 0.1);
}

TEST(Mapper, ToyScenarioMatchesOracle) {
    const auto oracle = test::toy_oracle();
    ASSERT_EQ(oracle.best.size(), 6u);
    const auto doc = test::scenario_json("toy_rl");
    auto env = SimTrainingEnvironment::from_scenario(Environment::load_file(test::scenario_path("toy_rl")), doc);
    RlConfig cfg;
    cfg.episodes = 20000;
    const auto t0 = std::chrono::steady_clock::now();
    const auto pt = train(env, cfg, 7);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);

    int visited = 0, matched = 0;
    for (std::size_t i = 0; i < kStateCount; ++i) {
        const auto s = State::from_index(i);
        if (pt.state_visits(s) == 0) continue;
        ++visited;
        ASSERT_TRUE(oracle.best.count(s.to_string())) << s.to_string();
        const auto g = pt.greedy(s);
        if (g && oracle.best.at(s.to_string()).count(std::string(name_of(*g)))) ++matched;
    }
    EXPECT_EQ(visited, 6);
    EXPECT_GE(matched, std::ceil(0.95 * visited));
}

TEST(Mapper, TrainingIsDeterministic) {
    const auto doc = test::scenario_json("toy_rl");
    auto base = Environment::load_file(test::scenario_path("toy_rl"));
    auto e1 = SimTrainingEnvironment::from_scenario(base, doc);
    auto e2 = SimTrainingEnvironment::from_scenario(base, doc);
    RlConfig cfg;
    cfg.episodes = 2000;
    EXPECT_EQ(train(e1, cfg, 9), train(e2, cfg, 9));
}

TEST(Mapper, PinsAndBansHoldDuringTrainingAndMapping) {
    std::mt19937_64 rng(77);
    std::vector<State> states;
    for (auto vc : {VulnClass::UnpatchedSystems, VulnClass::WeakAuthentication, VulnClass::InsecureProtocols}) {
        states.push_back({vc, AssetClass::Server, Exposure::InternalOnly});
    }
    const auto cat = test::bundled_catalog();
    for (int trial = 0; trial < 20; ++trial) {
        PolicyTable pt;
        std::map<std::size_t, ActionKind> pins;
        std::set<std::pair<std::size_t, ActionKind>> bans;
        for (const auto& s : states) {
            const auto roll = rng() % 3;
            if (roll == 0) {
                const auto a = action_at(rng() % kActionCount);
                pt.feedback(s, a, PolicyTable::Verdict::Pin);
                pins[s.index()] = a;
            } else {
                for (int k = 0; k < 5; ++k) {
                    const auto a = action_at(rng() % kActionCount);
                    pt.feedback(s, a, PolicyTable::Verdict::Ban);
                    bans.insert({s.index(), a});
                }
            }
        }
        MultiStateEnv env(states);
        RlConfig cfg;
        cfg.episodes = 300;
        pt = train(env, cfg, trial, pt);
        for (const auto& [s, a] : env.taken) {
            if (pins.count(s.index())) EXPECT_EQ(a, pins[s.index()]);
            EXPECT_FALSE(bans.count({s.index(), a})) << s.to_string() << " " << name_of(a);
        }
        for (const auto& s : states) {
            Asset asset;
            asset.id = "srv";
            asset.asset_class = AssetClass::Server;
            Finding f;
            f.finding_id = "F";
            f.asset_id = "srv";
            f.lifecycle = Lifecycle::Analyzed;
            for (const auto& e : cat.entries()) {
                if (e.vuln_class == s.vuln_class) f.catalog_entry_id = e.entry_id;
            }
            for (auto band : {RiskBand::Low, RiskBand::High}) {
                auto g = f;
                g.risk_band = band;
                const auto plan = map_finding(g, asset, cat, pt, {}, "P", 0);
                if (pins.count(s.index())) EXPECT_EQ(plan.primary, pins[s.index()]);
                for (auto a : plan.actions()) EXPECT_FALSE(bans.count({s.index(), a}));
            }
        }
    }
}

TEST(Mapper, FeedbackVerdicts) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    const auto& cat = env.catalog();
    const auto& scada = env.asset("scada-1");
    auto f = cve_finding(cat);
    const auto s = encode_state(f, scada, cat);

    PolicyTable base;
    base.set_q(s, ActionKind::AutoPatch, 0.9);
    base.add_visit(s, ActionKind::AutoPatch);
    {
        auto g = f;
        EXPECT_EQ(map_finding(g, scada, cat, base, {}, "P", 0).primary, ActionKind::AutoPatch);
    }
    const auto banned = sme_feedback(base, s, ActionKind::AutoPatch, PolicyTable::Verdict::Ban);
    EXPECT_EQ(banned.version(), base.version() + 1);
    {
        auto g = f;
        const auto plan = map_finding(g, scada, cat, banned, {}, "P", 0);
        for (auto a : plan.actions()) EXPECT_NE(a, ActionKind::AutoPatch);
    }

    const auto pinned = sme_feedback(base, s, ActionKind::IsolateSegment, PolicyTable::Verdict::Pin);
    {
        auto g = f;
        const auto plan = map_finding(g, scada, cat, pinned, {}, "P", 0);
        ASSERT_FALSE(plan.steps.empty());
        EXPECT_EQ(plan.steps.front().action, ActionKind::IsolateSegment);
        EXPECT_EQ(plan.source, "pin");
    }

    const double before = base.q(s, ActionKind::FirmwareUpgrade);
    const auto reinforced = sme_feedback(base, s, ActionKind::FirmwareUpgrade, PolicyTable::Verdict::Reinforce, 0.5);
    EXPECT_DOUBLE_EQ(reinforced.q(s, ActionKind::FirmwareUpgrade), before + 0.5);
    const auto penalized = sme_feedback(reinforced, s, ActionKind::FirmwareUpgrade, PolicyTable::Verdict::Penalize, 0.2);
    EXPECT_DOUBLE_EQ(penalized.q(s, ActionKind::FirmwareUpgrade), before + 0.3);
    EXPECT_DOUBLE_EQ(penalized.shaping(s, ActionKind::FirmwareUpgrade), 0.3);

    try {
        sme_feedback(banned, s, ActionKind::AutoPatch, PolicyTable::Verdict::Pin);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PinBanConflict);
    }
    EXPECT_THROW(sme_feedback(pinned, s, ActionKind::IsolateSegment, PolicyTable::Verdict::Ban), Error);
}

TEST(Mapper, CanonicalPlanIsGatedThreeSteps) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    const auto& cat = env.catalog();
    auto f = cve_finding(cat);
    const auto plan = map_finding(f, env.asset("scada-1"), cat, PolicyTable{}, {}, "P-0001", 60);
    ASSERT_EQ(plan.steps.size(), 3u);
    EXPECT_EQ(plan.steps[0].action, ActionKind::IsolateSegment);
    EXPECT_EQ(plan.steps[1].action, ActionKind::FirmwareUpgrade);
    EXPECT_EQ(plan.steps[1].params.at("target_version"), "X.1.3");
    EXPECT_EQ(plan.steps[2].action, ActionKind::RestartService);
    EXPECT_TRUE(plan.requires_approval);
    EXPECT_EQ(plan.status, PlanStatus::PendingApproval);
    EXPECT_EQ(f.lifecycle, Lifecycle::AwaitingApproval);

    auto rig = env.asset("scada-1");
    rig.business_critical = false;
    auto g = cve_finding(cat);
    const auto ungated = map_finding(g, rig, cat, PolicyTable{}, {}, "P-0002", 60);
    EXPECT_FALSE(ungated.requires_approval);
    EXPECT_EQ(ungated.status, PlanStatus::Approved);
    EXPECT_EQ(g.lifecycle, Lifecycle::Planned);

    ApprovalTriggers by_tag;
    by_tag.tags = {"safety-critical"};
    auto h = cve_finding(cat);
    EXPECT_TRUE(map_finding(h, rig, cat, PolicyTable{}, by_tag, "P-0003", 60).requires_approval);

    EXPECT_EQ(parse_plan(to_json(plan)).actions(), plan.actions());
    EXPECT_EQ(to_json(parse_plan(to_json(plan))), to_json(plan));
}

TEST(Mapper, EverythingBannedLeavesNoAction) {
    const auto env = test::load_env(test::scenario_json("canonical_grid"));
    const auto& cat = env.catalog();
    auto f = cve_finding(cat);
    const auto s = encode_state(f, env.asset("scada-1"), cat);
    const auto pt = ban_all_but(s, {});
    try {
        map_finding(f, env.asset("scada-1"), cat, pt, {}, "P", 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoActionAvailable);
    }
}

TEST(Mapper, PolicySerializationRoundTrip) {
    const auto doc = test::scenario_json("toy_rl");
    auto env = SimTrainingEnvironment::from_scenario(Environment::load_file(test::scenario_path("toy_rl")), doc);
    RlConfig cfg;
    cfg.episodes = 3000;
    auto pt = train(env, cfg, 5);
    pt.feedback(kState, ActionKind::RestoreBackup, PolicyTable::Verdict::Ban);
    pt.feedback(State{VulnClass::Ddos, AssetClass::Plc, Exposure::AirGapped}, ActionKind::RateLimit,
                PolicyTable::Verdict::Pin);
    pt.feedback(kState, ActionKind::AutoPatch, PolicyTable::Verdict::Reinforce, 0.125);
    EXPECT_EQ(PolicyTable::from_json(pt.to_json()), pt);

    const auto dir = test::scratch_dir("policy");
    pt.save(dir / "p.json");
    EXPECT_EQ(PolicyTable::load(dir / "p.json"), pt);
}

TEST(Mapper, RlConfigValidation) {
    RlConfig bad;
    bad.alpha = 0.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = RlConfig{};
    bad.gamma = 1.5;
    EXPECT_THROW(bad.validate(), Error);
    EXPECT_EQ(RlConfig::from_json(RlConfig{}.to_json()).to_json(), RlConfig{}.to_json());
}
