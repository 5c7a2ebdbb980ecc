#include <chrono>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "soar/error.hpp"
#include "soar/orchestrator.hpp"
#include "test_support.hpp"

using namespace soar;

namespace {

RunConfig canonical_cfg(Mode mode = Mode::Aisa, std::optional<std::uint64_t> seed = std::nullopt) {
    RunConfig cfg;
    cfg.scenario = test::scenario_json("canonical_grid");
    cfg.scenario_path = test::scenario_path("canonical_grid").string();
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.ticks = mode == Mode::Aisa ? 1440 : 10080;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const Finding* cve_finding(const Pipeline& p) {
    for (const auto& f : p.queue().all()) {
        if (f.cve_id == "CVE-2024-21302") return &f;
    }
    return nullptr;
}

std::filesystem::path run_into(const std::string& name, RunConfig cfg) {
    const auto dir = test::scratch_dir(name);
    Pipeline p(std::move(cfg), dir);
    p.run();
    return dir;
}

}  // namespace

TEST(Orchestrator, CanonicalScenarioEndToEnd) {
    const auto t0 = std::chrono::steady_clock::now();
    Pipeline p(canonical_cfg());
    std::optional<int> rank_at_scoring;
    while (!p.finished()) {
        p.step_tick();
        const Finding* f = cve_finding(p);
        if (f && !rank_at_scoring && f->impact_score && p.latest_report()) {
            for (const auto& e : p.latest_report()->entries) {
                if (e.finding_id == f->finding_id) rank_at_scoring = e.rank;
            }
        }
    }
    p.finish();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Finding* f = cve_finding(p);
    ASSERT_NE(f, nullptr);
    EXPECT_EQ(f->asset_id, "scada-1");
    EXPECT_LE(f->detected_tick, 61);
    EXPECT_EQ(f->impact_score, 0.97);
    EXPECT_EQ(rank_at_scoring, 1);
    EXPECT_EQ(f->lifecycle, Lifecycle::Resolved);

    const RemediationPlan* plan = nullptr;
    for (const auto& [id, pl] : p.plans()) {
        if (pl.finding_id == f->finding_id) plan = &pl;
    }
    ASSERT_NE(plan, nullptr);
    EXPECT_EQ(plan->actions(), (std::vector<ActionKind>{ActionKind::IsolateSegment, ActionKind::FirmwareUpgrade,
                                                        ActionKind::RestartService}));
    EXPECT_TRUE(plan->requires_approval);
    const auto* d = p.approvals().find(plan->plan_id);
    ASSERT_NE(d, nullptr);
    EXPECT_EQ(d->verdict, ApprovalVerdict::Approve);
    EXPECT_EQ(d->actor, "scripted-sme");
    EXPECT_FALSE(p.env().has_vuln("scada-1", "unpatched-systems"));
    EXPECT_EQ(p.env().asset("scada-1").state, AssetState::Healthy);
    EXPECT_LT(secs, 10.0);
}

TEST(Orchestrator, SameSeedByteIdenticalLogs) {
    const auto a = run_into("orch-det-a", canonical_cfg());
    const auto b = run_into("orch-det-b", canonical_cfg());
    const auto la = slurp(a / "audit.log");
    EXPECT_FALSE(la.empty());
    EXPECT_EQ(la, slurp(b / "audit.log"));
    EXPECT_EQ(read_json_file(a / "summary.json")["state_hash"], read_json_file(b / "summary.json")["state_hash"]);

    const auto c = run_into("orch-det-c", canonical_cfg(Mode::Aisa, 43));
    EXPECT_NE(la, slurp(c / "audit.log"));
}

TEST(Orchestrator, ReplayReproducesState) {
    const auto dir = run_into("orch-replay", canonical_cfg());
    const auto r = replay(dir / "audit.log");
    EXPECT_TRUE(r.chain_ok);
    EXPECT_TRUE(r.rerun_done);
    EXPECT_TRUE(r.log_prefix_matches);
    ASSERT_TRUE(r.recorded_state_hash);
    EXPECT_EQ(r.state_hash, *r.recorded_state_hash);
    EXPECT_TRUE(r.reducer_matches_rerun);
}

TEST(Orchestrator, TruncatedLogIsAPrefixOfTheRerun) {
    const auto dir = run_into("orch-trunc", canonical_cfg());
    auto lines = read_lines(dir / "audit.log");
    ASSERT_GT(lines.size(), 10u);
    lines.resize(lines.size() / 2);
    {
        std::ofstream out(dir / "audit.log", std::ios::binary | std::ios::trunc);
        for (const auto& l : lines) out << l << "\n";
    }
    std::filesystem::remove(dir / "summary.json");
    const auto r = replay(dir / "audit.log");
    EXPECT_TRUE(r.chain_ok);
    EXPECT_EQ(r.events, lines.size());
    EXPECT_TRUE(r.log_prefix_matches);
    EXPECT_FALSE(r.recorded_state_hash);
}

TEST(Orchestrator, CorruptedLogRefusesReplay) {
    const auto dir = run_into("orch-corrupt", canonical_cfg());
    auto bytes = slurp(dir / "audit.log");
    const auto lines = read_lines(dir / "audit.log");
    const std::size_t target = 5;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < target; ++i) offset += lines[i].size() + 1;
    const auto pos = offset + lines[target].find("\"tick\":") + 7;
    bytes[pos] = bytes[pos] == '9' ? '8' : '9';
    {
        std::ofstream out(dir / "audit.log", std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    EXPECT_EQ(verify_file(dir / "audit.log").first_broken, target);
    try {
        replay(dir / "audit.log");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ChainCorrupt);
        EXPECT_NE(std::string(e.what()).find("index 5"), std::string::npos) << e.what();
    }
    EXPECT_THROW(Pipeline::resume(dir), Error);
}

TEST(Orchestrator, AutomatedContainmentBeatsBaseline) {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        Pipeline aisa(canonical_cfg(Mode::Aisa, seed));
        aisa.run();
        Pipeline base(canonical_cfg(Mode::TraditionalBaseline, seed));
        base.run();
        const auto ma = aisa.metrics();
        const auto mb = base.metrics();
        ASSERT_EQ(ma.vuln_containment.size(), 3u);
        for (const auto& [k, v] : ma.vuln_containment) {
            ASSERT_TRUE(mb.vuln_containment.count(k)) << k;
            EXPECT_LT(v, mb.vuln_containment.at(k)) << k << " seed " << seed;
        }
        const auto cmp = compare_runs(mb, ma);
        for (const auto& name : comparison_row_names()) EXPECT_NE(cmp.row(name), nullptr) << name;
    }
}

TEST(Orchestrator, ZeroTickRunIsEmpty) {
    auto cfg = canonical_cfg();
    cfg.ticks = 0;
    const auto dir = test::scratch_dir("orch-zero");
    Pipeline p(cfg, dir);
    const auto summary = p.run();
    EXPECT_EQ(summary["ticks_run"], 0);
    EXPECT_EQ(p.queue().size(), 0u);
    EXPECT_EQ(p.log().size(), 0u);
    EXPECT_TRUE(verify_file(dir / "audit.log").ok);
    const auto r = replay(dir / "audit.log");
    EXPECT_EQ(r.state_hash, *r.recorded_state_hash);
}

TEST(Orchestrator, RejectWithBanChangesTheNextPlan) {
    auto cfg = canonical_cfg();
    cfg.approval_script = nlohmann::json{
        {"rules",
         {{{"match", {{"cve", "CVE-2024-21302"}, {"action", "FirmwareUpgrade"}}},
           {"verdict", "Reject"},
           {"ban_action", "FirmwareUpgrade"},
           {"delay_ticks", 2},
           {"actor", "sme"}},
          {{"match", nlohmann::json::object()}, {"verdict", "Approve"}, {"delay_ticks", 2}, {"actor", "sme"}}}}};
    Pipeline p(cfg);
    p.run();

    std::vector<const RemediationPlan*> scada;
    for (const auto& [id, pl] : p.plans()) {
        if (pl.asset_id == "scada-1" && pl.state.vuln_class == VulnClass::UnpatchedSystems) scada.push_back(&pl);
    }
    ASSERT_GE(scada.size(), 2u);
    EXPECT_EQ(scada[0]->status, PlanStatus::Rejected);
    EXPECT_EQ(p.queue().find(scada[0]->finding_id)->lifecycle, Lifecycle::Rejected);
    for (std::size_t i = 1; i < scada.size(); ++i) {
        const auto acts = scada[i]->actions();
        EXPECT_EQ(std::find(acts.begin(), acts.end(), ActionKind::FirmwareUpgrade), acts.end());
        EXPECT_GT(scada[i]->policy_version, scada[0]->policy_version);
    }
    bool swapped = false;
    for (const auto& e : p.log().events()) swapped = swapped || e.kind == EventKind::PolicySwapped;
    EXPECT_TRUE(swapped);
}

TEST(Orchestrator, SubmitDecisionErrors) {
    auto cfg = canonical_cfg();
    cfg.approval_script = nlohmann::json{{"rules", nlohmann::json::array()}};
    Pipeline p(cfg);
    try {
        p.submit_decision({"P-9999", ApprovalVerdict::Approve, "sme", "", std::nullopt, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownPlan);
    }
    try {
        p.submit_contain("F-9999", "sme");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownFinding);
    }
    std::string pending;
    while (pending.empty() && p.tick() < 200) {
        p.step_tick();
        for (const auto& [id, pl] : p.plans()) {
            if (pl.status == PlanStatus::PendingApproval) pending = id;
        }
    }
    ASSERT_FALSE(pending.empty());
    const auto h = p.env().trajectory_hash();
    p.step_tick();
    EXPECT_EQ(p.plans().at(pending).status, PlanStatus::PendingApproval);
    p.submit_decision({pending, ApprovalVerdict::Approve, "sme", "ok", std::nullopt, 0});
    try {
        p.submit_decision({pending, ApprovalVerdict::Reject, "other", "", std::nullopt, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AlreadyDecided);
    }
    p.step_tick();
    EXPECT_NE(p.env().trajectory_hash(), h);
    EXPECT_EQ(p.approvals().find(pending)->actor, "sme");
    EXPECT_THROW(p.submit_decision({pending, ApprovalVerdict::Approve, "sme", "", std::nullopt, 0}), Error);
}

TEST(Orchestrator, ResumeContinuesTheSameRun) {
    const auto whole = run_into("orch-whole", canonical_cfg());

    const auto dir = test::scratch_dir("orch-resume");
    {
        Pipeline p(canonical_cfg(), dir);
        for (int t = 0; t < 65; ++t) p.step_tick();
    }
    auto resumed = Pipeline::resume(dir);
    resumed->run();
    EXPECT_EQ(slurp(dir / "audit.log"), slurp(whole / "audit.log"));
    EXPECT_EQ(read_json_file(dir / "summary.json")["state_hash"], read_json_file(whole / "summary.json")["state_hash"]);
    EXPECT_TRUE(verify_file(dir / "audit.log").ok);
}

TEST(Orchestrator, RunConfigValidation) {
    auto cfg = canonical_cfg();
    cfg.scenario["assets"] = nlohmann::json::array();
    EXPECT_THROW(Pipeline{cfg}, Error);
    const auto back = RunConfig::from_json(canonical_cfg().to_json());
    EXPECT_EQ(back.to_json(), canonical_cfg().to_json());
    EXPECT_EQ(back.effective_seed(), 42u);
}
