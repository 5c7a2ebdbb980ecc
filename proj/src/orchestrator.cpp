#include "soar/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "soar/util.hpp"

namespace soar {

namespace {

constexpr Tick kIntegrityTimeout = 60;

std::string detection_key(const Finding& f) {
    return f.asset_id + "/" + f.catalog_entry_id.value_or("anomaly");
}

std::string numbered(const char* fmt, long long n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, n);
    return buf;
}

template <class T>
std::optional<double> mean_of(const std::vector<T>& xs) {
    if (xs.empty()) return std::nullopt;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

nlohmann::json violations_json(const ValidationVerdict& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& x : v.violations) out.push_back({{"rule", x.rule}, {"detail", x.detail}});
    return out;
}

bool same_verdict(const ValidationVerdict& a, const ValidationVerdict& b) {
    return a.violations == b.violations && a.script_hash == b.script_hash;
}

// Every asset class: the baseline gates every plan.
ApprovalTriggers gate_everything() {
    ApprovalTriggers t;
    for (std::size_t i = 0; i < kAssetClassCount; ++i) t.asset_classes.insert(static_cast<AssetClass>(i));
    return t;
}

// Stored copy of a generated script, bound to no particular asset.
Script as_stored(Script s, const std::string& asset_id) {
    s.script_id = "stored-" + s.script_id;
    s.source = ScriptSource::Preexisting;
    for (auto& st : s.steps) {
        if (st.asset_id != asset_id) continue;
        st.asset_id = "{asset}";
        st.rendered = render_step(s.format, st.asset_id, st.action, st.params);
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

std::uint64_t RunConfig::effective_seed() const {
    return seed.value_or(scenario.value("seed", std::uint64_t{0}));
}

nlohmann::json RunConfig::to_json() const {
    return {{"scenario", scenario},
            {"scenario_path", scenario_path},
            {"policy", policy ? *policy : nlohmann::json(nullptr)},
            {"mode", mode},
            {"baseline",
             {{"manual_triage_delay_ticks", baseline.manual_triage_delay_ticks},
              {"manual_remediation_delay_ticks", baseline.manual_remediation_delay_ticks},
              {"detection_miss_rate", baseline.detection_miss_rate}}},
            {"ticks", ticks},
            {"seed", opt_json(seed)},
            {"approval_script", approval_script ? *approval_script : nlohmann::json(nullptr)},
            {"stop_when_idle", stop_when_idle},
            {"snapshot_every", snapshot_every},
            {"fsync", fsync},
            {"detection_window_ticks", detection_window_ticks}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    try {
        RunConfig c;
        c.scenario = j.at("scenario");
        c.scenario_path = j.value("scenario_path", "");
        if (j.contains("policy") && !j["policy"].is_null()) c.policy = j["policy"];
        c.mode = j.value("mode", Mode::Aisa);
        if (j.contains("baseline")) {
            const auto& b = j["baseline"];
            c.baseline.manual_triage_delay_ticks = b.value("manual_triage_delay_ticks", c.baseline.manual_triage_delay_ticks);
            c.baseline.manual_remediation_delay_ticks =
                b.value("manual_remediation_delay_ticks", c.baseline.manual_remediation_delay_ticks);
            c.baseline.detection_miss_rate = b.value("detection_miss_rate", c.baseline.detection_miss_rate);
        }
        c.ticks = j.value("ticks", c.ticks);
        if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("approval_script") && !j["approval_script"].is_null()) c.approval_script = j["approval_script"];
        c.stop_when_idle = j.value("stop_when_idle", true);
        c.snapshot_every = j.value("snapshot_every", 0);
        c.fsync = j.value("fsync", false);
        c.detection_window_ticks = j.value("detection_window_ticks", c.detection_window_ticks);
        if (c.ticks < 0) throw Error(ErrorCode::ConfigInvalid, "ticks must be >= 0");
        if (c.baseline.detection_miss_rate < 0.0 || c.baseline.detection_miss_rate > 1.0)
            throw Error(ErrorCode::ConfigInvalid, "detection_miss_rate outside [0,1]");
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::ConfigInvalid, std::string("run config: ") + ex.what());
    }
}

RunConfig RunConfig::from_files(const std::filesystem::path& scenario,
                                const std::optional<std::filesystem::path>& policy) {
    RunConfig c;
    c.scenario = read_json_file(scenario);
    c.scenario_path = scenario.string();
    c.ticks = c.scenario.value("tick_budget", c.ticks);
    if (policy) c.policy = read_json_file(*policy);
    return c;
}

bool script_rule_matches(const nlohmann::json& rule, const RemediationPlan& plan, const Finding& f) {
    const auto match = rule.value("match", nlohmann::json::object());
    if (match.contains("asset") && match["asset"].get<std::string>() != plan.asset_id) return false;
    if (match.contains("finding") && match["finding"].get<std::string>() != f.finding_id) return false;
    if (match.contains("cve") && match["cve"].get<std::string>() != f.cve_id.value_or("")) return false;
    if (match.contains("entry") && match["entry"].get<std::string>() != f.catalog_entry_id.value_or("")) return false;
    if (match.contains("anomaly") && match["anomaly"].get<bool>() != f.is_anomaly()) return false;
    if (match.contains("action")) {
        const auto a = match["action"].get<ActionKind>();
        const auto acts = plan.actions();
        if (std::find(acts.begin(), acts.end(), a) == acts.end()) return false;
    }
    return true;
}

// ----------------------------------------------------------------- Pipeline

Pipeline::Pipeline(RunConfig cfg, std::optional<std::filesystem::path> run_dir)
    : cfg_(std::move(cfg)), dir_(std::move(run_dir)) {
    auto scenario = cfg_.scenario;
    const auto seed = cfg_.effective_seed();
    scenario["seed"] = seed;
    const auto catalog_path = data_dir() / scenario.value("catalog", std::string("catalog/table1.catalog"));
    env_ = Environment::load(scenario, Catalog::load(catalog_path), EffectTable::load_default());

    try {
        auto scoring = scenario.value("scoring", nlohmann::json::object());
        if (scenario.contains("exploit_intel")) scoring["exploit_intel"] = scenario["exploit_intel"];
        scoring_ = ScoringConfig::from_json(scoring);
        security_ = SecurityPolicy::from_json(scenario.value("security_policy", nlohmann::json::object()));
        store_ = scenario.contains("script_store") ? ScriptStore::from_json(scenario["script_store"])
                                                  : ScriptStore::with_default_templates();
        if (cfg_.policy && cfg_.mode == Mode::Aisa) policy_ = PolicyTable::from_json(*cfg_.policy);
        subscribers_ = parse_subscribers(scenario.value("subscribers", nlohmann::json::array()));
        approval_script_ = cfg_.approval_script ? *cfg_.approval_script
                                                : scenario.value("approval_script", nlohmann::json::object());
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::ConfigInvalid, std::string("scenario: ") + ex.what());
    }
    baseline_rng_.seed(seed ^ 0xb5ad4eceda1ce2a9ULL);
    run_id_ = env_->scenario_id() + "-" + std::string(name_of(cfg_.mode)) + "-s" + std::to_string(seed);

    if (dir_) {
        std::filesystem::create_directories(*dir_ / "reports");
        std::filesystem::create_directories(*dir_ / "scripts");
        std::filesystem::create_directories(*dir_ / "snapshots");
        if (std::filesystem::exists(*dir_ / "audit.log"))
            throw Error(ErrorCode::Io, (*dir_ / "audit.log").string() + ": run directory already used");
        write_json_file(*dir_ / "run.json", cfg_.to_json());
        log_ = AuditLog::open(*dir_ / "audit.log", cfg_.fsync);
        for (auto& s : subscribers_) {
            if (s.kind == SinkKind::Log && !s.target.empty() && std::filesystem::path(s.target).is_relative())
                s.target = (*dir_ / s.target).string();
        }
    }
}

std::unique_ptr<Pipeline> Pipeline::resume(const std::filesystem::path& run_dir) {
    const auto cfg = RunConfig::from_json(read_json_file(run_dir / "run.json"));
    const auto events = load_events(run_dir / "audit.log");
    auto rerun = cfg;
    rerun.stop_when_idle = false;
    if (std::filesystem::exists(run_dir / "summary.json")) {
        rerun.ticks = read_json_file(run_dir / "summary.json").at("ticks_run").get<Tick>();
    } else {
        rerun.ticks = events.empty() ? 0 : events.back().tick + 1;
    }
    auto p = std::make_unique<Pipeline>(rerun);
    p->use_replay_commands(events);
    while (p->ticks_run_ < rerun.ticks) p->step_tick();
    const auto& regen = p->log_.events();
    const bool same = regen.size() == events.size() &&
                      std::equal(events.begin(), events.end(), regen.begin(),
                                 [](const AuditEvent& a, const AuditEvent& b) { return a.to_line() == b.to_line(); });
    if (!same) throw Error(ErrorCode::ChainCorrupt, run_dir.string() + ": re-run diverges from the recorded log");

    p->cfg_ = cfg;
    p->replay_.reset();
    p->dir_ = run_dir;
    p->log_ = AuditLog::open(run_dir / "audit.log", cfg.fsync);
    for (auto& s : p->subscribers_) {
        if (s.kind == SinkKind::Log && !s.target.empty() && std::filesystem::path(s.target).is_relative())
            s.target = (run_dir / s.target).string();
    }
    return p;
}

void Pipeline::use_replay_commands(const std::vector<AuditEvent>& logged) {
    replay_.emplace();
    for (const auto& e : logged) {
        if (e.kind == EventKind::ApprovalDecided) {
            Command c;
            c.decision = parse_decision(e.payload.at("decision"));
            (*replay_)[e.tick].push_back(std::move(c));
        } else if (e.kind == EventKind::Contained && e.payload.value("manual", false)) {
            Command c;
            c.kind = Command::Kind::Contain;
            c.finding_id = e.payload.at("finding_id").get<std::string>();
            c.actor = e.payload.value("actor", "");
            (*replay_)[e.tick].push_back(std::move(c));
        }
    }
}

void Pipeline::submit_decision(ApprovalDecision d) {
    auto it = plans_.find(d.plan_id);
    if (it == plans_.end()) throw Error(ErrorCode::UnknownPlan, d.plan_id);
    const bool queued = std::any_of(channel_.begin(), channel_.end(), [&](const Command& c) {
        return c.kind == Command::Kind::Decision && c.decision.plan_id == d.plan_id;
    });
    if (queued || approvals_.find(d.plan_id) || it->second.status != PlanStatus::PendingApproval)
        throw Error(ErrorCode::AlreadyDecided, d.plan_id);
    Command c;
    c.decision = std::move(d);
    channel_.push_back(std::move(c));
}

void Pipeline::submit_contain(const std::string& finding_id, const std::string& actor) {
    queue_.at(finding_id);
    Command c;
    c.kind = Command::Kind::Contain;
    c.finding_id = finding_id;
    c.actor = actor;
    channel_.push_back(std::move(c));
}

bool Pipeline::finished() const {
    if (finished_ || ticks_run_ >= cfg_.ticks) return true;
    if (!cfg_.stop_when_idle || replay_) return false;
    const bool attacks_live = std::any_of(env_->attacks().begin(), env_->attacks().end(),
                                          [](const AttackInstance& a) { return a.active; });
    return env_->schedule().empty() && queue_.open_count() == 0 && watches_.empty() && channel_.empty() &&
           !attacks_live;
}

nlohmann::json Pipeline::run() {
    while (!finished()) step_tick();
    return finish();
}

void Pipeline::step_tick() {
    if (finished_) return;
    const Tick t = env_->clock();
    apply_commands(t);

    const auto batch = env_->step();
    for (const auto& v : env_->injected_vulns()) {
        if (v.injected_tick == t) injections_.push_back(v);
    }
    // Integrity watches judge this tick's telemetry against the baseline as
    // it stood before the tick.
    std::map<std::string, bool> in_band;
    for (const auto& w : watches_) {
        const auto& asset_id = queue_.at(w.finding_id).asset_id;
        const auto* r = batch.find(asset_id);
        in_band[asset_id] = r && model_.warmed(asset_id) && model_.in_band(*r);
    }

    scan(batch, t);
    analyze_all(t);
    map_all(t);
    execute_all(t);
    check_integrity(in_band, t);
    account(t);
    ++ticks_run_;
    if (dir_ && cfg_.snapshot_every > 0 && ticks_run_ % cfg_.snapshot_every == 0)
        write_snapshot(numbered("tick-%06lld", t));
}

void Pipeline::apply_commands(Tick t) {
    if (replay_) {
        auto it = replay_->find(t);
        if (it == replay_->end()) return;
        for (const auto& c : it->second) {
            if (c.kind == Command::Kind::Decision) apply_decision(c.decision, t);
            else apply_contain(c.finding_id, c.actor, t);
        }
        return;
    }

    std::vector<ApprovalDecision> due;
    for (const auto& [id, plan] : plans_) {
        if (plan.status != PlanStatus::PendingApproval || approvals_.find(id)) continue;
        const Finding& f = *queue_.find(plan.finding_id);
        if (cfg_.mode == Mode::TraditionalBaseline) {
            if (t >= plan.created_tick + cfg_.baseline.manual_remediation_delay_ticks)
                due.push_back({id, ApprovalVerdict::Approve, "baseline-manual", "manual review completed", std::nullopt, t});
            continue;
        }
        std::optional<ApprovalDecision> d;
        for (const auto& e : approval_script_.value("decisions", nlohmann::json::array())) {
            if (e.at("plan_id").get<std::string>() != id) continue;
            if (t < e.value("tick", Tick{0})) break;
            auto x = parse_decision(e);
            x.tick = t;
            d = x;
            break;
        }
        if (!d) {
            for (const auto& rule : approval_script_.value("rules", nlohmann::json::array())) {
                if (!script_rule_matches(rule, plan, f)) continue;
                if (t >= plan.created_tick + rule.value("delay_ticks", Tick{0})) {
                    ApprovalDecision x;
                    x.plan_id = id;
                    x.verdict = rule.value("verdict", ApprovalVerdict::Approve);
                    x.actor = rule.value("actor", "scripted-sme");
                    x.comment = rule.value("comment", "");
                    if (rule.contains("ban_action") && !rule["ban_action"].is_null())
                        x.ban_action = rule["ban_action"].get<ActionKind>();
                    x.tick = t;
                    d = x;
                }
                break;
            }
        }
        if (d) due.push_back(*d);
    }
    for (const auto& d : due) apply_decision(d, t);

    while (!channel_.empty()) {
        auto c = std::move(channel_.front());
        channel_.pop_front();
        if (c.kind == Command::Kind::Decision) apply_decision(c.decision, t);
        else apply_contain(c.finding_id, c.actor, t);
    }
}

void Pipeline::apply_decision(const ApprovalDecision& decision, Tick t) {
    auto it = plans_.find(decision.plan_id);
    if (it == plans_.end() || it->second.status != PlanStatus::PendingApproval || approvals_.find(decision.plan_id))
        return;
    auto& plan = it->second;
    auto d = decision;
    d.tick = t;
    approvals_.record(d);
    Finding& f = queue_.at(plan.finding_id);
    if (d.verdict == ApprovalVerdict::Approve) {
        plan.status = PlanStatus::Approved;
    } else {
        plan.status = PlanStatus::Rejected;
        f.advance(Lifecycle::Rejected);
    }
    log_.append(t, EventKind::ApprovalDecided, {{"decision", to_json(d)}, {"plan", to_json(plan)}, {"finding", to_json(f)}});

    if (d.verdict == ApprovalVerdict::Reject && d.ban_action) {
        nlohmann::json payload = {{"state", plan.state.to_string()},
                                  {"action", *d.ban_action},
                                  {"verdict", PolicyTable::Verdict::Ban},
                                  {"actor", d.actor}};
        try {
            policy_ = sme_feedback(std::move(policy_), plan.state, *d.ban_action, PolicyTable::Verdict::Ban);
            payload["applied"] = true;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::PinBanConflict) throw;
            payload["applied"] = false;
            payload["reason"] = e.what();
        }
        payload["policy_version"] = policy_.version();
        log_.append(t, EventKind::PolicySwapped, payload);
    }
}

void Pipeline::apply_contain(const std::string& finding_id, const std::string& actor, Tick t) {
    Finding* f = queue_.find(finding_id);
    if (!f || is_terminal(f->lifecycle)) return;
    const Asset* a = env_->find_asset(f->asset_id);
    if (!a || a->state == AssetState::Down) return;
    ContainmentRecord rec;
    rec.kind = ContainmentKind::Isolate;
    rec.tick = t;
    rec.actor = actor;
    rec.env_mutated = env_->apply_action(f->asset_id, ActionKind::IsolateSegment, env_->action_rng()).success;
    f->containment_taken = rec;
    log_.append(t, EventKind::Contained,
                {{"finding_id", f->finding_id},
                 {"asset_id", f->asset_id},
                 {"kind", rec.kind},
                 {"actor", actor},
                 {"manual", true},
                 {"env_mutated", rec.env_mutated},
                 {"finding", to_json(*f)}});
}

bool Pipeline::has_cause(const Finding& f) const {
    if (f.catalog_entry_id) return env_->has_vuln(f.asset_id, *f.catalog_entry_id);
    return env_->under_attack(f.asset_id);
}

bool Pipeline::baseline_suppressed(const Finding& f, Tick t) {
    const auto key = detection_key(f);
    auto it = baseline_missed_.find(key);
    if (it == baseline_missed_.end()) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        it = baseline_missed_.emplace(key, unit(baseline_rng_) < cfg_.baseline.detection_miss_rate).first;
    }
    // A miss is caught later by the manual audit cycle.
    return it->second && t < first_seen_.at(key) + cfg_.baseline.manual_triage_delay_ticks;
}

void Pipeline::scan(const TelemetryBatch& batch, Tick t) {
    const auto& catalog = env_->catalog();
    for (auto f : update_and_detect(model_, batch, catalog)) {
        first_seen_.emplace(detection_key(f), t);
        if (cfg_.mode == Mode::TraditionalBaseline && baseline_suppressed(f, t)) continue;
        f.risk_band = classify_risk(f, env_->asset(f.asset_id), catalog);
        const bool cause = has_cause(f);

        std::optional<RiskBand> prior;
        for (const auto& q : queue_.all()) {
            if (q.asset_id == f.asset_id && q.catalog_entry_id == f.catalog_entry_id && !is_terminal(q.lifecycle))
                prior = q.risk_band;
        }
        const auto res = queue_.enqueue(std::move(f));
        Finding& q = queue_.at(res.finding_id);
        if (!res.merged) {
            if (!cause) ++false_positives_;
            log_.append(t, EventKind::Detected, {{"finding", to_json(q)}, {"has_cause", cause}, {"merged", false}});
        } else if (prior && q.risk_band != *prior) {
            log_.append(t, EventKind::Detected, {{"finding", to_json(q)}, {"has_cause", cause}, {"merged", true}});
        }

        if (cfg_.mode != Mode::Aisa) continue;
        if (auto rec = instant_containment(q, *env_)) {
            q.containment_taken->tick = t;
            log_.append(t, EventKind::Contained,
                        {{"finding_id", q.finding_id},
                         {"asset_id", q.asset_id},
                         {"kind", rec->kind},
                         {"actor", rec->actor},
                         {"manual", false},
                         {"env_mutated", rec->env_mutated},
                         {"finding", to_json(q)}});
        }
    }
}

std::vector<Finding*> Pipeline::in_priority_order() {
    std::vector<Finding*> out;
    for (auto& f : queue_.all()) out.push_back(&f);
    const auto& catalog = env_->catalog();
    std::stable_sort(out.begin(), out.end(),
                     [&](const Finding* a, const Finding* b) { return priority_before(*a, *b, catalog); });
    return out;
}

void Pipeline::analyze_all(Tick t) {
    for (auto& f : queue_.all()) {
        if (is_terminal(f.lifecycle)) continue;
        const Asset* a = env_->find_asset(f.asset_id);
        if (!a || a->state == AssetState::Down) continue;
        const auto before = f.impact_score;
        const auto lifecycle = f.lifecycle;
        analyze(f, *env_, scoring_);
        if (f.impact_score != before || f.lifecycle != lifecycle)
            log_.append(t, EventKind::Scored, {{"finding", to_json(f)}});
    }

    auto report = build_report(queue_, *env_, t);
    if (report_ && report_->same_content(report)) return;
    const auto id = numbered("R-%06lld", t);
    auto doc = report.to_json();
    doc["report_id"] = id;
    doc["run_id"] = run_id_;
    report_ = std::move(report);
    report_docs_[id] = doc;
    if (dir_) write_json_file(*dir_ / "reports" / (id + ".json"), doc);
    log_.append(t, EventKind::ReportGenerated,
                {{"report_id", id},
                 {"entries", report_->entries.size()},
                 {"top", report_->entries.empty() ? nlohmann::json(nullptr) : nlohmann::json(report_->entries[0].finding_id)}});
}

void Pipeline::map_all(Tick t) {
    static const PolicyTable kEmptyPolicy;
    static const ApprovalTriggers kGateAll = gate_everything();
    const bool baseline = cfg_.mode == Mode::TraditionalBaseline;

    for (Finding* f : in_priority_order()) {
        if (f->lifecycle != Lifecycle::Analyzed) continue;
        if (baseline && t < f->detected_tick + cfg_.baseline.manual_triage_delay_ticks) continue;
        const Asset& asset = env_->asset(f->asset_id);
        const auto plan_id = numbered("P-%04lld", next_plan_);
        RemediationPlan plan;
        try {
            plan = map_finding(*f, asset, env_->catalog(), baseline ? kEmptyPolicy : policy_,
                               baseline ? kGateAll : security_.approval, plan_id, t);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoActionAvailable) throw;
            continue;
        }
        ++next_plan_;
        plan_of_finding_[f->finding_id] = plan_id;
        log_.append(t, EventKind::Planned, {{"plan", to_json(plan)}, {"finding", to_json(*f)}});

        Script script;
        try {
            script = resolve_script(plan, store_, history_, *env_);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::TemplateMissing) throw;
            plan.status = PlanStatus::Failed;
            plans_[plan_id] = plan;
            log_.append(t, EventKind::Failed,
                        {{"plan", to_json(plan)}, {"finding", to_json(*f)}, {"reason", e.what()}});
            continue;
        }
        if (dir_) {
            const auto stem = plan_id + "." + std::string(name_of(script.format));
            write_text_file(*dir_ / "scripts" / (stem + ".script"), script.text() + "\n");
            write_json_file(*dir_ / "scripts" / (stem + ".json"), to_json(script));
        }
        auto verdict = validate(script, security_, *env_, t);
        log_.append(t, EventKind::Validated,
                    {{"plan_id", plan_id},
                     {"ok", verdict.ok()},
                     {"violations", violations_json(verdict)},
                     {"script_hash", verdict.script_hash}});
        last_verdict_[plan_id] = verdict;
        scripts_[plan_id] = script;
        plans_[plan_id] = plan;

        if (plan.status == PlanStatus::PendingApproval) {
            nlohmann::json q = nlohmann::json::object();
            for (const auto& [a, v] : plan.q_values) q[std::string(name_of(a))] = v;
            const auto& e = log_.append(t, EventKind::ApprovalRequested,
                                        {{"plan_id", plan_id},
                                         {"finding_id", f->finding_id},
                                         {"asset_id", f->asset_id},
                                         {"impact_score", opt_json(f->impact_score)},
                                         {"script_id", script.script_id},
                                         {"script_source", script.source},
                                         {"script_text", script.text()},
                                         {"script_hash", script.content_hash()},
                                         {"q_values", q}});
            notify_event(e);
        }
    }
}

void Pipeline::execute_all(Tick t) {
    for (Finding* f : in_priority_order()) {
        auto pit = plan_of_finding_.find(f->finding_id);
        if (pit == plan_of_finding_.end()) continue;
        auto& plan = plans_.at(pit->second);
        if (plan.status != PlanStatus::Approved) continue;
        const Asset* asset = env_->find_asset(plan.asset_id);
        if (!asset || asset->state == AssetState::Down) continue;
        const Script& script = scripts_.at(plan.plan_id);

        if (cause_cleared(*env_, *f)) {
            // Something else (another plan, containment) already removed the cause.
            plan.status = PlanStatus::Executed;
            f->advance(Lifecycle::Remediating);
            remediation_start_.emplace(f->finding_id, t);
            RemediationResult r;
            r.plan_id = plan.plan_id;
            r.status = ExecStatus::Executed;
            r.started_tick = r.finished_tick = t;
            auto rj = to_json(r);
            rj["skipped"] = true;
            log_.append(t, EventKind::Executed, {{"plan", to_json(plan)}, {"finding", to_json(*f)}, {"result", rj}});
            watches_.push_back({f->finding_id, plan.plan_id, t, 0});
            continue;
        }

        auto verdict = validate(script, security_, *env_, t);
        auto& last = last_verdict_[plan.plan_id];
        if (!same_verdict(verdict, last)) {
            log_.append(t, EventKind::Validated,
                        {{"plan_id", plan.plan_id},
                         {"ok", verdict.ok()},
                         {"violations", violations_json(verdict)},
                         {"script_hash", verdict.script_hash}});
            last = verdict;
        }
        if (!verdict.ok()) continue;  // deferred until the policy allows it

        remediation_start_.emplace(f->finding_id, t);
        const auto r = execute(plan, script, verdict, *env_, approvals_, *f, env_->action_rng());
        log_.append(t, EventKind::Executed, {{"plan", to_json(plan)}, {"finding", to_json(*f)}, {"result", to_json(r)}});
        if (r.status == ExecStatus::Executed) {
            for (const auto& st : script.steps) {
                if (const Asset* a = env_->find_asset(st.asset_id)) history_.record(st.action, a->asset_class, st.params);
            }
            if (script.source == ScriptSource::Generated)
                store_.put(plan.state.vuln_class, plan.state.asset_class, as_stored(script, plan.asset_id));
            watches_.push_back({f->finding_id, plan.plan_id, t, 0});
        } else if (r.status == ExecStatus::StepFailed) {
            finding_failed(*f, t, "remediation step failed");
        }
    }
}

void Pipeline::check_integrity(const std::map<std::string, bool>& in_band, Tick t) {
    std::vector<IntegrityWatch> keep;
    for (auto w : watches_) {
        if (w.started >= t) {
            keep.push_back(w);
            continue;
        }
        Finding& f = queue_.at(w.finding_id);
        auto it = in_band.find(f.asset_id);
        w.streak = it != in_band.end() && it->second ? w.streak + 1 : 0;
        const auto verdict = integrity_check(*env_, f, w.streak);
        const bool timed_out = verdict == Integrity::Degraded && t - w.started > kIntegrityTimeout;
        if (verdict == Integrity::Degraded && !timed_out) {
            keep.push_back(w);
            continue;
        }
        log_.append(t, EventKind::IntegrityChecked,
                    {{"finding_id", f.finding_id},
                     {"plan_id", w.plan_id},
                     {"integrity", verdict},
                     {"streak", w.streak},
                     {"timed_out", timed_out}});
        if (verdict == Integrity::Restored) {
            f.advance(Lifecycle::Resolved);
            resolved_at_[f.finding_id] = t;
            const auto& e = log_.append(t, EventKind::Resolved,
                                        {{"finding", to_json(f)},
                                         {"plan_id", w.plan_id},
                                         {"containment_minutes", t - f.detected_tick}});
            notify_event(e);
        } else {
            f.advance(Lifecycle::Failed);
            finding_failed(f, t, timed_out ? "integrity timeout" : "cause still present");
        }
    }
    watches_ = std::move(keep);
}

void Pipeline::finding_failed(Finding& f, Tick t, const std::string& why) {
    nlohmann::json payload = {{"finding", to_json(f)}, {"reason", why}};
    if (auto it = plan_of_finding_.find(f.finding_id); it != plan_of_finding_.end()) {
        auto& plan = plans_.at(it->second);
        plan.status = PlanStatus::Failed;
        payload["plan"] = to_json(plan);
    }
    const auto& e = log_.append(t, EventKind::Failed, payload);
    notify_event(e);
}

void Pipeline::notify_event(const AuditEvent& event) {
    if (subscribers_.empty()) return;
    nlohmann::json names = nlohmann::json::array();
    for (const auto& s : subscribers_) names.push_back(s.name);
    // The log records the intent only; delivery outcomes are not replayable.
    const AuditEvent copy = event;
    log_.append(copy.tick, EventKind::Notified, {{"event_seq", copy.seq}, {"kind", copy.kind}, {"subscribers", names}});
    if (!dir_ || replay_) return;
    std::ofstream out(*dir_ / "deliveries.jsonl", std::ios::app);
    for (const auto& rec : notify(subscribers_, copy)) out << rec.to_json().dump() << "\n";
}

void Pipeline::account(Tick) {
    for (const auto& a : env_->assets()) {
        if (a.state != AssetState::Healthy) downtime_minutes_ += 1.0;
    }
}

RunMetrics Pipeline::metrics() const {
    RunMetrics m;
    m.scenario_id = env_->scenario_id();
    m.seed = env_->seed();
    m.mode = std::string(name_of(cfg_.mode));
    m.ticks = ticks_run_;
    m.asset_count = env_->assets().size();
    const auto& catalog = env_->catalog();
    const Tick end = env_->clock();

    std::vector<Tick> containment, patching;
    int critical = 0, timely = 0;
    for (const auto& v : injections_) {
        std::optional<Tick> resolved;
        std::optional<Tick> detected;
        for (const auto& f : queue_.all()) {
            if (f.asset_id != v.asset_id || f.catalog_entry_id != v.entry_id || f.detected_tick < v.injected_tick) continue;
            if (!detected || f.detected_tick < *detected) detected = f.detected_tick;
            if (auto it = resolved_at_.find(f.finding_id); it != resolved_at_.end())
                if (!resolved || it->second < *resolved) resolved = it->second;
        }
        const Tick c = resolved.value_or(end) - v.injected_tick;
        m.vuln_containment[v.asset_id + "/" + v.entry_id + "@" + std::to_string(v.injected_tick)] = c;
        containment.push_back(c);
        const auto& entry = catalog.at(v.entry_id);
        if (entry.vuln_class == VulnClass::UnpatchedSystems) patching.push_back(c);
        if (entry.priority_band == PriorityBand::High) {
            ++critical;
            if (detected && *detected - v.injected_tick <= cfg_.detection_window_ticks) ++timely;
        }
    }
    std::vector<Tick> ddos;
    int attacks = 0, breaches = 0;
    for (const auto& a : env_->attacks()) {
        ++attacks;
        if (a.data_impact_tick) ++breaches;
        if (a.kind == AttackKind::Ddos) ddos.push_back(a.neutralized_tick.value_or(end) - a.start_tick);
        ++critical;
        const bool seen = std::any_of(queue_.all().begin(), queue_.all().end(), [&](const Finding& f) {
            return f.is_anomaly() && f.asset_id == a.entry_asset_id && f.detected_tick >= a.start_tick &&
                   f.detected_tick - a.start_tick <= cfg_.detection_window_ticks;
        });
        if (seen) ++timely;
    }
    m.containment_minutes = mean_of(containment);
    m.patching_minutes = mean_of(patching);
    m.ddos_mitigation_minutes = mean_of(ddos);
    if (critical > 0) m.detection_accuracy_pct = 100.0 * timely / critical;
    m.false_positives = false_positives_;
    m.breaches = breaches;
    if (attacks > 0) m.data_loss_reduction_pct = 100.0 * (attacks - breaches) / attacks;

    int gated = 0, executed = 0, executed_gated = 0;
    for (const auto& [id, p] : plans_) {
        if (p.requires_approval) ++gated;
        if (p.status == PlanStatus::Executed || p.attempts > 0) {
            ++executed;
            if (p.requires_approval) ++executed_gated;
        }
    }
    if (!plans_.empty()) m.manual_intervention_pct = 100.0 * gated / static_cast<double>(plans_.size());
    if (executed > 0) m.human_remediation_pct = 100.0 * executed_gated / executed;

    const auto incidents = injections_.size() + env_->attacks().size();
    if (incidents > 0) m.downtime_minutes_per_attack = downtime_minutes_ / static_cast<double>(incidents);
    if (ticks_run_ > 0 && !env_->assets().empty())
        m.uptime_pct = 100.0 * (1.0 - downtime_minutes_ / (static_cast<double>(ticks_run_) * env_->assets().size()));

    std::vector<Tick> response;
    for (const auto& [fid, start] : remediation_start_) response.push_back(start - queue_.find(fid)->detected_tick);
    m.incident_response_minutes = mean_of(response);
    return m;
}

nlohmann::json Pipeline::state_json() const {
    nlohmann::json plans = nlohmann::json::array();
    for (const auto& [id, p] : plans_) plans.push_back(to_json(p));
    nlohmann::json decisions = nlohmann::json::array();
    for (const auto& [id, d] : approvals_.all()) decisions.push_back(to_json(d));
    return {{"tick", env_->clock()},
            {"env_hash", env_->state_hash()},
            {"env", env_->to_json()},
            {"queue", queue_.to_json()},
            {"plans", plans},
            {"decisions", decisions},
            {"model", model_.to_json()},
            {"policy_version", policy_.version()},
            {"audit_tail", log_.tail_hash()}};
}

std::string Pipeline::state_hash() const { return to_hex(sha256(state_json().dump())); }

void Pipeline::write_snapshot(const std::string& name) const {
    write_json_file(*dir_ / "snapshots" / (name + ".json"), state_json());
}

nlohmann::json Pipeline::finish() {
    finished_ = true;
    nlohmann::json counts = {{"findings", queue_.size()}, {"plans", plans_.size()}, {"events", log_.size()}};
    for (auto l : {Lifecycle::Resolved, Lifecycle::Failed, Lifecycle::Rejected}) {
        counts[std::string(name_of(l))] = std::count_if(queue_.all().begin(), queue_.all().end(),
                                                        [&](const Finding& f) { return f.lifecycle == l; });
    }
    counts["open"] = queue_.open_count();
    nlohmann::json summary = {{"run_id", run_id_},
                              {"ticks_run", ticks_run_},
                              {"final_tick", env_->clock()},
                              {"state_hash", state_hash()},
                              {"audit_tail", log_.tail_hash()},
                              {"metrics", metrics().to_json()},
                              {"counts", counts}};
    if (dir_) {
        write_json_file(*dir_ / "summary.json", summary);
        write_snapshot("final");
    }
    return summary;
}

// ------------------------------------------------------------------- replay

nlohmann::json lifecycle_view(const nlohmann::json& f) {
    nlohmann::json v = f;
    for (const char* k : {"last_seen_tick", "anomaly_score", "peak_feature"}) v.erase(k);
    return v;
}

ReplayResult replay(const std::filesystem::path& log_path) {
    ReplayResult r;
    const auto events = load_events(log_path);
    r.chain_ok = true;
    r.events = events.size();
    r.reduced = reduce(events);

    const auto dir = log_path.parent_path();
    if (!std::filesystem::exists(dir / "run.json")) return r;
    auto cfg = RunConfig::from_json(read_json_file(dir / "run.json"));
    if (std::filesystem::exists(dir / "summary.json")) {
        const auto summary = read_json_file(dir / "summary.json");
        r.recorded_state_hash = summary.at("state_hash").get<std::string>();
        cfg.ticks = summary.at("ticks_run").get<Tick>();
    } else {
        cfg.ticks = events.empty() ? 0 : events.back().tick + 1;
    }
    cfg.stop_when_idle = false;

    Pipeline p(cfg);
    p.use_replay_commands(events);
    p.run();
    r.rerun_done = true;
    r.state_hash = p.state_hash();

    const auto& regen = p.log().events();
    r.log_prefix_matches = regen.size() >= events.size() &&
                           std::equal(events.begin(), events.end(), regen.begin(),
                                      [](const AuditEvent& a, const AuditEvent& b) { return a.to_line() == b.to_line(); });

    bool same = true;
    for (const auto& f : p.queue().all()) {
        auto it = r.reduced.findings.find(f.finding_id);
        if (it == r.reduced.findings.end() || lifecycle_view(it->second) != lifecycle_view(to_json(f))) {
            same = false;
            break;
        }
    }
    r.reducer_matches_rerun = same && r.reduced.findings.size() == p.queue().size();
    return r;
}

}  // namespace soar
