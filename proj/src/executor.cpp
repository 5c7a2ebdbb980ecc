#include "soar/executor.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "soar/error.hpp"

namespace soar {

namespace {

std::string kebab(ActionKind a) {
    std::string out;
    for (char c : name_of(a)) {
        if (std::isupper(static_cast<unsigned char>(c))) {
            if (!out.empty()) out += '-';
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            out += c;
        }
    }
    return out;
}

ActionKind from_kebab(std::string_view k) {
    for (std::size_t i = 0; i < enum_count<ActionKind>(); ++i) {
        auto a = static_cast<ActionKind>(i);
        if (kebab(a) == k) return a;
    }
    throw Error(ErrorCode::Parse, "unknown action '" + std::string(k) + "'");
}

void check_value(const std::string& v) {
    if (v.find_first_of("'\"\n\\") != std::string::npos) {
        throw Error(ErrorCode::Parse, "script parameter value contains a quote or newline: " + v);
    }
}

const std::regex& shell_re() {
    static const std::regex re(R"(^soarctl ([a-z-]+) --asset '([^']*)'((?: --[a-z_]+ '[^']*')*)$)");
    return re;
}
const std::regex& shell_param_re() {
    static const std::regex re(R"( --([a-z_]+) '([^']*)')");
    return re;
}
const std::regex& call_re() {
    static const std::regex re(R"re(^remediate\(action="([A-Za-z]+)", asset="([^"]*)"((?:, [a-z_]+="[^"]*")*)\)$)re");
    return re;
}
const std::regex& call_param_re() {
    static const std::regex re(R"re(, ([a-z_]+)="([^"]*)")re");
    return re;
}

}  // namespace

// -------------------------------------------------------------------- render

std::string render_step(ScriptFormat fmt, const std::string& asset_id, ActionKind action, const Params& params) {
    check_value(asset_id);
    for (const auto& [k, v] : params) check_value(v);
    std::string out;
    switch (fmt) {
        case ScriptFormat::SystemShellAutomation:
            out = "soarctl " + kebab(action) + " --asset '" + asset_id + "'";
            for (const auto& [k, v] : params) out += " --" + k + " '" + v + "'";
            break;
        case ScriptFormat::GeneralScripting:
            out = "remediate(action=\"" + std::string(name_of(action)) + "\", asset=\"" + asset_id + "\"";
            for (const auto& [k, v] : params) out += ", " + k + "=\"" + v + "\"";
            out += ")";
            break;
        case ScriptFormat::WorkflowAutomation:
            out = nlohmann::json{{"step", action}, {"asset", asset_id}, {"params", params}}.dump();
            break;
    }
    return out;
}

ScriptStep parse_step(ScriptFormat fmt, std::string_view line) {
    ScriptStep s;
    s.rendered = std::string(line);
    std::smatch m;
    switch (fmt) {
        case ScriptFormat::SystemShellAutomation: {
            if (!std::regex_match(s.rendered, m, shell_re())) throw Error(ErrorCode::Parse, "bad shell step: " + s.rendered);
            s.action = from_kebab(m[1].str());
            s.asset_id = m[2].str();
            const std::string rest = m[3].str();
            for (std::sregex_iterator it(rest.begin(), rest.end(), shell_param_re()), end; it != end; ++it) {
                s.params[(*it)[1].str()] = (*it)[2].str();
            }
            break;
        }
        case ScriptFormat::GeneralScripting: {
            if (!std::regex_match(s.rendered, m, call_re())) throw Error(ErrorCode::Parse, "bad call step: " + s.rendered);
            s.action = parse_enum<ActionKind>(m[1].str());
            s.asset_id = m[2].str();
            const std::string rest = m[3].str();
            for (std::sregex_iterator it(rest.begin(), rest.end(), call_param_re()), end; it != end; ++it) {
                s.params[(*it)[1].str()] = (*it)[2].str();
            }
            break;
        }
        case ScriptFormat::WorkflowAutomation: {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(s.rendered);
                s.action = j.at("step").get<ActionKind>();
                s.asset_id = j.at("asset").get<std::string>();
                s.params = j.at("params").get<Params>();
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::Parse, "bad workflow step: " + std::string(e.what()));
            }
            break;
        }
    }
    return s;
}

ScriptFormat format_for(AssetClass cls) noexcept {
    switch (cls) {
        case AssetClass::ScadaController:
        case AssetClass::Plc:
        case AssetClass::Hmi: return ScriptFormat::WorkflowAutomation;
        case AssetClass::Firewall: return ScriptFormat::GeneralScripting;
        default: return ScriptFormat::SystemShellAutomation;
    }
}

// -------------------------------------------------------------------- Script

std::string Script::text() const {
    std::string out;
    for (const auto& s : steps) out += s.rendered + "\n";
    return out;
}

std::string Script::content_hash() const {
    nlohmann::json j = {{"format", format}, {"steps", nlohmann::json::array()}};
    for (const auto& s : steps) {
        j["steps"].push_back({{"asset", s.asset_id}, {"action", s.action}, {"params", s.params}, {"rendered", s.rendered}});
    }
    return to_hex(sha256(j.dump()));
}

std::set<std::string> Script::touched_assets(const Environment& env) const {
    std::set<std::string> out;
    for (const auto& s : steps) {
        out.insert(s.asset_id);
        const Asset* a = env.find_asset(s.asset_id);
        if (!a) continue;
        if (env.effects().lookup(s.action, a->asset_class).degrades_dependents) {
            for (const auto& d : env.direct_dependents(s.asset_id)) out.insert(d);
        }
    }
    return out;
}

nlohmann::json to_json(const Script& s) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : s.steps) {
        steps.push_back({{"asset_id", st.asset_id}, {"action", st.action}, {"params", st.params}, {"rendered", st.rendered}});
    }
    return {{"script_id", s.script_id},
            {"format", s.format},
            {"source", s.source},
            {"template_id", opt_json(s.template_id)},
            {"steps", steps},
            {"content_hash", s.content_hash()}};
}

Script parse_script(const nlohmann::json& j) {
    Script s;
    s.script_id = j.at("script_id").get<std::string>();
    s.format = j.at("format").get<ScriptFormat>();
    s.source = j.value("source", ScriptSource::Preexisting);
    if (j.contains("template_id") && !j["template_id"].is_null()) s.template_id = j["template_id"].get<std::string>();
    for (const auto& st : j.at("steps")) {
        ScriptStep step;
        if (st.contains("rendered")) {
            step = parse_step(s.format, st["rendered"].get<std::string>());
        } else {
            step.asset_id = st.at("asset_id").get<std::string>();
            step.action = st.at("action").get<ActionKind>();
            step.params = st.value("params", Params{});
            step.rendered = render_step(s.format, step.asset_id, step.action, step.params);
        }
        s.steps.push_back(std::move(step));
    }
    return s;
}

// ------------------------------------------------------------------- history

std::optional<Params> ExecutionHistory::last(ActionKind a, AssetClass cls) const {
    auto it = last_.find({a, cls});
    if (it == last_.end()) return std::nullopt;
    return it->second;
}

void ExecutionHistory::record(ActionKind a, AssetClass cls, const Params& p) { last_[{a, cls}] = p; }

nlohmann::json ExecutionHistory::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [k, p] : last_) out.push_back({{"action", k.first}, {"asset_class", k.second}, {"params", p}});
    return out;
}

// --------------------------------------------------------------- ScriptStore

ScriptStore ScriptStore::with_default_templates() {
    ScriptStore s;
    const std::pair<ActionKind, Params> defaults[] = {
        {ActionKind::AutoPatch, {{"channel", "vendor-stable"}}},
        {ActionKind::VirtualPatch, {{"signature", ""}}},
        {ActionKind::IsolateSegment, {{"mode", "quarantine-vlan"}}},
        {ActionKind::RestoreBackup, {{"snapshot", "latest-clean"}}},
        {ActionKind::BlockTraffic, {{"scope", "malicious-sources"}}},
        {ActionKind::EnforceMfaResetCreds, {{"reset", "local-accounts"}}},
        {ActionKind::RateLimit, {{"limit_pps", "1000"}}},
        {ActionKind::FixMisconfig, {{"baseline", "hardened"}}},
        {ActionKind::DisableUnusedPorts, {{"keep", ""}}},
        {ActionKind::UpgradeProtocol, {{"to", "tls1.3"}}},
        {ActionKind::AdjustPrivileges, {{"policy", "least-privilege"}}},
        {ActionKind::EnableLoggingAlerting, {{"sink", "siem"}}},
        {ActionKind::RestartService, {{"service", "all"}}},
        {ActionKind::FirmwareUpgrade, {{"target_version", ""}}},
    };
    for (const auto& [a, p] : defaults) s.templates_[a] = {a, p};
    return s;
}

ScriptStore ScriptStore::from_json(const nlohmann::json& j) {
    ScriptStore s = with_default_templates();
    for (const auto& e : j.value("scripts", nlohmann::json::array())) {
        s.put(e.at("vuln_class").get<VulnClass>(), e.at("asset_class").get<AssetClass>(), parse_script(e.at("script")));
    }
    return s;
}

nlohmann::json ScriptStore::to_json() const {
    nlohmann::json scripts = nlohmann::json::array();
    for (const auto& [k, sc] : scripts_) {
        scripts.push_back({{"vuln_class", k.first}, {"asset_class", k.second}, {"script", soar::to_json(sc)}});
    }
    return {{"scripts", scripts}};
}

const Script* ScriptStore::lookup(VulnClass vc, AssetClass ac) const {
    auto it = scripts_.find({vc, ac});
    return it == scripts_.end() ? nullptr : &it->second;
}

void ScriptStore::put(VulnClass vc, AssetClass ac, Script s) { scripts_[{vc, ac}] = std::move(s); }

const ScriptTemplate* ScriptStore::template_for(ActionKind a) const {
    auto it = templates_.find(a);
    return it == templates_.end() ? nullptr : &it->second;
}

Script resolve_script(const RemediationPlan& plan, const ScriptStore& store, const ExecutionHistory& history,
                      const Environment& env) {
    const Asset& asset = env.asset(plan.asset_id);

    if (const Script* stored = store.lookup(plan.state.vuln_class, plan.state.asset_class)) {
        Script s = *stored;
        s.source = ScriptSource::Preexisting;
        for (auto& st : s.steps) {
            if (st.asset_id == "{asset}") {
                st.asset_id = plan.asset_id;
                st.rendered = render_step(s.format, st.asset_id, st.action, st.params);
            }
        }
        return s;
    }

    const auto* catalog_entry = [&]() -> const CatalogEntry* {
        for (const auto& e : env.catalog().entries()) {
            if (e.vuln_class == plan.state.vuln_class) return &e;
        }
        return nullptr;
    }();

    Script s;
    s.script_id = "gen-" + plan.plan_id;
    s.format = format_for(asset.asset_class);
    s.source = ScriptSource::Generated;
    std::string tmpl_id = "tmpl";
    for (const auto& step : plan.steps) {
        const ScriptTemplate* t = store.template_for(step.action);
        if (!t) throw Error(ErrorCode::TemplateMissing, std::string(name_of(step.action)));
        Params p = t->defaults;
        if (auto h = history.last(step.action, asset.asset_class)) {
            for (const auto& [k, v] : *h) {
                if (p.count(k)) p[k] = v;
            }
        }
        if (catalog_entry) {
            if (p.count("signature")) p["signature"] = catalog_entry->cve_id;
            if (p.count("target_version") && catalog_entry->detection_hint.kind == HintKind::FirmwareBelow)
                p["target_version"] = catalog_entry->detection_hint.fixed_version;
        }
        if (p.count("keep")) {
            std::string keep;
            for (const auto& svc : asset.services) {
                if (svc.enabled && svc.security == ProtocolSecurity::Secure)
                    keep += (keep.empty() ? "" : ",") + std::to_string(svc.port);
            }
            p["keep"] = keep;
        }
        for (const auto& [k, v] : step.params) p[k] = v;
        s.steps.push_back({plan.asset_id, step.action, p, render_step(s.format, plan.asset_id, step.action, p)});
        tmpl_id += ":" + kebab(step.action);
    }
    s.template_id = tmpl_id;
    return s;
}

// -------------------------------------------------------------------- policy

bool MaintenanceWindow::contains(Tick t) const noexcept {
    if (t < start) return false;
    const Tick off = period > 0 ? (t - start) % period : t - start;
    return off < length;
}

bool SecurityPolicy::in_window(Tick t) const {
    return std::any_of(windows.begin(), windows.end(), [&](const MaintenanceWindow& w) { return w.contains(t); });
}

SecurityPolicy SecurityPolicy::from_json(const nlohmann::json& j) {
    SecurityPolicy p;
    for (const auto& d : j.value("deny", nlohmann::json::array())) {
        DenyRule r;
        r.action = d.at("action").get<ActionKind>();
        r.name = d.value("name", "deny-" + kebab(r.action));
        if (d.contains("asset_classes")) r.asset_classes = d["asset_classes"].get<std::set<AssetClass>>();
        if (d.contains("tag")) r.tag = d["tag"].get<std::string>();
        r.outside_window_only = d.value("outside_window_only", false);
        p.deny.push_back(std::move(r));
    }
    for (const auto& w : j.value("maintenance_windows", nlohmann::json::array())) {
        MaintenanceWindow mw{w.at("start").get<Tick>(), w.at("length").get<Tick>(), w.value("period", Tick{0})};
        if (mw.length <= 0 || mw.period < 0) throw Error(ErrorCode::ConfigInvalid, "maintenance window");
        p.windows.push_back(mw);
    }
    p.max_blast_radius = j.value("max_blast_radius", 0);
    if (j.contains("approval_triggers")) p.approval = ApprovalTriggers::from_json(j["approval_triggers"]);
    return p;
}

nlohmann::json SecurityPolicy::to_json() const {
    nlohmann::json deny_j = nlohmann::json::array();
    for (const auto& r : deny) {
        nlohmann::json d = {{"name", r.name},
                            {"action", r.action},
                            {"asset_classes", r.asset_classes},
                            {"outside_window_only", r.outside_window_only}};
        if (r.tag) d["tag"] = *r.tag;
        deny_j.push_back(d);
    }
    nlohmann::json win = nlohmann::json::array();
    for (const auto& w : windows) win.push_back({{"start", w.start}, {"length", w.length}, {"period", w.period}});
    return {{"deny", deny_j},
            {"maintenance_windows", win},
            {"max_blast_radius", max_blast_radius},
            {"approval_triggers", approval.to_json()}};
}

ValidationVerdict validate(const Script& script, const SecurityPolicy& policy, const Environment& env, Tick tick) {
    ValidationVerdict v;
    v.script_hash = script.content_hash();
    v.tick = tick;
    const bool window = policy.in_window(tick);
    for (const auto& step : script.steps) {
        const Asset* a = env.find_asset(step.asset_id);
        if (!a) {
            v.violations.push_back({RuleKind::DenyRule, "unknown asset " + step.asset_id});
            continue;
        }
        for (const auto& rule : policy.deny) {
            if (rule.action != step.action) continue;
            if (!rule.asset_classes.empty() && !rule.asset_classes.count(a->asset_class)) continue;
            if (rule.tag && !a->has_tag(*rule.tag)) continue;
            const std::string what = rule.name + ": " + std::string(name_of(step.action)) + " on " + step.asset_id;
            if (!rule.outside_window_only) {
                v.violations.push_back({RuleKind::DenyRule, what});
            } else if (!window) {
                v.violations.push_back({RuleKind::WindowRule, what + " outside maintenance window"});
            }
        }
    }
    if (policy.max_blast_radius > 0) {
        const auto n = script.touched_assets(env).size();
        if (static_cast<int>(n) > policy.max_blast_radius) {
            v.violations.push_back({RuleKind::BlastRadius, std::to_string(n) + " assets touched, limit " +
                                                               std::to_string(policy.max_blast_radius)});
        }
    }
    return v;
}

// ----------------------------------------------------------------- approvals

nlohmann::json to_json(const ApprovalDecision& d) {
    return {{"plan_id", d.plan_id},
            {"verdict", d.verdict},
            {"actor", d.actor},
            {"comment", d.comment},
            {"ban_action", opt_json(d.ban_action)},
            {"tick", d.tick}};
}

ApprovalDecision parse_decision(const nlohmann::json& j) {
    ApprovalDecision d;
    d.plan_id = j.at("plan_id").get<std::string>();
    d.verdict = j.at("verdict").get<ApprovalVerdict>();
    d.actor = j.value("actor", "");
    d.comment = j.value("comment", "");
    if (j.contains("ban_action") && !j["ban_action"].is_null()) d.ban_action = j["ban_action"].get<ActionKind>();
    d.tick = j.value("tick", Tick{0});
    return d;
}

void ApprovalBook::record(ApprovalDecision d) {
    if (decisions_.count(d.plan_id)) throw Error(ErrorCode::AlreadyDecided, d.plan_id);
    auto id = d.plan_id;
    decisions_.emplace(std::move(id), std::move(d));
}

const ApprovalDecision* ApprovalBook::find(std::string_view plan_id) const {
    auto it = decisions_.find(plan_id);
    return it == decisions_.end() ? nullptr : &it->second;
}

// ----------------------------------------------------------------- execution

nlohmann::json to_json(const RemediationResult& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& o : r.steps) steps.push_back(to_json(o));
    return {{"plan_id", r.plan_id},
            {"status", r.status},
            {"steps", steps},
            {"integrity", opt_json(r.integrity)},
            {"started_tick", r.started_tick},
            {"finished_tick", r.finished_tick},
            {"containment_minutes", opt_json(r.containment_minutes)}};
}

RemediationResult execute(RemediationPlan& plan, const Script& script, const ValidationVerdict& verdict,
                          Environment& env, const ApprovalBook& approvals, Finding& finding, Rng& rng) {
    if (!verdict.ok()) throw Error(ErrorCode::ExecutionAborted, plan.plan_id + ": script failed validation");
    if (verdict.script_hash != script.content_hash())
        throw Error(ErrorCode::ExecutionAborted, plan.plan_id + ": script changed since validation");

    RemediationResult r;
    r.plan_id = plan.plan_id;
    r.started_tick = env.clock();
    r.finished_tick = env.clock();

    if (plan.requires_approval) {
        const ApprovalDecision* d = approvals.find(plan.plan_id);
        if (!d) {
            plan.status = PlanStatus::PendingApproval;
            return r;
        }
        if (d->verdict == ApprovalVerdict::Reject) {
            plan.status = PlanStatus::Rejected;
            finding.advance(Lifecycle::Rejected);
            r.status = ExecStatus::Rejected;
            return r;
        }
    }
    plan.status = PlanStatus::Approved;
    finding.advance(Lifecycle::Remediating);
    ++plan.attempts;

    for (const auto& step : script.steps) {
        ActionOutcome out;
        try {
            out = env.apply_action(step.asset_id, step.action, rng);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ActionInapplicable && e.code() != ErrorCode::UnknownAsset) throw;
            out.action = step.action;
            out.asset_id = step.asset_id;
            out.success = false;
        }
        r.steps.push_back(out);
        if (!out.success) {
            r.status = ExecStatus::StepFailed;
            r.integrity = Integrity::Failed;
            plan.status = PlanStatus::Failed;
            finding.advance(Lifecycle::Failed);
            return r;
        }
    }
    r.status = ExecStatus::Executed;
    plan.status = PlanStatus::Executed;
    return r;
}

bool cause_cleared(const Environment& env, const Finding& f) {
    if (f.catalog_entry_id) return !env.has_vuln(f.asset_id, *f.catalog_entry_id);
    return !env.under_attack(f.asset_id);
}

Integrity integrity_check(const Environment& env, const Finding& f, int in_band_streak) {
    if (!cause_cleared(env, f)) return Integrity::Failed;
    const Asset* a = env.find_asset(f.asset_id);
    if (a && a->state == AssetState::Healthy && in_band_streak >= kIntegrityStreak) return Integrity::Restored;
    return Integrity::Degraded;
}

}  // namespace soar
