#include "soar/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "soar/error.hpp"

namespace soar {

// ---------------------------------------------------------------------- State

std::size_t State::index() const noexcept {
    return (static_cast<std::size_t>(vuln_class) * kAssetClassCount + static_cast<std::size_t>(asset_class)) *
               kExposureCount +
           static_cast<std::size_t>(exposure);
}

State State::from_index(std::size_t i) {
    if (i >= kStateCount) throw Error(ErrorCode::Parse, "state index " + std::to_string(i));
    State s;
    s.exposure = static_cast<Exposure>(i % kExposureCount);
    i /= kExposureCount;
    s.asset_class = static_cast<AssetClass>(i % kAssetClassCount);
    s.vuln_class = static_cast<VulnClass>(i / kAssetClassCount);
    return s;
}

std::string State::to_string() const {
    return std::string(name_of(vuln_class)) + "/" + std::string(name_of(asset_class)) + "/" +
           std::string(name_of(exposure));
}

State State::parse(std::string_view text) {
    const auto a = text.find('/');
    const auto b = a == std::string_view::npos ? a : text.find('/', a + 1);
    if (b == std::string_view::npos) throw Error(ErrorCode::Parse, "state '" + std::string(text) + "'");
    return {parse_enum<VulnClass>(text.substr(0, a)), parse_enum<AssetClass>(text.substr(a + 1, b - a - 1)),
            parse_enum<Exposure>(text.substr(b + 1))};
}

State encode_state(const Finding& f, const Asset& a, const Catalog& catalog) {
    State s;
    s.vuln_class = f.catalog_entry_id ? catalog.at(*f.catalog_entry_id).vuln_class : VulnClass::Anomaly;
    s.asset_class = a.asset_class;
    s.exposure = a.exposure;
    return s;
}

// ------------------------------------------------------------------- RlConfig

void RlConfig::validate() const {
    auto bad = [](const char* what) { throw Error(ErrorCode::ConfigInvalid, what); };
    if (!(alpha > 0.0 && alpha <= 1.0)) bad("alpha must be in (0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) bad("gamma must be in [0, 1)");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
        bad("epsilon must be in [0, 1]");
    if (episodes < 0) bad("episodes must be non-negative");
    if (max_steps < 1) bad("max_steps must be positive");
    if (lambda_disruption < 0.0 || lambda_compliance < 0.0 || lambda_side_effect < 0.0)
        bad("reward coefficients must be non-negative");
}

RlConfig RlConfig::from_json(const nlohmann::json& j) {
    RlConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.gamma = j.value("gamma", c.gamma);
    c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
    c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
    c.episodes = j.value("episodes", c.episodes);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.lambda_disruption = j.value("lambda_disruption", c.lambda_disruption);
    c.lambda_compliance = j.value("lambda_compliance", c.lambda_compliance);
    c.lambda_side_effect = j.value("lambda_side_effect", c.lambda_side_effect);
    c.resolve_reward = j.value("resolve_reward", c.resolve_reward);
    c.validate();
    return c;
}

nlohmann::json RlConfig::to_json() const {
    return {{"alpha", alpha},
            {"gamma", gamma},
            {"epsilon_start", epsilon_start},
            {"epsilon_end", epsilon_end},
            {"episodes", episodes},
            {"max_steps", max_steps},
            {"lambda_disruption", lambda_disruption},
            {"lambda_compliance", lambda_compliance},
            {"lambda_side_effect", lambda_side_effect},
            {"resolve_reward", resolve_reward}};
}

// ---------------------------------------------------- SimTrainingEnvironment

SimTrainingEnvironment::SimTrainingEnvironment(Environment base, std::vector<Situation> situations)
    : base_(std::move(base)), situations_(std::move(situations)) {
    if (situations_.empty()) throw Error(ErrorCode::ConfigInvalid, "no training situations");
    base_.clear_schedule();
    for (const auto& s : situations_) {
        base_.asset(s.asset_id);
        if (s.entry_id) base_.catalog().at(*s.entry_id);
        if (s.entry_id.has_value() == s.attack.has_value())
            throw Error(ErrorCode::ConfigInvalid, "situation needs exactly one of entry or attack");
    }
}

SimTrainingEnvironment SimTrainingEnvironment::from_scenario(const Environment& base, const nlohmann::json& scenario) {
    std::vector<Situation> out;
    if (scenario.contains("training")) {
        for (const auto& j : scenario["training"].value("situations", nlohmann::json::array())) {
            Situation s;
            s.asset_id = j.at("asset").get<std::string>();
            if (j.contains("entry")) s.entry_id = j["entry"].get<std::string>();
            if (j.contains("attack")) s.attack = j["attack"].get<AttackKind>();
            s.exploited_entry_id = j.value("exploited_entry", "");
            out.push_back(std::move(s));
        }
    }
    return SimTrainingEnvironment(base, std::move(out));
}

State SimTrainingEnvironment::state_of(const Situation& s) const {
    const auto& a = base_.asset(s.asset_id);
    State st;
    st.vuln_class = s.entry_id ? base_.catalog().at(*s.entry_id).vuln_class : VulnClass::Anomaly;
    st.asset_class = a.asset_class;
    st.exposure = a.exposure;
    return st;
}

State SimTrainingEnvironment::reset(Rng& rng) {
    current_ = std::uniform_int_distribution<std::size_t>(0, situations_.size() - 1)(rng);
    const auto& s = situations_[current_];
    env_.emplace(base_);
    if (s.entry_id) {
        env_->inject_vuln(s.asset_id, *s.entry_id);
    } else {
        if (!s.exploited_entry_id.empty()) env_->inject_vuln(s.asset_id, s.exploited_entry_id);
        AttackInstance a;
        a.kind = *s.attack;
        a.entry_asset_id = s.asset_id;
        a.exploited_entry_id = s.exploited_entry_id;
        env_->inject_attack(std::move(a));
    }
    return state_of(s);
}

bool SimTrainingEnvironment::cause_cleared() const {
    const auto& s = situations_[current_];
    if (s.entry_id) return !env_->has_vuln(s.asset_id, *s.entry_id);
    return !env_->under_attack(s.asset_id);
}

Transition SimTrainingEnvironment::act(ActionKind a, Rng& rng) {
    const auto& s = situations_[current_];
    Transition t;
    t.next = state_of(s);
    try {
        auto out = env_->apply_action(s.asset_id, a, rng);
        t.disruption_minutes = out.disruption_minutes;
        t.compliance_violation = out.compliance_violation;
        t.side_effects = static_cast<int>(out.side_effects.size());
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ActionInapplicable) throw;
    }
    t.resolved = cause_cleared();
    t.terminal = env_->asset(s.asset_id).state == AssetState::Down;
    return t;
}

// ---------------------------------------------------------------- PolicyTable

int PolicyTable::state_visits(const State& s) const {
    int n = 0;
    for (int v : visits_[s.index()]) n += v;
    return n;
}

std::optional<ActionKind> PolicyTable::pinned(const State& s) const {
    auto it = pins_.find(s.index());
    if (it == pins_.end()) return std::nullopt;
    return it->second;
}

std::vector<ActionKind> PolicyTable::allowed(const State& s) const {
    if (auto p = pinned(s)) return {*p};
    std::vector<ActionKind> out;
    for (std::size_t i = 0; i < kActionCount; ++i) {
        if (!banned(s, action_at(i))) out.push_back(action_at(i));
    }
    return out;
}

double PolicyTable::shaping(const State& s, ActionKind a) const {
    auto it = shaping_.find({s.index(), a});
    return it == shaping_.end() ? 0.0 : it->second;
}

std::optional<ActionKind> PolicyTable::greedy(const State& s) const {
    std::optional<ActionKind> best;
    double best_q = -std::numeric_limits<double>::infinity();
    for (ActionKind a : allowed(s)) {
        if (q(s, a) > best_q) {
            best_q = q(s, a);
            best = a;
        }
    }
    return best;
}

double PolicyTable::max_q(const State& s) const {
    auto a = greedy(s);
    return a ? q(s, *a) : 0.0;
}

void PolicyTable::feedback(const State& s, ActionKind a, Verdict v, double amount) {
    if (a == ActionKind::AlertOnly) throw Error(ErrorCode::Parse, "AlertOnly is not a learnable action");
    const auto key = std::pair{s.index(), a};
    switch (v) {
        case Verdict::Reinforce:
        case Verdict::Penalize: {
            const double signed_amount = v == Verdict::Reinforce ? std::fabs(amount) : -std::fabs(amount);
            q_[s.index()][action_index(a)] += signed_amount;
            shaping_[key] += signed_amount;
            break;
        }
        case Verdict::Pin:
            if (bans_.count(key)) throw Error(ErrorCode::PinBanConflict, s.to_string() + " " + std::string(name_of(a)));
            pins_[s.index()] = a;
            break;
        case Verdict::Ban:
            if (auto p = pinned(s); p && *p == a)
                throw Error(ErrorCode::PinBanConflict, s.to_string() + " " + std::string(name_of(a)));
            bans_.insert(key);
            break;
    }
    ++version_;
}

nlohmann::json PolicyTable::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t si = 0; si < kStateCount; ++si) {
        for (std::size_t ai = 0; ai < kActionCount; ++ai) {
            if (q_[si][ai] == 0.0 && visits_[si][ai] == 0) continue;
            entries.push_back({{"state", State::from_index(si).to_string()},
                               {"action", action_at(ai)},
                               {"q", q_[si][ai]},
                               {"visits", visits_[si][ai]}});
        }
    }
    nlohmann::json pins = nlohmann::json::array();
    for (const auto& [si, a] : pins_) pins.push_back({{"state", State::from_index(si).to_string()}, {"action", a}});
    nlohmann::json bans = nlohmann::json::array();
    for (const auto& [si, a] : bans_) bans.push_back({{"state", State::from_index(si).to_string()}, {"action", a}});
    nlohmann::json shaping = nlohmann::json::array();
    for (const auto& [k, v] : shaping_) {
        shaping.push_back({{"state", State::from_index(k.first).to_string()}, {"action", k.second}, {"amount", v}});
    }
    return {{"version", version_}, {"metadata", metadata_}, {"entries", entries},
            {"pins", pins},        {"bans", bans},          {"shaping", shaping}};
}

PolicyTable PolicyTable::from_json(const nlohmann::json& j) {
    PolicyTable pt;
    pt.version_ = j.at("version").get<int>();
    pt.metadata_ = j.value("metadata", nlohmann::json::object());
    for (const auto& e : j.at("entries")) {
        const auto s = State::parse(e.at("state").get<std::string>()).index();
        const auto a = action_index(e.at("action").get<ActionKind>());
        if (a >= kActionCount) throw Error(ErrorCode::Parse, "policy entry with AlertOnly");
        pt.q_[s][a] = e.at("q").get<double>();
        pt.visits_[s][a] = e.at("visits").get<int>();
    }
    for (const auto& p : j.value("pins", nlohmann::json::array()))
        pt.pins_[State::parse(p.at("state").get<std::string>()).index()] = p.at("action").get<ActionKind>();
    for (const auto& b : j.value("bans", nlohmann::json::array()))
        pt.bans_.insert({State::parse(b.at("state").get<std::string>()).index(), b.at("action").get<ActionKind>()});
    for (const auto& s : j.value("shaping", nlohmann::json::array())) {
        pt.shaping_[{State::parse(s.at("state").get<std::string>()).index(), s.at("action").get<ActionKind>()}] =
            s.at("amount").get<double>();
    }
    for (const auto& [si, a] : pt.pins_) {
        if (pt.bans_.count({si, a})) throw Error(ErrorCode::PinBanConflict, State::from_index(si).to_string());
    }
    return pt;
}

PolicyTable PolicyTable::load(const std::filesystem::path& p) { return from_json(read_json_file(p)); }

void PolicyTable::save(const std::filesystem::path& p) const { write_json_file(p, to_json()); }

// --------------------------------------------------------------------- train

PolicyTable train(TrainingEnvironment& env, const RlConfig& cfg, std::uint64_t seed, PolicyTable pt) {
    cfg.validate();
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto choose = [&](const State& s, double eps) -> std::optional<ActionKind> {
        const auto allowed = pt.allowed(s);
        if (allowed.empty()) return std::nullopt;
        if (unit(rng) < eps) {
            return allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
        }
        return pt.greedy(s);
    };

    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double frac = cfg.episodes > 1 ? static_cast<double>(ep) / (cfg.episodes - 1) : 1.0;
        const double eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;

        State s = env.reset(rng);
        for (int step = 0; step < cfg.max_steps; ++step) {
            const auto a = choose(s, eps);
            if (!a) break;
            const Transition t = env.act(*a, rng);
            const double r = (t.resolved ? cfg.resolve_reward : 0.0) - cfg.lambda_disruption * t.disruption_minutes -
                             (t.compliance_violation ? cfg.lambda_compliance : 0.0) -
                             cfg.lambda_side_effect * t.side_effects + pt.shaping(s, *a);
            const bool done = t.resolved || t.terminal;
            // Truncation at max_steps still bootstraps: the episode cap is
            // not part of the problem.
            const double target = r + (done ? 0.0 : cfg.gamma * pt.max_q(t.next));
            pt.set_q(s, *a, pt.q(s, *a) + cfg.alpha * (target - pt.q(s, *a)));
            pt.add_visit(s, *a);
            if (done) break;
            s = t.next;
        }
    }

    auto& meta = pt.metadata();
    meta["episodes"] = meta.value("episodes", 0) + cfg.episodes;
    meta["seed"] = seed;
    meta["config"] = cfg.to_json();
    return pt;
}

PolicyTable sme_feedback(PolicyTable pt, const State& s, ActionKind a, PolicyTable::Verdict v, double amount) {
    pt.feedback(s, a, v, amount);
    return pt;
}

// ---------------------------------------------------------------------- plans

std::vector<ActionKind> RemediationPlan::actions() const {
    std::vector<ActionKind> out;
    for (const auto& s : steps) out.push_back(s.action);
    return out;
}

nlohmann::json to_json(const RemediationPlan& p) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : p.steps) steps.push_back({{"action", s.action}, {"params", s.params}});
    nlohmann::json q = nlohmann::json::object();
    for (const auto& [a, v] : p.q_values) q[std::string(name_of(a))] = v;
    return {{"plan_id", p.plan_id},
            {"finding_id", p.finding_id},
            {"asset_id", p.asset_id},
            {"state", p.state.to_string()},
            {"steps", steps},
            {"primary", p.primary},
            {"requires_approval", p.requires_approval},
            {"rationale", {{"source", p.source}, {"q_values", q}, {"policy_version", p.policy_version}}},
            {"status", p.status},
            {"created_tick", p.created_tick},
            {"attempts", p.attempts}};
}

RemediationPlan parse_plan(const nlohmann::json& j) {
    RemediationPlan p;
    p.plan_id = j.at("plan_id").get<std::string>();
    p.finding_id = j.at("finding_id").get<std::string>();
    p.asset_id = j.at("asset_id").get<std::string>();
    p.state = State::parse(j.at("state").get<std::string>());
    for (const auto& s : j.at("steps")) {
        p.steps.push_back({s.at("action").get<ActionKind>(), s.at("params").get<std::map<std::string, std::string>>()});
    }
    p.primary = j.at("primary").get<ActionKind>();
    p.requires_approval = j.at("requires_approval").get<bool>();
    const auto& r = j.at("rationale");
    p.source = r.at("source").get<std::string>();
    for (const auto& [k, v] : r.at("q_values").items()) p.q_values[parse_enum<ActionKind>(k)] = v.get<double>();
    p.policy_version = r.at("policy_version").get<int>();
    p.status = j.at("status").get<PlanStatus>();
    p.created_tick = j.at("created_tick").get<Tick>();
    p.attempts = j.value("attempts", 0);
    return p;
}

bool ApprovalTriggers::fires(const Asset& a, const std::vector<ActionKind>& acts) const {
    if (asset_classes.count(a.asset_class)) return true;
    for (const auto& t : tags) {
        if (a.has_tag(t)) return true;
    }
    return std::any_of(acts.begin(), acts.end(), [&](ActionKind k) { return actions.count(k) != 0; });
}

ApprovalTriggers ApprovalTriggers::from_json(const nlohmann::json& j) {
    ApprovalTriggers t;
    if (j.contains("asset_classes")) t.asset_classes = j["asset_classes"].get<std::set<AssetClass>>();
    if (j.contains("tags")) t.tags = j["tags"].get<std::set<std::string>>();
    if (j.contains("actions")) t.actions = j["actions"].get<std::set<ActionKind>>();
    return t;
}

nlohmann::json ApprovalTriggers::to_json() const {
    return {{"asset_classes", asset_classes}, {"tags", tags}, {"actions", actions}};
}

RemediationPlan map_finding(Finding& f, const Asset& a, const Catalog& catalog, const PolicyTable& pt,
                            const ApprovalTriggers& triggers, std::string plan_id, Tick tick) {
    const State s = encode_state(f, a, catalog);
    const auto allowed = pt.allowed(s);
    if (allowed.empty()) throw Error(ErrorCode::NoActionAvailable, s.to_string());
    const CatalogEntry* entry = f.catalog_entry_id ? catalog.find(*f.catalog_entry_id) : nullptr;

    RemediationPlan p;
    p.plan_id = std::move(plan_id);
    p.finding_id = f.finding_id;
    p.asset_id = a.id;
    p.state = s;
    p.policy_version = pt.version();
    p.created_tick = tick;
    for (ActionKind k : allowed) p.q_values[k] = pt.q(s, k);

    auto is_allowed = [&](ActionKind k) { return std::find(allowed.begin(), allowed.end(), k) != allowed.end(); };

    ActionKind primary;
    if (auto pin = pt.pinned(s)) {
        primary = *pin;
        p.source = "pin";
    } else if (pt.state_visits(s) > 0) {
        primary = *pt.greedy(s);
        p.source = "greedy";
    } else {
        std::vector<ActionKind> hints =
            entry ? entry->remediation_hint : std::vector<ActionKind>{ActionKind::EnableLoggingAlerting};
        auto it = std::find_if(hints.begin(), hints.end(), is_allowed);
        primary = it != hints.end() ? *it : allowed.front();
        p.source = "fallback";
    }

    // Structural steps obey bans too, but never a pin's exclusivity.
    auto structural_ok = [&](ActionKind k) { return !pt.banned(s, k); };

    const bool isolate = f.risk_band == RiskBand::High && primary != ActionKind::IsolateSegment &&
                         structural_ok(ActionKind::IsolateSegment);
    if (isolate) p.steps.push_back({ActionKind::IsolateSegment, {}});

    p.primary = primary;
    PlanStep main{primary, {}};
    if (primary == ActionKind::FirmwareUpgrade && entry && entry->detection_hint.kind == HintKind::FirmwareBelow) {
        main.params["target_version"] = entry->detection_hint.fixed_version;
    }
    p.steps.push_back(std::move(main));

    const bool patched = primary == ActionKind::FirmwareUpgrade || primary == ActionKind::AutoPatch;
    const bool isolated = isolate || primary == ActionKind::IsolateSegment;
    if ((patched || isolated) && primary != ActionKind::RestartService && structural_ok(ActionKind::RestartService)) {
        p.steps.push_back({ActionKind::RestartService, {}});
    }

    p.requires_approval = a.business_critical || triggers.fires(a, p.actions());
    f.advance(Lifecycle::Planned);
    if (p.requires_approval) {
        f.advance(Lifecycle::AwaitingApproval);
        p.status = PlanStatus::PendingApproval;
    } else {
        p.status = PlanStatus::Approved;
    }
    return p;
}

}  // namespace soar
