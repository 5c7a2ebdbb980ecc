#include "soar/simenv.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "soar/error.hpp"
#include "soar/util.hpp"

namespace soar {

namespace {

ActionEffect parse_effect(const nlohmann::json& j, ActionEffect base) {
    if (j.contains("success_p")) base.success_p = j["success_p"].get<double>();
    if (j.contains("disruption_minutes")) base.disruption_minutes = j["disruption_minutes"].get<double>();
    if (j.contains("compliance_violation")) base.compliance_violation = j["compliance_violation"].get<bool>();
    if (j.contains("degrades_dependents")) base.degrades_dependents = j["degrades_dependents"].get<bool>();
    if (j.contains("requires_backup")) base.requires_backup = j["requires_backup"].get<bool>();
    if (j.contains("ends_attacks")) base.ends_attacks = j["ends_attacks"].get<std::vector<AttackKind>>();
    if (base.success_p < 0.0 || base.success_p > 1.0 || base.disruption_minutes < 0.0) {
        throw Error(ErrorCode::ConfigInvalid, "effect table entry out of range");
    }
    return base;
}

ClassBaseline parse_baseline(const nlohmann::json& j) {
    ClassBaseline b{};
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        const auto name = std::string(name_of(static_cast<Feature>(f)));
        const auto& pair = j.at(name);
        b[f] = {pair.at(0).get<double>(), pair.at(1).get<double>()};
        if (b[f].mean < 0.0 || b[f].sd < 0.0) {
            throw Error(ErrorCode::ConfigInvalid, "negative baseline for " + name);
        }
    }
    return b;
}

nlohmann::json baseline_to_json(const ClassBaseline& b) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        j[std::string(name_of(static_cast<Feature>(f)))] = {b[f].mean, b[f].sd};
    }
    return j;
}

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw Error(ErrorCode::Parse, "rng state");
}

Service parse_service(const nlohmann::json& j) {
    Service s;
    s.name = j.at("name").get<std::string>();
    s.port = j.at("port").get<int>();
    s.security = j.value("security", ProtocolSecurity::Secure);
    s.enabled = j.value("enabled", true);
    return s;
}

nlohmann::json to_json(const Service& s) {
    return {{"name", s.name}, {"port", s.port}, {"security", s.security}, {"enabled", s.enabled}};
}

nlohmann::json vuln_to_json(const InjectedVuln& v) {
    return {{"asset", v.asset_id}, {"entry", v.entry_id}, {"tick", v.injected_tick}};
}

InjectedVuln parse_vuln(const nlohmann::json& j) {
    return {j.at("asset").get<std::string>(), j.at("entry").get<std::string>(),
            j.value("tick", Tick{0})};
}

ScheduledInjection parse_scheduled(const nlohmann::json& j) {
    ScheduledInjection s;
    s.tick = j.at("tick").get<Tick>();
    const auto what = j.at("inject").get<std::string>();
    if (what == "vuln") {
        s.vuln = InjectedVuln{j.at("asset").get<std::string>(), j.at("entry").get<std::string>(), s.tick};
    } else if (what == "attack") {
        s.attack = parse_attack(j);
        s.attack->start_tick = s.tick;
    } else {
        throw Error(ErrorCode::Parse, "unknown schedule item '" + what + "'");
    }
    return s;
}

nlohmann::json scheduled_to_json(const ScheduledInjection& s) {
    nlohmann::json j;
    if (s.vuln) {
        j = {{"inject", "vuln"}, {"asset", s.vuln->asset_id}, {"entry", s.vuln->entry_id}};
    } else {
        j = to_json(*s.attack);
        j["inject"] = "attack";
    }
    j["tick"] = s.tick;
    return j;
}

double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

}  // namespace

// ---------------------------------------------------------------- EffectTable

EffectTable EffectTable::from_json(const nlohmann::json& doc) {
    EffectTable t;
    t.doc_ = doc;
    try {
        for (const auto& [name, spec] : doc.at("actions").items()) {
            const auto action = parse_enum<ActionKind>(name);
            const auto base = parse_effect(spec, ActionEffect{});
            t.defaults_[action] = base;
            if (spec.contains("by_class")) {
                for (const auto& [cls, over] : spec["by_class"].items()) {
                    t.by_class_[{action, parse_enum<AssetClass>(cls)}] = parse_effect(over, base);
                }
            }
        }
        for (const auto& [name, stages] : doc.at("attacks").items()) {
            std::vector<AttackStage> out;
            for (const auto& sj : stages) {
                AttackStage st;
                st.name = sj.at("name").get<std::string>();
                st.spreads = sj.value("spreads", false);
                st.data_impact = sj.value("data_impact", false);
                if (sj.contains("asset_state")) st.asset_state = sj["asset_state"].get<AssetState>();
                if (sj.contains("perturb")) {
                    for (const auto& [feature, p] : sj["perturb"].items()) {
                        auto& slot = st.perturb[static_cast<std::size_t>(parse_enum<Feature>(feature))];
                        slot.mul = p.value("mul", 1.0);
                        slot.add = p.value("add", 0.0);
                    }
                }
                out.push_back(std::move(st));
            }
            if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "attack " + name + " has no stages");
            t.attacks_[parse_enum<AttackKind>(name)] = std::move(out);
        }
        if (doc.contains("baselines")) {
            for (const auto& [cls, b] : doc["baselines"].items()) {
                t.baselines_[parse_enum<AssetClass>(cls)] = parse_baseline(b);
            }
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("effect table: ") + ex.what());
    }
    for (std::size_t i = 0; i <= kActionCount; ++i) {
        if (!t.defaults_.count(action_at(i))) {
            throw Error(ErrorCode::ConfigInvalid,
                        "effect table lacks action " + std::string(name_of(action_at(i))));
        }
    }
    return t;
}

EffectTable EffectTable::load_default() {
    return from_json(read_json_file(data_dir() / "effect_table.json"));
}

ActionEffect EffectTable::lookup(ActionKind action, AssetClass cls) const {
    if (auto it = by_class_.find({action, cls}); it != by_class_.end()) return it->second;
    return defaults_.at(action);
}

const std::vector<AttackStage>& EffectTable::stages(AttackKind kind) const {
    auto it = attacks_.find(kind);
    if (it == attacks_.end()) {
        throw Error(ErrorCode::ConfigInvalid, "no stage graph for " + std::string(name_of(kind)));
    }
    return it->second;
}

std::optional<ClassBaseline> EffectTable::default_baseline(AssetClass cls) const {
    if (auto it = baselines_.find(cls); it != baselines_.end()) return it->second;
    return std::nullopt;
}

EffectTable EffectTable::merged(const nlohmann::json& patch) const {
    auto doc = doc_;
    doc.merge_patch(patch);
    return from_json(doc);
}

// ------------------------------------------------------------- serialization

nlohmann::json to_json(const Asset& a) {
    nlohmann::json services = nlohmann::json::array();
    for (const auto& s : a.services) services.push_back(to_json(s));
    nlohmann::json j = {{"id", a.id},
                        {"class", a.asset_class},
                        {"criticality", a.criticality},
                        {"business_critical", a.business_critical},
                        {"firmware_version", a.firmware_version},
                        {"exposure", a.exposure},
                        {"services", services},
                        {"state", a.state},
                        {"tags", a.tags},
                        {"config_flags", a.config_flags},
                        {"has_backup", a.has_backup}};
    if (a.degraded_by) j["degraded_by"] = *a.degraded_by;
    return j;
}

Asset parse_asset(const nlohmann::json& j) {
    try {
        Asset a;
        a.id = j.at("id").get<std::string>();
        a.asset_class = j.at("class").get<AssetClass>();
        a.criticality = j.at("criticality").get<double>();
        a.business_critical = j.value("business_critical", false);
        a.firmware_version = j.value("firmware_version", "");
        a.exposure = j.value("exposure", Exposure::InternalOnly);
        if (j.contains("services")) {
            for (const auto& s : j["services"]) a.services.push_back(parse_service(s));
        }
        a.state = j.value("state", AssetState::Healthy);
        a.tags = j.value("tags", std::set<std::string>{});
        a.config_flags = j.value("config_flags", std::set<std::string>{});
        a.has_backup = j.value("has_backup", false);
        if (j.contains("degraded_by")) a.degraded_by = j["degraded_by"].get<std::string>();
        return a;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("asset: ") + ex.what());
    }
}

nlohmann::json to_json(const AttackInstance& a) {
    nlohmann::json j = {{"kind", a.kind},
                        {"asset", a.entry_asset_id},
                        {"start_tick", a.start_tick},
                        {"stage", a.stage},
                        {"exploited_entry", a.exploited_entry_id},
                        {"stage_interval_ticks", a.stage_interval_ticks},
                        {"footprint", a.footprint},
                        {"active", a.active},
                        {"last_advance_tick", a.last_advance_tick},
                        {"spread_events", a.spread_events}};
    if (a.terminal_tick) j["terminal_tick"] = *a.terminal_tick;
    if (a.data_impact_tick) j["data_impact_tick"] = *a.data_impact_tick;
    if (a.neutralized_tick) j["neutralized_tick"] = *a.neutralized_tick;
    return j;
}

AttackInstance parse_attack(const nlohmann::json& j) {
    AttackInstance a;
    a.kind = j.at("kind").get<AttackKind>();
    a.entry_asset_id = j.at("asset").get<std::string>();
    a.start_tick = j.value("start_tick", Tick{0});
    a.stage = j.value("stage", 0);
    a.exploited_entry_id = j.value("exploited_entry", "");
    a.stage_interval_ticks = j.value("stage_interval_ticks", Tick{240});
    a.footprint = j.value("footprint", std::vector<std::string>{});
    a.active = j.value("active", true);
    a.last_advance_tick = j.value("last_advance_tick", a.start_tick);
    a.spread_events = j.value("spread_events", 0);
    if (j.contains("terminal_tick")) a.terminal_tick = j["terminal_tick"].get<Tick>();
    if (j.contains("data_impact_tick")) a.data_impact_tick = j["data_impact_tick"].get<Tick>();
    if (j.contains("neutralized_tick")) a.neutralized_tick = j["neutralized_tick"].get<Tick>();
    if (a.stage_interval_ticks <= 0) throw Error(ErrorCode::ConfigInvalid, "stage_interval_ticks");
    return a;
}

nlohmann::json to_json(const TelemetryBatch& b) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : b.records) {
        nlohmann::json features = nlohmann::json::object();
        for (std::size_t f = 0; f < kFeatureCount; ++f) {
            features[std::string(name_of(static_cast<Feature>(f)))] = r.features[f];
        }
        nlohmann::json services = nlohmann::json::array();
        for (const auto& s : r.services) services.push_back(to_json(s));
        records.push_back({{"asset", r.asset_id},
                           {"state", r.state},
                           {"features", features},
                           {"firmware_version", r.firmware_version},
                           {"services", services},
                           {"config_flags", r.config_flags}});
    }
    return {{"tick", b.tick}, {"records", records}};
}

nlohmann::json to_json(const ActionOutcome& o) {
    return {{"action", o.action},
            {"asset", o.asset_id},
            {"success", o.success},
            {"disruption_minutes", o.disruption_minutes},
            {"compliance_violation", o.compliance_violation},
            {"side_effects", o.side_effects},
            {"resulting_state", o.resulting_state},
            {"cleared_entries", o.cleared_entries},
            {"ended_attacks", o.ended_attacks}};
}

const TelemetryRecord* TelemetryBatch::find(std::string_view asset_id) const {
    for (const auto& r : records) {
        if (r.asset_id == asset_id) return &r;
    }
    return nullptr;
}

// ---------------------------------------------------------------- Environment

Environment Environment::load(const nlohmann::json& scenario, Catalog catalog,
                              const EffectTable& defaults) {
    Environment env;
    try {
        env.scenario_id_ = scenario.value("scenario_id", "unnamed");
        env.seed_ = scenario.value("seed", std::uint64_t{0});
        if (scenario.contains("catalog_overrides")) catalog.apply_overrides(scenario["catalog_overrides"]);
        env.catalog_ = std::make_shared<const Catalog>(std::move(catalog));
        env.effects_ = std::make_shared<const EffectTable>(
            scenario.contains("effect_table") ? defaults.merged(scenario["effect_table"]) : defaults);

        for (const auto& aj : scenario.value("assets", nlohmann::json::array())) {
            env.assets_.push_back(parse_asset(aj));
        }
        for (const auto& dj : scenario.value("dependencies", nlohmann::json::array())) {
            env.deps_.emplace_back(dj.at("upstream").get<std::string>(),
                                   dj.at("downstream").get<std::string>());
        }
        if (scenario.contains("baselines")) {
            for (const auto& [cls, b] : scenario["baselines"].items()) {
                env.baselines_[parse_enum<AssetClass>(cls)] = parse_baseline(b);
            }
        }
        for (const auto& sj : scenario.value("attack_schedule", nlohmann::json::array())) {
            env.schedule_.push_back(parse_scheduled(sj));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("scenario: ") + ex.what());
    }

    for (std::size_t i = 0; i < env.assets_.size(); ++i) {
        if (!env.index_.emplace(env.assets_[i].id, i).second) {
            throw Error(ErrorCode::InvariantViolation, env.assets_[i].id + ": duplicate asset id");
        }
    }
    for (const auto& a : env.assets_) {
        if (!env.baselines_.count(a.asset_class)) {
            auto def = env.effects_->default_baseline(a.asset_class);
            if (!def) {
                throw Error(ErrorCode::InvariantViolation,
                            a.id + ": no telemetry baseline for class " + std::string(name_of(a.asset_class)));
            }
            env.baselines_[a.asset_class] = *def;
        }
    }
    env.validate();

    std::stable_sort(env.schedule_.begin(), env.schedule_.end(),
                     [](const auto& a, const auto& b) { return a.tick < b.tick; });
    env.rng_.seed(env.seed_);
    env.action_rng_.seed(env.seed_ ^ 0x9e3779b97f4a7c15ULL);
    env.lint_ = env.catalog_->lint();
    return env;
}

Environment Environment::load_file(const std::filesystem::path& scenario_path) {
    auto doc = read_json_file(scenario_path);
    auto catalog_path = data_dir() / doc.value("catalog", std::string("catalog/table1.catalog"));
    return load(doc, Catalog::load(catalog_path), EffectTable::load_default());
}

void Environment::validate() const {
    if (assets_.empty()) throw Error(ErrorCode::InvariantViolation, "scenario: asset list is empty");
    for (const auto& a : assets_) {
        if (a.criticality < 0.0 || a.criticality > 1.0) {
            throw Error(ErrorCode::InvariantViolation, a.id + ": criticality outside [0,1]");
        }
        if (a.business_critical && a.criticality < 0.8) {
            throw Error(ErrorCode::InvariantViolation, a.id + ": business_critical requires criticality >= 0.8");
        }
    }
    for (const auto& [up, down] : deps_) {
        for (const auto* id : {&up, &down}) {
            if (!index_.count(*id)) {
                throw Error(ErrorCode::InvariantViolation, *id + ": dependency on unknown asset");
            }
        }
    }
    // Kahn's algorithm; leftover nodes sit on a cycle.
    std::map<std::string, int> indegree;
    for (const auto& a : assets_) indegree[a.id] = 0;
    for (const auto& [up, down] : deps_) ++indegree[down];
    std::deque<std::string> ready;
    for (const auto& [id, d] : indegree) {
        if (d == 0) ready.push_back(id);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
        auto id = ready.front();
        ready.pop_front();
        ++visited;
        for (const auto& [up, down] : deps_) {
            if (up == id && --indegree[down] == 0) ready.push_back(down);
        }
    }
    if (visited != assets_.size()) {
        std::string members;
        for (const auto& [id, d] : indegree) {
            if (d > 0) members += (members.empty() ? "" : ",") + id;
        }
        throw Error(ErrorCode::CycleInDependencies, members);
    }
    for (const auto& s : schedule_) {
        const auto& asset_id = s.vuln ? s.vuln->asset_id : s.attack->entry_asset_id;
        if (!index_.count(asset_id)) {
            throw Error(ErrorCode::InvariantViolation, asset_id + ": scheduled injection on unknown asset");
        }
        const auto& entry = s.vuln ? s.vuln->entry_id : s.attack->exploited_entry_id;
        if (!entry.empty() && !catalog_->find(entry)) throw Error(ErrorCode::UnknownCatalogEntry, entry);
        if (s.attack) effects_->stages(s.attack->kind);
    }
}

const Asset& Environment::asset(const std::string& id) const {
    if (const auto* a = find_asset(id)) return *a;
    throw Error(ErrorCode::UnknownAsset, id);
}

const Asset* Environment::find_asset(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &assets_[it->second];
}

Asset& Environment::mutable_asset(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::UnknownAsset, id);
    return assets_[it->second];
}

const ClassBaseline& Environment::baseline(AssetClass cls) const { return baselines_.at(cls); }

std::vector<std::string> Environment::direct_dependents(const std::string& asset_id) const {
    std::vector<std::string> out;
    for (const auto& [up, down] : deps_) {
        if (up == asset_id) out.push_back(down);
    }
    return out;
}

double Environment::centrality(const std::string& asset_id) const {
    asset(asset_id);
    if (assets_.size() < 2) return 0.0;
    std::set<std::string> seen;
    std::deque<std::string> frontier{asset_id};
    while (!frontier.empty()) {
        auto id = frontier.front();
        frontier.pop_front();
        for (const auto& d : direct_dependents(id)) {
            if (seen.insert(d).second) frontier.push_back(d);
        }
    }
    return static_cast<double>(seen.size()) / static_cast<double>(assets_.size() - 1);
}

bool Environment::has_vuln(const std::string& asset_id, const std::string& entry_id) const {
    return std::any_of(vulns_.begin(), vulns_.end(), [&](const InjectedVuln& v) {
        return v.asset_id == asset_id && v.entry_id == entry_id;
    });
}

bool Environment::under_attack(const std::string& asset_id) const {
    return std::any_of(attacks_.begin(), attacks_.end(), [&](const AttackInstance& a) {
        return a.active && std::find(a.footprint.begin(), a.footprint.end(), asset_id) != a.footprint.end();
    });
}

void Environment::record_transition(std::string_view what, const std::string& asset_id) {
    trajectory_.update(what);
    trajectory_.update(asset_id);
    trajectory_.update(static_cast<std::int64_t>(clock_));
    if (const auto* a = find_asset(asset_id)) trajectory_.update(static_cast<std::int64_t>(a->state));
}

void Environment::inject_vuln(const std::string& asset_id, const std::string& entry_id) {
    auto& a = mutable_asset(asset_id);
    const auto& entry = catalog_->at(entry_id);
    if (has_vuln(asset_id, entry_id)) return;
    vulns_.push_back({asset_id, entry_id, clock_});
    const auto& hint = entry.detection_hint;
    switch (hint.kind) {
        case HintKind::FirmwareBelow: a.firmware_version = hint.vulnerable_version; break;
        case HintKind::ConfigFlag: a.config_flags.insert(hint.flag); break;
        case HintKind::LegacyService: {
            auto it = std::find_if(a.services.begin(), a.services.end(),
                                   [&](const Service& s) { return s.port == hint.port; });
            if (it == a.services.end()) {
                a.services.push_back({hint.service, hint.port, ProtocolSecurity::Legacy, true});
            } else {
                *it = {hint.service, hint.port, ProtocolSecurity::Legacy, true};
            }
            break;
        }
    }
    record_transition("inject_vuln:" + entry_id, asset_id);
}

void Environment::start_attack(AttackInstance& a) {
    a.footprint = {a.entry_asset_id};
    a.stage = 0;
    a.active = true;
    a.last_advance_tick = clock_;
    auto& asset = mutable_asset(a.entry_asset_id);
    const auto& first = effects_->stages(a.kind).front();
    if (first.asset_state && asset.state != AssetState::Isolated && asset.state != AssetState::Down) {
        asset.state = *first.asset_state;
    }
    if (first.data_impact) a.data_impact_tick = clock_;
    if (effects_->stages(a.kind).size() == 1) a.terminal_tick = clock_;
}

void Environment::inject_attack(AttackInstance attack) {
    mutable_asset(attack.entry_asset_id);
    if (!attack.exploited_entry_id.empty()) catalog_->at(attack.exploited_entry_id);
    if (attack.stage_interval_ticks <= 0) throw Error(ErrorCode::ConfigInvalid, "stage_interval_ticks");
    effects_->stages(attack.kind);
    attack.start_tick = clock_;
    start_attack(attack);
    record_transition("inject_attack:" + std::string(name_of(attack.kind)), attack.entry_asset_id);
    attacks_.push_back(std::move(attack));
}

void Environment::apply_scheduled() {
    while (!schedule_.empty() && schedule_.front().tick <= clock_) {
        auto item = std::move(schedule_.front());
        schedule_.erase(schedule_.begin());
        if (item.vuln) {
            inject_vuln(item.vuln->asset_id, item.vuln->entry_id);
        } else {
            inject_attack(std::move(*item.attack));
        }
    }
}

void Environment::progress_attacks() {
    for (auto& a : attacks_) {
        if (!a.active) continue;
        const bool contained = std::all_of(a.footprint.begin(), a.footprint.end(), [&](const std::string& id) {
            auto s = asset(id).state;
            return s == AssetState::Isolated || s == AssetState::Down;
        });
        if (contained) {
            // The attack clock pauses while every foothold is cut off.
            a.last_advance_tick = clock_;
            continue;
        }
        if (clock_ - a.last_advance_tick < a.stage_interval_ticks) continue;
        a.last_advance_tick = clock_;

        const auto& stages = effects_->stages(a.kind);
        if (a.stage + 1 < static_cast<int>(stages.size())) {
            ++a.stage;
            const auto& st = stages[static_cast<std::size_t>(a.stage)];
            if (st.asset_state) {
                for (const auto& id : a.footprint) {
                    auto& as = mutable_asset(id);
                    if (as.state != AssetState::Isolated && as.state != AssetState::Down) as.state = *st.asset_state;
                }
            }
            if (st.data_impact && !a.data_impact_tick) a.data_impact_tick = clock_;
            if (a.stage + 1 == static_cast<int>(stages.size()) && !a.terminal_tick) a.terminal_tick = clock_;
            record_transition("attack_stage:" + st.name, a.entry_asset_id);
        }
        if (stages[static_cast<std::size_t>(a.stage)].spreads) {
            const auto current = a.footprint;
            for (const auto& id : current) {
                auto s = asset(id).state;
                if (s == AssetState::Isolated || s == AssetState::Down) continue;
                for (const auto& d : direct_dependents(id)) {
                    if (std::find(a.footprint.begin(), a.footprint.end(), d) != a.footprint.end()) continue;
                    auto& target = mutable_asset(d);
                    if (target.state == AssetState::Isolated || target.state == AssetState::Down) continue;
                    a.footprint.push_back(d);
                    target.state = AssetState::Compromised;
                    ++a.spread_events;
                    record_transition("attack_spread", d);
                }
            }
        }
    }
}

TelemetryBatch Environment::step() {
    apply_scheduled();
    progress_attacks();

    TelemetryBatch batch;
    batch.tick = clock_;
    trajectory_.update(static_cast<std::int64_t>(clock_));
    for (const auto& a : assets_) {
        const auto& base = baselines_.at(a.asset_class);
        FeatureVector f{};
        // Draws happen for every asset, every tick, so attack or isolation on
        // one asset never shifts the random stream seen by another.
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            f[i] = std::max(0.0, base[i].mean + base[i].sd * standard_normal(rng_));
        }
        if (a.state == AssetState::Down) continue;

        for (const auto& atk : attacks_) {
            if (!atk.active) continue;
            if (std::find(atk.footprint.begin(), atk.footprint.end(), a.id) == atk.footprint.end()) continue;
            const auto& st = effects_->stages(atk.kind)[static_cast<std::size_t>(atk.stage)];
            for (std::size_t i = 0; i < kFeatureCount; ++i) {
                f[i] = f[i] * st.perturb[i].mul + st.perturb[i].add;
            }
        }
        auto& flag = f[static_cast<std::size_t>(Feature::ProcessAnomalyFlag)];
        flag = flag >= 0.5 ? 1.0 : 0.0;
        if (a.state == AssetState::Isolated) {
            f[static_cast<std::size_t>(Feature::TrafficOutBytes)] = 0.0;
            f[static_cast<std::size_t>(Feature::TrafficInBytes)] = 0.0;
            f[static_cast<std::size_t>(Feature::DistinctPeers)] = 0.0;
        }

        TelemetryRecord r;
        r.asset_id = a.id;
        r.state = a.state;
        r.features = f;
        r.firmware_version = a.firmware_version;
        r.services = a.services;
        r.config_flags = a.config_flags;
        trajectory_.update(a.id);
        trajectory_.update(static_cast<std::int64_t>(a.state));
        for (double v : f) trajectory_.update(v);
        batch.records.push_back(std::move(r));
    }
    ++clock_;
    return batch;
}

void Environment::evict_from_attack(AttackInstance& a, const std::string& asset_id) {
    auto it = std::find(a.footprint.begin(), a.footprint.end(), asset_id);
    if (it == a.footprint.end()) return;
    a.footprint.erase(it);
    auto& as = mutable_asset(asset_id);
    if (as.state == AssetState::Compromised) as.state = AssetState::Degraded;
    if (a.footprint.empty()) {
        a.active = false;
        a.neutralized_tick = clock_;
    }
    record_transition("attack_evicted", asset_id);
}

void Environment::clear_vuln(Asset& asset, const InjectedVuln& v, ActionOutcome& out) {
    const auto& hint = catalog_->at(v.entry_id).detection_hint;
    switch (hint.kind) {
        case HintKind::FirmwareBelow: asset.firmware_version = hint.fixed_version; break;
        case HintKind::ConfigFlag: asset.config_flags.erase(hint.flag); break;
        case HintKind::LegacyService:
            std::erase_if(asset.services, [&](const Service& s) { return s.port == hint.port; });
            break;
    }
    out.cleared_entries.push_back(v.entry_id);
    for (auto& a : attacks_) {
        if (a.active && a.exploited_entry_id == v.entry_id) evict_from_attack(a, asset.id);
    }
}

void Environment::recover_dependents(const std::string& upstream) {
    for (auto& a : assets_) {
        if (a.degraded_by && *a.degraded_by == upstream) {
            a.degraded_by.reset();
            if (a.state == AssetState::Degraded && !under_attack(a.id)) a.state = AssetState::Healthy;
        }
    }
}

ActionOutcome Environment::apply_action(const std::string& asset_id, ActionKind action, Rng& rng) {
    auto& a = mutable_asset(asset_id);
    ActionOutcome out;
    out.action = action;
    out.asset_id = asset_id;
    if (action == ActionKind::AlertOnly) {
        out.success = true;
        out.resulting_state = a.state;
        return out;
    }

    const auto effect = effects_->lookup(action, a.asset_class);
    if (effect.requires_backup && !a.has_backup) {
        throw Error(ErrorCode::ActionInapplicable,
                    std::string(name_of(action)) + " on " + asset_id + ": no backup configured");
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    out.success = unit(rng) < effect.success_p;
    out.disruption_minutes = effect.disruption_minutes;
    out.compliance_violation = effect.compliance_violation;

    if (out.success) {
        switch (action) {
            case ActionKind::IsolateSegment:
                if (a.state != AssetState::Isolated) {
                    a.state = AssetState::Isolated;
                    if (effect.degrades_dependents) {
                        for (const auto& d : direct_dependents(asset_id)) {
                            auto& dep = mutable_asset(d);
                            out.side_effects.push_back(d);
                            if (dep.state == AssetState::Healthy) {
                                dep.state = AssetState::Degraded;
                                dep.degraded_by = asset_id;
                            }
                        }
                    }
                }
                break;
            case ActionKind::RestartService:
                if (effect.degrades_dependents) out.side_effects = direct_dependents(asset_id);
                break;
            case ActionKind::DisableUnusedPorts:
                for (auto& s : a.services) {
                    if (s.security == ProtocolSecurity::Legacy) s.enabled = false;
                }
                break;
            case ActionKind::UpgradeProtocol:
                for (auto& s : a.services) s.security = ProtocolSecurity::Secure;
                break;
            default: break;
        }

        std::vector<InjectedVuln> cleared;
        std::erase_if(vulns_, [&](const InjectedVuln& v) {
            if (v.asset_id != asset_id || !catalog_->at(v.entry_id).remediated_by(action)) return false;
            cleared.push_back(v);
            return true;
        });
        for (const auto& v : cleared) clear_vuln(a, v, out);

        for (auto kind : effect.ends_attacks) {
            for (auto& atk : attacks_) {
                if (!atk.active || atk.kind != kind) continue;
                if (std::find(atk.footprint.begin(), atk.footprint.end(), asset_id) == atk.footprint.end()) continue;
                evict_from_attack(atk, asset_id);
                out.ended_attacks.push_back(kind);
            }
        }

        // Restart brings the asset back into service once nothing is left on it.
        if (action == ActionKind::RestartService && !under_attack(asset_id)) {
            a.state = AssetState::Healthy;
            a.degraded_by.reset();
            recover_dependents(asset_id);
        }
    }
    out.resulting_state = a.state;
    record_transition("action:" + std::string(name_of(action)) + (out.success ? ":ok" : ":fail"), asset_id);
    return out;
}

ActionOutcome Environment::restrict_legacy_services(const std::string& asset_id) {
    auto& a = mutable_asset(asset_id);
    ActionOutcome out;
    out.action = ActionKind::DisableUnusedPorts;
    out.asset_id = asset_id;
    out.success = true;
    for (auto& s : a.services) {
        if (s.security == ProtocolSecurity::Legacy) s.enabled = false;
    }
    out.resulting_state = a.state;
    record_transition("restrict", asset_id);
    return out;
}

nlohmann::json Environment::to_json() const {
    nlohmann::json assets = nlohmann::json::array();
    for (const auto& a : assets_) assets.push_back(soar::to_json(a));
    nlohmann::json deps = nlohmann::json::array();
    for (const auto& [up, down] : deps_) deps.push_back({{"upstream", up}, {"downstream", down}});
    nlohmann::json baselines = nlohmann::json::object();
    for (const auto& [cls, b] : baselines_) baselines[std::string(name_of(cls))] = baseline_to_json(b);
    nlohmann::json attacks = nlohmann::json::array();
    for (const auto& a : attacks_) attacks.push_back(soar::to_json(a));
    nlohmann::json vulns = nlohmann::json::array();
    for (const auto& v : vulns_) vulns.push_back(vuln_to_json(v));
    nlohmann::json schedule = nlohmann::json::array();
    for (const auto& s : schedule_) schedule.push_back(scheduled_to_json(s));
    return {{"scenario_id", scenario_id_},
            {"seed", seed_},
            {"clock", clock_},
            {"assets", assets},
            {"dependencies", deps},
            {"baselines", baselines},
            {"catalog", catalog_->to_json()},
            {"effect_table", effects_->source()},
            {"attacks", attacks},
            {"vulns", vulns},
            {"schedule", schedule},
            {"rng", rng_state(rng_)},
            {"action_rng", rng_state(action_rng_)},
            {"trajectory", trajectory_.value()}};
}

EnvSnapshot Environment::snapshot() const { return {to_json().dump()}; }

Environment Environment::restore(const EnvSnapshot& snap) {
    const auto j = nlohmann::json::parse(snap.bytes);
    Environment env;
    env.scenario_id_ = j.at("scenario_id").get<std::string>();
    env.seed_ = j.at("seed").get<std::uint64_t>();
    env.clock_ = j.at("clock").get<Tick>();
    for (const auto& aj : j.at("assets")) env.assets_.push_back(parse_asset(aj));
    for (std::size_t i = 0; i < env.assets_.size(); ++i) env.index_[env.assets_[i].id] = i;
    for (const auto& dj : j.at("dependencies")) {
        env.deps_.emplace_back(dj.at("upstream").get<std::string>(), dj.at("downstream").get<std::string>());
    }
    for (const auto& [cls, b] : j.at("baselines").items()) {
        env.baselines_[parse_enum<AssetClass>(cls)] = parse_baseline(b);
    }
    env.catalog_ = std::make_shared<const Catalog>(Catalog::from_json(j.at("catalog")));
    env.effects_ = std::make_shared<const EffectTable>(EffectTable::from_json(j.at("effect_table")));
    for (const auto& aj : j.at("attacks")) env.attacks_.push_back(parse_attack(aj));
    for (const auto& vj : j.at("vulns")) env.vulns_.push_back(parse_vuln(vj));
    for (const auto& sj : j.at("schedule")) env.schedule_.push_back(parse_scheduled(sj));
    set_rng_state(env.rng_, j.at("rng").get<std::string>());
    set_rng_state(env.action_rng_, j.at("action_rng").get<std::string>());
    env.trajectory_.reset(j.at("trajectory").get<std::uint64_t>());
    env.lint_ = env.catalog_->lint();
    return env;
}

std::string Environment::state_hash() const { return to_hex(sha256(snapshot().bytes)); }

}  // namespace soar
