#include "soar/scanner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "soar/error.hpp"

namespace soar {

namespace {

double sd_floor(double mean) { return std::max(0.05, 0.01 * std::fabs(mean)); }

}  // namespace

void Finding::advance(Lifecycle next) {
    const auto cur = lifecycle;
    if (cur == next) return;
    bool ok = !is_terminal(cur) && static_cast<int>(next) > static_cast<int>(cur);
    if (next == Lifecycle::Rejected) ok = ok && cur == Lifecycle::AwaitingApproval;
    if (next == Lifecycle::Failed || next == Lifecycle::Resolved) ok = ok && cur == Lifecycle::Remediating;
    if (!ok) {
        throw Error(ErrorCode::InvariantViolation, finding_id + ": lifecycle " + std::string(name_of(cur)) +
                                                       " -> " + std::string(name_of(next)));
    }
    lifecycle = next;
}

nlohmann::json to_json(const Finding& f) {
    nlohmann::json j = {{"finding_id", f.finding_id},
                        {"asset_id", f.asset_id},
                        {"catalog_entry_id", opt_json(f.catalog_entry_id)},
                        {"cve_id", opt_json(f.cve_id)},
                        {"detected_tick", f.detected_tick},
                        {"last_seen_tick", f.last_seen_tick},
                        {"anomaly_score", f.anomaly_score},
                        {"risk_band", f.risk_band},
                        {"impact_score", opt_json(f.impact_score)},
                        {"lifecycle", f.lifecycle}};
    if (f.peak_feature) j["peak_feature"] = *f.peak_feature;
    if (f.containment_taken) {
        j["containment"] = {{"kind", f.containment_taken->kind},
                            {"tick", f.containment_taken->tick},
                            {"env_mutated", f.containment_taken->env_mutated},
                            {"actor", f.containment_taken->actor}};
    }
    return j;
}

Finding parse_finding(const nlohmann::json& j) {
    Finding f;
    f.finding_id = j.at("finding_id").get<std::string>();
    f.asset_id = j.at("asset_id").get<std::string>();
    if (!j.at("catalog_entry_id").is_null()) f.catalog_entry_id = j["catalog_entry_id"].get<std::string>();
    if (!j.at("cve_id").is_null()) f.cve_id = j["cve_id"].get<std::string>();
    f.detected_tick = j.at("detected_tick").get<Tick>();
    f.last_seen_tick = j.at("last_seen_tick").get<Tick>();
    f.anomaly_score = j.at("anomaly_score").get<double>();
    f.risk_band = j.at("risk_band").get<RiskBand>();
    if (!j.at("impact_score").is_null()) f.impact_score = j["impact_score"].get<double>();
    f.lifecycle = j.at("lifecycle").get<Lifecycle>();
    if (j.contains("peak_feature")) f.peak_feature = j["peak_feature"].get<Feature>();
    if (j.contains("containment")) {
        const auto& c = j["containment"];
        f.containment_taken = ContainmentRecord{c.at("kind").get<ContainmentKind>(), c.at("tick").get<Tick>(),
                                                c.at("env_mutated").get<bool>(), c.at("actor").get<std::string>()};
    }
    return f;
}

// -------------------------------------------------------------- BaselineModel

bool BaselineModel::warmed(const std::string& asset_id) const {
    auto it = assets_.find(asset_id);
    return it != assets_.end() && it->second.samples >= cfg_.warmup_ticks;
}

std::optional<FeatureVector> BaselineModel::zscores(const TelemetryRecord& r) const {
    auto it = assets_.find(r.asset_id);
    if (it == assets_.end() || it->second.samples < cfg_.warmup_ticks) return std::nullopt;
    FeatureVector z{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        const auto& s = it->second.stats[i];
        const double sd = std::max(std::sqrt(s.var), sd_floor(s.mean));
        z[i] = std::fabs(r.features[i] - s.mean) / sd;
    }
    return z;
}

bool BaselineModel::in_band(const TelemetryRecord& r) const {
    auto z = zscores(r);
    if (!z) return false;
    return std::all_of(z->begin(), z->end(), [&](double v) { return v < cfg_.z_threshold; });
}

void BaselineModel::update(const TelemetryRecord& r) {
    auto& a = assets_[r.asset_id];
    const double alpha = cfg_.ewma_decay;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        auto& s = a.stats[i];
        const double x = r.features[i];
        if (a.samples == 0) {
            s.mean = x;
            s.var = 0.0;
            continue;
        }
        const double diff = x - s.mean;
        const double incr = alpha * diff;
        s.mean += incr;
        s.var = (1.0 - alpha) * (s.var + diff * incr);
    }
    ++a.samples;
}

nlohmann::json BaselineModel::to_json() const {
    nlohmann::json assets = nlohmann::json::object();
    for (const auto& [id, a] : assets_) {
        nlohmann::json stats = nlohmann::json::array();
        for (const auto& s : a.stats) stats.push_back({s.mean, s.var});
        assets[id] = {{"samples", a.samples}, {"stats", stats}};
    }
    return {{"z_threshold", cfg_.z_threshold},
            {"ewma_decay", cfg_.ewma_decay},
            {"warmup_ticks", cfg_.warmup_ticks},
            {"assets", assets}};
}

BaselineModel BaselineModel::from_json(const nlohmann::json& j) {
    BaselineModel m({j.at("z_threshold").get<double>(), j.at("ewma_decay").get<double>(),
                     j.at("warmup_ticks").get<int>()});
    for (const auto& [id, a] : j.at("assets").items()) {
        AssetStats st;
        st.samples = a.at("samples").get<int>();
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            st.stats[i] = {a.at("stats").at(i).at(0).get<double>(), a.at("stats").at(i).at(1).get<double>()};
        }
        m.assets_[id] = st;
    }
    return m;
}

// ------------------------------------------------------------------ detection

bool signature_matches(const DetectionHint& hint, const TelemetryRecord& r) {
    switch (hint.kind) {
        case HintKind::FirmwareBelow: {
            auto cmp = compare_versions(r.firmware_version, hint.fixed_version);
            return cmp && *cmp < 0;
        }
        case HintKind::ConfigFlag: return r.config_flags.count(hint.flag) != 0;
        case HintKind::LegacyService:
            return std::any_of(r.services.begin(), r.services.end(), [&](const Service& s) {
                return s.port == hint.port && s.security == ProtocolSecurity::Legacy;
            });
    }
    return false;
}

std::vector<Finding> detect(const BaselineModel& model, const TelemetryBatch& batch, const Catalog& catalog) {
    std::vector<Finding> out;
    for (const auto& r : batch.records) {
        if (!model.warmed(r.asset_id)) continue;
        const bool cut_off = r.state == AssetState::Isolated || r.state == AssetState::Down;

        double peak = 0.0;
        std::optional<Feature> peak_feature;
        if (!cut_off) {
            const auto z = *model.zscores(r);
            for (std::size_t i = 0; i < kFeatureCount; ++i) {
                if (z[i] > peak) {
                    peak = z[i];
                    peak_feature = static_cast<Feature>(i);
                }
            }
        }

        auto make = [&](const CatalogEntry* entry) {
            Finding f;
            f.asset_id = r.asset_id;
            if (entry) {
                f.catalog_entry_id = entry->entry_id;
                f.cve_id = entry->cve_id;
            }
            f.detected_tick = batch.tick;
            f.last_seen_tick = batch.tick;
            f.anomaly_score = peak;
            f.peak_feature = peak_feature;
            return f;
        };

        for (const auto& entry : catalog.entries()) {
            if (signature_matches(entry.detection_hint, r)) out.push_back(make(&entry));
        }
        if (!cut_off && peak >= model.config().z_threshold) out.push_back(make(nullptr));
    }
    return out;
}

std::vector<Finding> update_and_detect(BaselineModel& model, const TelemetryBatch& batch, const Catalog& catalog) {
    auto findings = detect(model, batch, catalog);
    for (const auto& r : batch.records) {
        // Isolation zeroes traffic by construction; learning it would skew the
        // baseline the asset is compared against once it rejoins.
        if (r.state == AssetState::Isolated) continue;
        model.update(r);
    }
    return findings;
}

RiskBand classify_risk(const Finding& f, const Asset& asset, const Catalog& catalog) {
    const CatalogEntry* entry = f.catalog_entry_id ? catalog.find(*f.catalog_entry_id) : nullptr;
    const auto band = entry ? std::optional(entry->priority_band) : std::nullopt;

    if (band == PriorityBand::High) return RiskBand::High;
    if (f.anomaly_score >= 6.0 && asset.criticality >= 0.8) return RiskBand::High;
    if (asset.exposure == Exposure::InternetFacing && band == PriorityBand::MediumHigh) return RiskBand::High;
    if (f.anomaly_score < 2.0 && !entry && asset.criticality < 0.3) return RiskBand::Low;
    return RiskBand::Medium;
}

std::optional<ContainmentRecord> instant_containment(Finding& f, Environment& env) {
    const auto needed = f.risk_band == RiskBand::High     ? ContainmentKind::Isolate
                        : f.risk_band == RiskBand::Medium ? ContainmentKind::Restrict
                                                          : ContainmentKind::Alert;
    // Enumerators run strongest first; only a stronger measure is taken again.
    if (f.containment_taken && f.containment_taken->kind <= needed) return std::nullopt;
    const auto& asset = env.asset(f.asset_id);
    ContainmentRecord rec;
    rec.tick = env.clock();
    switch (f.risk_band) {
        case RiskBand::High:
            if (asset.state == AssetState::Isolated) return std::nullopt;
            rec.kind = ContainmentKind::Isolate;
            rec.env_mutated = env.apply_action(f.asset_id, ActionKind::IsolateSegment, env.action_rng()).success;
            break;
        case RiskBand::Medium:
            rec.kind = ContainmentKind::Restrict;
            env.restrict_legacy_services(f.asset_id);
            rec.env_mutated = true;
            break;
        case RiskBand::Low:
            rec.kind = ContainmentKind::Alert;
            break;
    }
    f.containment_taken = rec;
    return rec;
}

// ---------------------------------------------------------------- FindingQueue

EnqueueResult FindingQueue::enqueue(Finding f) {
    for (auto& existing : items_) {
        if (existing.asset_id != f.asset_id || existing.catalog_entry_id != f.catalog_entry_id) continue;
        if (existing.lifecycle >= Lifecycle::Resolved) continue;
        existing.detected_tick = std::min(existing.detected_tick, f.detected_tick);
        existing.last_seen_tick = std::max(existing.last_seen_tick, f.last_seen_tick);
        if (f.anomaly_score > existing.anomaly_score) {
            existing.anomaly_score = f.anomaly_score;
            existing.peak_feature = f.peak_feature;
        }
        existing.risk_band = std::max(existing.risk_band, f.risk_band);
        return {existing.finding_id, true};
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "F-%04d", next_id_++);
    f.finding_id = buf;
    f.advance(Lifecycle::Queued);
    items_.push_back(std::move(f));
    return {items_.back().finding_id, false};
}

Finding* FindingQueue::find(std::string_view id) {
    for (auto& f : items_) {
        if (f.finding_id == id) return &f;
    }
    return nullptr;
}

const Finding* FindingQueue::find(std::string_view id) const {
    return const_cast<FindingQueue*>(this)->find(id);
}

Finding& FindingQueue::at(std::string_view id) {
    if (auto* f = find(id)) return *f;
    throw Error(ErrorCode::UnknownFinding, std::string(id));
}

std::size_t FindingQueue::open_count() const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [](const Finding& f) { return !is_terminal(f.lifecycle); }));
}

nlohmann::json FindingQueue::to_json() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& f : items_) items.push_back(soar::to_json(f));
    return {{"next_id", next_id_}, {"items", items}};
}

FindingQueue FindingQueue::from_json(const nlohmann::json& j) {
    FindingQueue q;
    q.next_id_ = j.at("next_id").get<int>();
    for (const auto& f : j.at("items")) q.items_.push_back(parse_finding(f));
    return q;
}

}  // namespace soar
