#include "soar/analyzer.hpp"

#include <algorithm>
#include <cmath>

#include "soar/error.hpp"

namespace soar {

void ScoringConfig::validate() const {
    const double w[] = {w_cvss, w_crit, w_exploit, w_central, w_expo};
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "scoring weight negative");
        sum += x;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw Error(ErrorCode::ConfigInvalid, "scoring weights sum to " + std::to_string(sum));
    }
}

ScoringConfig ScoringConfig::from_json(const nlohmann::json& j) {
    ScoringConfig c;
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        c.w_cvss = w.value("cvss", c.w_cvss);
        c.w_crit = w.value("criticality", c.w_crit);
        c.w_exploit = w.value("exploit", c.w_exploit);
        c.w_central = w.value("centrality", c.w_central);
        c.w_expo = w.value("exposure", c.w_expo);
    }
    if (j.contains("exploit_intel")) c.exploit_intel = j["exploit_intel"].get<std::set<std::string>>();
    if (j.contains("severity_basis")) c.severity_basis = j["severity_basis"].get<SeverityBasis>();
    c.validate();
    return c;
}

nlohmann::json ScoringConfig::to_json() const {
    return {{"weights",
             {{"cvss", w_cvss}, {"criticality", w_crit}, {"exploit", w_exploit}, {"centrality", w_central},
              {"exposure", w_expo}}},
            {"exploit_intel", exploit_intel},
            {"severity_basis", severity_basis}};
}

double expo_factor(Exposure e) noexcept {
    switch (e) {
        case Exposure::InternetFacing: return 1.0;
        case Exposure::InternalOnly: return 0.5;
        case Exposure::AirGapped: return 0.1;
    }
    return 0.0;
}

double impact_score_raw(const Finding& f, const Environment& env, const ScoringConfig& cfg) {
    const Asset* asset = env.find_asset(f.asset_id);
    if (!asset || asset->state == AssetState::Down) throw Error(ErrorCode::AssetGone, f.asset_id);

    double severity;
    bool exploited = false;
    if (f.catalog_entry_id) {
        const auto& entry = env.catalog().at(*f.catalog_entry_id);
        const auto& s = cfg.severity_basis == SeverityBasis::Declared ? entry.declared_score : entry.computed_score;
        severity = s.value() / 10.0;
        exploited = cfg.exploit_intel.count(entry.cve_id) != 0;
    } else {
        severity = std::min(f.anomaly_score / 10.0, 1.0);
    }
    const double score = cfg.w_cvss * severity + cfg.w_crit * asset->criticality +
                         cfg.w_exploit * (exploited ? 1.0 : 0.0) + cfg.w_central * env.centrality(f.asset_id) +
                         cfg.w_expo * expo_factor(asset->exposure);
    return std::clamp(score, 0.0, 1.0);
}

double analyze(Finding& f, const Environment& env, const ScoringConfig& cfg) {
    const double s = round2(impact_score_raw(f, env, cfg));
    f.impact_score = s;
    if (f.lifecycle == Lifecycle::Queued) f.advance(Lifecycle::Analyzed);
    return s;
}

namespace {

int computed_tenths(const Finding& f, const Catalog& catalog) {
    if (!f.catalog_entry_id) return -1;
    const auto* e = catalog.find(*f.catalog_entry_id);
    return e ? e->computed_score.tenths() : -1;
}

long hundredths(const std::optional<double>& s) { return s ? std::lround(*s * 100.0) : -1; }

}  // namespace

bool priority_before(const Finding& a, const Finding& b, const Catalog& catalog) {
    if (auto ha = hundredths(a.impact_score), hb = hundredths(b.impact_score); ha != hb) return ha > hb;
    if (auto ca = computed_tenths(a, catalog), cb = computed_tenths(b, catalog); ca != cb) return ca > cb;
    if (a.detected_tick != b.detected_tick) return a.detected_tick < b.detected_tick;
    // Findings without a CVE sort after those with one.
    const std::string cva = a.cve_id.value_or("\x7f"), cvb = b.cve_id.value_or("\x7f");
    if (cva != cvb) return cva < cvb;
    return a.finding_id < b.finding_id;
}

std::vector<const Finding*> prioritize(std::vector<const Finding*> findings, const Catalog& catalog) {
    std::sort(findings.begin(), findings.end(),
              [&](const Finding* a, const Finding* b) { return priority_before(*a, *b, catalog); });
    return findings;
}

nlohmann::json VulnerabilityReport::to_json() const {
    nlohmann::json entries_j = nlohmann::json::array();
    for (const auto& e : entries) {
        entries_j.push_back({{"rank", e.rank},
                             {"finding_id", e.finding_id},
                             {"asset_id", e.asset_id},
                             {"cve_id", opt_json(e.cve_id)},
                             {"impact_score", e.impact_score},
                             {"computed_score", e.computed_score ? nlohmann::json(e.computed_score->to_string()) : nlohmann::json(nullptr)},
                             {"risk_band", e.risk_band}});
    }
    nlohmann::json summary = nlohmann::json::object();
    for (auto band : {RiskBand::High, RiskBand::Medium, RiskBand::Low}) {
        auto it = band_counts.find(band);
        summary[std::string(name_of(band))] = it == band_counts.end() ? 0 : it->second;
    }
    return {{"generated_tick", generated_tick}, {"entries", entries_j}, {"summary", summary}};
}

VulnerabilityReport build_report(const FindingQueue& queue, const Environment& env, Tick tick) {
    std::vector<const Finding*> open;
    for (const auto& f : queue.all()) {
        if (!is_terminal(f.lifecycle) && f.impact_score) open.push_back(&f);
    }
    VulnerabilityReport r;
    r.generated_tick = tick;
    int rank = 0;
    for (const Finding* f : prioritize(std::move(open), env.catalog())) {
        ReportEntry e;
        e.finding_id = f->finding_id;
        e.asset_id = f->asset_id;
        e.cve_id = f->cve_id;
        e.impact_score = *f->impact_score;
        if (f->catalog_entry_id) e.computed_score = env.catalog().at(*f->catalog_entry_id).computed_score;
        e.risk_band = f->risk_band;
        e.rank = ++rank;
        r.band_counts[f->risk_band]++;
        r.entries.push_back(std::move(e));
    }
    return r;
}

}  // namespace soar
