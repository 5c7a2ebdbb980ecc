#pragma once

// Impact analyzer: dynamic impact scoring and prioritized reports.

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/scanner.hpp"
#include "soar/simenv.hpp"

namespace soar {

// Which catalog score feeds the severity term.
enum class SeverityBasis : std::uint8_t { Declared, Computed };
SOAR_ENUM_NAMES(SeverityBasis, "declared"sv, "computed"sv)

struct ScoringConfig {
    double w_cvss = 0.30;
    double w_crit = 0.25;
    double w_exploit = 0.20;
    double w_central = 0.15;
    double w_expo = 0.10;
    std::set<std::string> exploit_intel;  // cve ids flagged actively exploited
    SeverityBasis severity_basis = SeverityBasis::Declared;

    // Throws ConfigInvalid unless weights are non-negative and sum to 1.
    void validate() const;
    static ScoringConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

double expo_factor(Exposure e) noexcept;

// Unrounded score in [0, 1]. Throws AssetGone when the asset is Down.
double impact_score_raw(const Finding& f, const Environment& env, const ScoringConfig& cfg);

// Two-decimal score; sets f.impact_score and advances Queued -> Analyzed.
double analyze(Finding& f, const Environment& env, const ScoringConfig& cfg);

// Descending impact, then higher computed CVSS, earlier detection,
// cve_id, finding_id.
bool priority_before(const Finding& a, const Finding& b, const Catalog& catalog);
std::vector<const Finding*> prioritize(std::vector<const Finding*> findings, const Catalog& catalog);

struct ReportEntry {
    std::string finding_id;
    std::string asset_id;
    std::optional<std::string> cve_id;
    double impact_score = 0.0;
    std::optional<cvss::Score> computed_score;
    RiskBand risk_band = RiskBand::Low;
    int rank = 0;
    bool operator==(const ReportEntry&) const = default;
};

struct VulnerabilityReport {
    Tick generated_tick = 0;
    std::vector<ReportEntry> entries;
    std::map<RiskBand, int> band_counts;

    // Same findings, scores and order; the tick is ignored.
    bool same_content(const VulnerabilityReport& other) const {
        return entries == other.entries;
    }
    nlohmann::json to_json() const;
};

// Ranks every open finding that has been analyzed.
VulnerabilityReport build_report(const FindingQueue& queue, const Environment& env, Tick tick);

}  // namespace soar
