#pragma once

// Vulnerability catalog: the bundled threat/CVE table with detection
// signatures and remediation hints.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/cvss.hpp"
#include "soar/types.hpp"

namespace soar {

enum class HintKind : std::uint8_t { FirmwareBelow, ConfigFlag, LegacyService };

// What an inventory record must show for the entry to match.
struct DetectionHint {
    HintKind kind = HintKind::ConfigFlag;
    std::string fixed_version;       // FirmwareBelow: first safe version
    std::string vulnerable_version;  // FirmwareBelow: version an injection installs
    std::string flag;                // ConfigFlag
    std::string service;             // LegacyService
    int port = 0;                    // LegacyService
};

struct CatalogEntry {
    std::string entry_id;
    VulnClass vuln_class = VulnClass::Anomaly;
    std::string name;
    PriorityBand priority_band = PriorityBand::MediumLow;
    double impact_score_declared = 0.0;
    std::string key_attack_vector;
    std::string cve_id;
    std::string detection_text;
    std::string remediation_text;
    cvss::Vector cvss_vector;
    cvss::Score declared_score;
    cvss::Score computed_score;
    DetectionHint detection_hint;
    std::vector<ActionKind> remediation_hint;

    bool remediated_by(ActionKind a) const;
};

struct LintWarning {
    std::string entry_id;
    cvss::Score declared;
    cvss::Score computed;
};

class Catalog {
public:
    Catalog() = default;
    explicit Catalog(std::vector<CatalogEntry> entries);

    static Catalog from_json(const nlohmann::json& doc);
    static Catalog load(const std::filesystem::path& path);

    const std::vector<CatalogEntry>& entries() const noexcept { return entries_; }
    const CatalogEntry* find(std::string_view entry_id) const;
    const CatalogEntry* find_by_cve(std::string_view cve_id) const;
    // Throws UnknownCatalogEntry.
    const CatalogEntry& at(std::string_view entry_id) const;

    // Replaces or adds entries (scenario catalog_overrides).
    void apply_overrides(const nlohmann::json& overrides);

    // Rows whose declared score differs from the computed one.
    std::vector<LintWarning> lint() const;

    nlohmann::json to_json() const;

private:
    std::vector<CatalogEntry> entries_;
};

CatalogEntry parse_catalog_entry(const nlohmann::json& j);
nlohmann::json to_json(const CatalogEntry& e);

// Compares dotted versions sharing the same leading product token
// ("X.0.2" < "X.1.3"). Returns nullopt when the products differ.
std::optional<int> compare_versions(std::string_view a, std::string_view b);

}  // namespace soar
