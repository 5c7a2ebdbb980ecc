#include "soar/catalog.hpp"

#include <algorithm>
#include <fstream>

#include "soar/error.hpp"

namespace soar {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

DetectionHint parse_hint(const nlohmann::json& j) {
    DetectionHint h;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "firmware_below") {
        h.kind = HintKind::FirmwareBelow;
        h.fixed_version = j.at("fixed_version").get<std::string>();
        h.vulnerable_version = j.at("vulnerable_version").get<std::string>();
    } else if (kind == "config_flag") {
        h.kind = HintKind::ConfigFlag;
        h.flag = j.at("flag").get<std::string>();
    } else if (kind == "legacy_service") {
        h.kind = HintKind::LegacyService;
        h.service = j.at("service").get<std::string>();
        h.port = j.at("port").get<int>();
    } else {
        throw Error(ErrorCode::Parse, "unknown detection hint kind '" + kind + "'");
    }
    return h;
}

nlohmann::json hint_to_json(const DetectionHint& h) {
    switch (h.kind) {
        case HintKind::FirmwareBelow:
            return {{"kind", "firmware_below"},
                    {"fixed_version", h.fixed_version},
                    {"vulnerable_version", h.vulnerable_version}};
        case HintKind::ConfigFlag: return {{"kind", "config_flag"}, {"flag", h.flag}};
        case HintKind::LegacyService:
            return {{"kind", "legacy_service"}, {"service", h.service}, {"port", h.port}};
    }
    return {};
}

}  // namespace

bool CatalogEntry::remediated_by(ActionKind a) const {
    return std::find(remediation_hint.begin(), remediation_hint.end(), a) !=
           remediation_hint.end();
}

std::optional<int> compare_versions(std::string_view a, std::string_view b) {
    auto pa = split(a, '.');
    auto pb = split(b, '.');
    if (pa.empty() || pb.empty() || pa.front() != pb.front()) return std::nullopt;
    const std::size_t n = std::max(pa.size(), pb.size());
    for (std::size_t i = 1; i < n; ++i) {
        long va = i < pa.size() ? std::strtol(pa[i].c_str(), nullptr, 10) : 0;
        long vb = i < pb.size() ? std::strtol(pb[i].c_str(), nullptr, 10) : 0;
        if (va != vb) return va < vb ? -1 : 1;
    }
    return 0;
}

CatalogEntry parse_catalog_entry(const nlohmann::json& j) {
    try {
        CatalogEntry e;
        e.entry_id = j.at("entry_id").get<std::string>();
        e.vuln_class = j.at("vuln_class").get<VulnClass>();
        e.name = j.at("name").get<std::string>();
        e.priority_band = j.at("priority_band").get<PriorityBand>();
        e.impact_score_declared = j.at("impact_score_declared").get<double>();
        e.key_attack_vector = j.value("key_attack_vector", "");
        e.cve_id = j.at("cve_id").get<std::string>();
        e.detection_text = j.value("detection", "");
        e.remediation_text = j.value("remediation", "");
        e.cvss_vector = cvss::parse_vector(j.at("cvss_vector").get<std::string>());
        e.declared_score = cvss::parse_score(j.at("declared_score").get<std::string>());
        e.computed_score = cvss::base_score(e.cvss_vector);
        e.detection_hint = parse_hint(j.at("detection_hint"));
        e.remediation_hint = j.at("remediation_hint").get<std::vector<ActionKind>>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("catalog entry: ") + ex.what());
    }
}

nlohmann::json to_json(const CatalogEntry& e) {
    return {{"entry_id", e.entry_id},
            {"vuln_class", e.vuln_class},
            {"name", e.name},
            {"priority_band", e.priority_band},
            {"impact_score_declared", e.impact_score_declared},
            {"key_attack_vector", e.key_attack_vector},
            {"cve_id", e.cve_id},
            {"detection", e.detection_text},
            {"remediation", e.remediation_text},
            {"cvss_vector", cvss::to_string(e.cvss_vector)},
            {"declared_score", e.declared_score.to_string()},
            {"computed_score", e.computed_score.to_string()},
            {"detection_hint", hint_to_json(e.detection_hint)},
            {"remediation_hint", e.remediation_hint}};
}

Catalog::Catalog(std::vector<CatalogEntry> entries) : entries_(std::move(entries)) {}

Catalog Catalog::from_json(const nlohmann::json& doc) {
    std::vector<CatalogEntry> entries;
    for (const auto& j : doc.at("entries")) entries.push_back(parse_catalog_entry(j));
    return Catalog(std::move(entries));
}

Catalog Catalog::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open catalog " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& ex) {
        throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
    }
}

const CatalogEntry* Catalog::find(std::string_view entry_id) const {
    for (const auto& e : entries_) {
        if (e.entry_id == entry_id) return &e;
    }
    return nullptr;
}

const CatalogEntry* Catalog::find_by_cve(std::string_view cve_id) const {
    for (const auto& e : entries_) {
        if (e.cve_id == cve_id) return &e;
    }
    return nullptr;
}

const CatalogEntry& Catalog::at(std::string_view entry_id) const {
    if (const auto* e = find(entry_id)) return *e;
    throw Error(ErrorCode::UnknownCatalogEntry, std::string(entry_id));
}

void Catalog::apply_overrides(const nlohmann::json& overrides) {
    for (const auto& o : overrides) {
        const auto id = o.at("entry_id").get<std::string>();
        auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const CatalogEntry& e) { return e.entry_id == id; });
        if (it == entries_.end()) {
            entries_.push_back(parse_catalog_entry(o));
            continue;
        }
        // Partial override: merge onto the existing entry's JSON form.
        auto merged = soar::to_json(*it);
        merged.update(o);
        *it = parse_catalog_entry(merged);
    }
}

std::vector<LintWarning> Catalog::lint() const {
    std::vector<LintWarning> out;
    for (const auto& e : entries_) {
        if (e.declared_score != e.computed_score) {
            out.push_back({e.entry_id, e.declared_score, e.computed_score});
        }
    }
    return out;
}

nlohmann::json Catalog::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : entries_) entries.push_back(soar::to_json(e));
    return {{"entries", entries}};
}

}  // namespace soar
