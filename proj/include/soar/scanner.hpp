#pragma once

// Threat scanner: signature and statistical anomaly detection over
// telemetry, risk triage, instant containment and the finding queue.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/catalog.hpp"
#include "soar/simenv.hpp"
#include "soar/types.hpp"

namespace soar {

enum class ContainmentKind : std::uint8_t { Isolate, Restrict, Alert };
SOAR_ENUM_NAMES(ContainmentKind, "Isolate"sv, "Restrict"sv, "Alert"sv)

struct ContainmentRecord {
    ContainmentKind kind = ContainmentKind::Alert;
    Tick tick = 0;
    bool env_mutated = false;
    std::string actor = "scanner";
};

struct Finding {
    std::string finding_id;  // assigned by FindingQueue::enqueue
    std::string asset_id;
    std::optional<std::string> catalog_entry_id;
    std::optional<std::string> cve_id;
    Tick detected_tick = 0;
    Tick last_seen_tick = 0;
    double anomaly_score = 0.0;  // peak |z| over features
    std::optional<Feature> peak_feature;
    RiskBand risk_band = RiskBand::Low;
    std::optional<double> impact_score;  // two decimals; set from Analyzed on
    Lifecycle lifecycle = Lifecycle::Detected;
    std::optional<ContainmentRecord> containment_taken;

    // Moves to `next`, enforcing forward-only order; Rejected only from
    // AwaitingApproval, Failed and Resolved only from Remediating.
    void advance(Lifecycle next);
    bool is_anomaly() const noexcept { return !catalog_entry_id.has_value(); }
};

nlohmann::json to_json(const Finding& f);
Finding parse_finding(const nlohmann::json& j);

struct ScannerConfig {
    double z_threshold = 4.0;
    double ewma_decay = 0.05;
    int warmup_ticks = 50;
    bool operator==(const ScannerConfig&) const = default;
};

// Per (asset, feature) exponentially weighted mean and variance.
class BaselineModel {
public:
    explicit BaselineModel(ScannerConfig cfg = {}) : cfg_(cfg) {}

    const ScannerConfig& config() const noexcept { return cfg_; }
    bool warmed(const std::string& asset_id) const;
    // |z| per feature against the current baseline; nullopt before warmup.
    std::optional<FeatureVector> zscores(const TelemetryRecord& r) const;
    // Every feature within z_threshold of its baseline.
    bool in_band(const TelemetryRecord& r) const;
    void update(const TelemetryRecord& r);

    nlohmann::json to_json() const;
    static BaselineModel from_json(const nlohmann::json& j);
    bool operator==(const BaselineModel&) const = default;

private:
    struct Stat {
        double mean = 0.0;
        double var = 0.0;
        bool operator==(const Stat&) const = default;
    };
    struct AssetStats {
        std::array<Stat, kFeatureCount> stats{};
        int samples = 0;
        bool operator==(const AssetStats&) const = default;
    };
    ScannerConfig cfg_;
    std::map<std::string, AssetStats> assets_;
};

// Signature pass plus anomaly pass; pure with respect to the model.
std::vector<Finding> detect(const BaselineModel& model, const TelemetryBatch& batch,
                            const Catalog& catalog);

// detect(), then fold the batch into the baseline (isolated assets excluded).
std::vector<Finding> update_and_detect(BaselineModel& model, const TelemetryBatch& batch,
                                       const Catalog& catalog);

bool signature_matches(const DetectionHint& hint, const TelemetryRecord& r);

RiskBand classify_risk(const Finding& f, const Asset& asset, const Catalog& catalog);

// High isolates, Medium restricts legacy services, Low only alerts.
// Returns nullopt when the finding already carries an equal or stronger
// containment or the asset is already isolated (no duplicate containment).
std::optional<ContainmentRecord> instant_containment(Finding& f, Environment& env);

struct EnqueueResult {
    std::string finding_id;
    bool merged = false;
};

class FindingQueue {
public:
    // Detected -> Queued. An open finding for the same (asset, catalog
    // entry) absorbs the new one: earliest detected_tick is kept, the
    // latest sighting recorded.
    EnqueueResult enqueue(Finding f);

    Finding* find(std::string_view id);
    const Finding* find(std::string_view id) const;
    Finding& at(std::string_view id);
    const std::vector<Finding>& all() const noexcept { return items_; }
    std::vector<Finding>& all() noexcept { return items_; }
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t open_count() const;

    nlohmann::json to_json() const;
    static FindingQueue from_json(const nlohmann::json& j);

private:
    std::vector<Finding> items_;
    int next_id_ = 1;
};

}  // namespace soar
