#pragma once

// Deterministic simulated critical-infrastructure environment.
//
// An Environment owns a set of assets joined by a dependency DAG, produces
// one TelemetryBatch per tick (1 tick = 1 simulated minute), runs injected
// attacks through their stage graphs, and applies remediation actions
// according to a data-driven effect table. Given the same scenario and seed,
// every trajectory is bit-identical.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/catalog.hpp"
#include "soar/types.hpp"
#include "soar/util.hpp"

namespace soar {

using Rng = std::mt19937_64;

enum class Feature : std::uint8_t {
    TrafficOutBytes,
    TrafficInBytes,
    DistinctPeers,
    FailedAuthCount,
    ProcessAnomalyFlag,
    FileEntropyDelta,
};
inline constexpr std::size_t kFeatureCount = 6;
using FeatureVector = std::array<double, kFeatureCount>;

SOAR_ENUM_NAMES(Feature, "traffic_out_bytes"sv, "traffic_in_bytes"sv, "distinct_peers"sv,
                "failed_auth_count"sv, "process_anomaly_flag"sv, "file_entropy_delta"sv)

struct Service {
    std::string name;
    int port = 0;
    ProtocolSecurity security = ProtocolSecurity::Secure;
    bool enabled = true;

    bool operator==(const Service&) const = default;
};

struct Asset {
    std::string id;
    AssetClass asset_class = AssetClass::Server;
    double criticality = 0.0;
    bool business_critical = false;
    std::string firmware_version;
    Exposure exposure = Exposure::InternalOnly;
    std::vector<Service> services;
    AssetState state = AssetState::Healthy;
    std::set<std::string> tags;          // e.g. "safety-critical"
    std::set<std::string> config_flags;  // inventory facts matched by signatures
    bool has_backup = false;
    std::optional<std::string> degraded_by;  // upstream asset whose action degraded this one

    bool has_tag(std::string_view t) const { return tags.count(std::string(t)) != 0; }
    bool operator==(const Asset&) const = default;
};

struct FeatureBaseline {
    double mean = 0.0;
    double sd = 0.0;
    bool operator==(const FeatureBaseline&) const = default;
};
using ClassBaseline = std::array<FeatureBaseline, kFeatureCount>;

struct Perturbation {
    double mul = 1.0;
    double add = 0.0;
    bool operator==(const Perturbation&) const = default;
};

struct AttackStage {
    std::string name;
    std::array<Perturbation, kFeatureCount> perturb{};
    bool spreads = false;
    bool data_impact = false;
    std::optional<AssetState> asset_state;  // applied to footprint assets on entry
    bool operator==(const AttackStage&) const = default;
};

struct ActionEffect {
    double success_p = 1.0;
    double disruption_minutes = 0.0;
    bool compliance_violation = false;
    bool degrades_dependents = false;
    bool requires_backup = false;
    std::vector<AttackKind> ends_attacks;
};

// Per action x asset-class effects plus attack stage graphs and default
// telemetry baselines. Ships as data/effect_table.json; scenarios may
// override any part through a JSON merge patch.
class EffectTable {
public:
    static EffectTable from_json(const nlohmann::json& doc);
    static EffectTable load_default();

    ActionEffect lookup(ActionKind action, AssetClass cls) const;
    const std::vector<AttackStage>& stages(AttackKind kind) const;
    std::optional<ClassBaseline> default_baseline(AssetClass cls) const;

    // Returns a copy with `patch` merged into the source document.
    EffectTable merged(const nlohmann::json& patch) const;
    const nlohmann::json& source() const noexcept { return doc_; }

private:
    nlohmann::json doc_;
    std::map<ActionKind, ActionEffect> defaults_;
    std::map<std::pair<ActionKind, AssetClass>, ActionEffect> by_class_;
    std::map<AttackKind, std::vector<AttackStage>> attacks_;
    std::map<AssetClass, ClassBaseline> baselines_;
};

struct AttackInstance {
    AttackKind kind = AttackKind::Apt;
    std::string entry_asset_id;
    Tick start_tick = 0;
    int stage = 0;
    std::string exploited_entry_id;  // may be empty
    Tick stage_interval_ticks = 240;

    // Runtime state.
    std::vector<std::string> footprint;
    bool active = true;
    Tick last_advance_tick = 0;
    int spread_events = 0;
    std::optional<Tick> terminal_tick;
    std::optional<Tick> data_impact_tick;
    std::optional<Tick> neutralized_tick;

    bool operator==(const AttackInstance&) const = default;
};

struct InjectedVuln {
    std::string asset_id;
    std::string entry_id;
    Tick injected_tick = 0;
    bool operator==(const InjectedVuln&) const = default;
};

struct TelemetryRecord {
    std::string asset_id;
    AssetState state = AssetState::Healthy;
    FeatureVector features{};
    // Inventory facts.
    std::string firmware_version;
    std::vector<Service> services;
    std::set<std::string> config_flags;
};

struct TelemetryBatch {
    Tick tick = 0;
    std::vector<TelemetryRecord> records;

    const TelemetryRecord* find(std::string_view asset_id) const;
};

struct ActionOutcome {
    ActionKind action = ActionKind::AlertOnly;
    std::string asset_id;
    bool success = false;
    double disruption_minutes = 0.0;
    bool compliance_violation = false;
    std::vector<std::string> side_effects;
    AssetState resulting_state = AssetState::Healthy;
    std::vector<std::string> cleared_entries;  // catalog entries removed from the asset
    std::vector<AttackKind> ended_attacks;
};

struct ScheduledInjection {
    Tick tick = 0;
    std::optional<AttackInstance> attack;
    std::optional<InjectedVuln> vuln;
};

// Serialized, byte-faithful environment state (including RNG positions).
struct EnvSnapshot {
    std::string bytes;
};

class Environment {
public:
    // load_topology. Throws CycleInDependencies, UnknownCatalogEntry,
    // InvariantViolation. Lint warnings land in lint_warnings().
    static Environment load(const nlohmann::json& scenario, Catalog catalog,
                            const EffectTable& defaults);
    // Scenario file; catalog and effect table come from the data directory.
    static Environment load_file(const std::filesystem::path& scenario_path);

    // Advances one tick: applies scheduled injections due now, progresses
    // attacks, emits telemetry for every non-Down asset.
    TelemetryBatch step();

    void inject_attack(AttackInstance attack);
    void inject_vuln(const std::string& asset_id, const std::string& entry_id);

    ActionOutcome apply_action(const std::string& asset_id, ActionKind action, Rng& rng);
    // Medium-risk containment: disables Legacy-protocol services.
    ActionOutcome restrict_legacy_services(const std::string& asset_id);

    EnvSnapshot snapshot() const;
    static Environment restore(const EnvSnapshot& snap);

    // |downstream assets reachable from id| / (|assets| - 1)
    double centrality(const std::string& asset_id) const;
    std::vector<std::string> direct_dependents(const std::string& asset_id) const;

    bool has_vuln(const std::string& asset_id, const std::string& entry_id) const;
    bool under_attack(const std::string& asset_id) const;

    const Asset& asset(const std::string& id) const;
    const Asset* find_asset(const std::string& id) const;
    const std::vector<Asset>& assets() const noexcept { return assets_; }
    const std::vector<std::pair<std::string, std::string>>& dependencies() const noexcept {
        return deps_;
    }
    const std::vector<AttackInstance>& attacks() const noexcept { return attacks_; }
    const std::vector<InjectedVuln>& injected_vulns() const noexcept { return vulns_; }
    const std::vector<ScheduledInjection>& schedule() const noexcept { return schedule_; }
    void clear_schedule() { schedule_.clear(); }
    const Catalog& catalog() const noexcept { return *catalog_; }
    const EffectTable& effects() const noexcept { return *effects_; }
    const ClassBaseline& baseline(AssetClass cls) const;
    const std::vector<LintWarning>& lint_warnings() const noexcept { return lint_; }

    Tick clock() const noexcept { return clock_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::string& scenario_id() const noexcept { return scenario_id_; }
    Rng& action_rng() noexcept { return action_rng_; }

    // Fingerprint of every telemetry batch and state transition so far.
    std::uint64_t trajectory_hash() const noexcept { return trajectory_.value(); }
    // Digest of the full current state.
    std::string state_hash() const;

    nlohmann::json to_json() const;

private:
    Environment() = default;

    Asset& mutable_asset(const std::string& id);
    void validate() const;
    void start_attack(AttackInstance& a);
    void progress_attacks();
    void evict_from_attack(AttackInstance& a, const std::string& asset_id);
    void clear_vuln(Asset& asset, const InjectedVuln& v, ActionOutcome& out);
    void recover_dependents(const std::string& upstream);
    void apply_scheduled();
    void record_transition(std::string_view what, const std::string& asset_id);

    std::string scenario_id_;
    std::vector<Asset> assets_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::pair<std::string, std::string>> deps_;  // upstream -> downstream
    std::map<AssetClass, ClassBaseline> baselines_;
    std::shared_ptr<const Catalog> catalog_;
    std::shared_ptr<const EffectTable> effects_;
    std::vector<AttackInstance> attacks_;
    std::vector<InjectedVuln> vulns_;
    std::vector<ScheduledInjection> schedule_;
    std::vector<LintWarning> lint_;
    Tick clock_ = 0;
    std::uint64_t seed_ = 0;
    Rng rng_;
    Rng action_rng_;
    Fnv1a trajectory_;
};

nlohmann::json to_json(const Asset& a);
Asset parse_asset(const nlohmann::json& j);
nlohmann::json to_json(const TelemetryBatch& b);
nlohmann::json to_json(const ActionOutcome& o);
nlohmann::json to_json(const AttackInstance& a);
AttackInstance parse_attack(const nlohmann::json& j);

}  // namespace soar
