#pragma once

// The detection-to-remediation loop. One Pipeline owns every piece of
// mutable run state; callers drive it tick by tick or with run().

#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/analyzer.hpp"
#include "soar/audit.hpp"
#include "soar/executor.hpp"
#include "soar/mapper.hpp"
#include "soar/scanner.hpp"
#include "soar/simenv.hpp"

namespace soar {

enum class Mode : std::uint8_t { Aisa, TraditionalBaseline };
SOAR_ENUM_NAMES(Mode, "aisa"sv, "baseline"sv)

// Stand-in for manual operations: late triage, late approval, missed
// detections.
struct BaselineParams {
    Tick manual_triage_delay_ticks = 2880;
    Tick manual_remediation_delay_ticks = 5760;
    double detection_miss_rate = 0.4;
};

struct RunConfig {
    nlohmann::json scenario;  // full scenario document
    std::string scenario_path;
    std::optional<nlohmann::json> policy;  // PolicyTable document
    Mode mode = Mode::Aisa;
    BaselineParams baseline;
    Tick ticks = 1440;
    std::optional<std::uint64_t> seed;  // overrides the scenario seed
    std::optional<nlohmann::json> approval_script;  // overrides the scenario's
    bool stop_when_idle = true;
    int snapshot_every = 0;  // ticks; 0 writes only the final snapshot
    bool fsync = false;
    Tick detection_window_ticks = 60;  // "timely" detection for accuracy metrics

    std::uint64_t effective_seed() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    // Reads the scenario file and, when given, the policy file.
    static RunConfig from_files(const std::filesystem::path& scenario, const std::optional<std::filesystem::path>& policy);
};

struct Command {
    enum class Kind : std::uint8_t { Decision, Contain };
    Kind kind = Kind::Decision;
    ApprovalDecision decision;
    std::string finding_id;  // Contain
    std::string actor;       // Contain
};

// An executed plan waiting for telemetry to settle.
struct IntegrityWatch {
    std::string finding_id;
    std::string plan_id;
    Tick started = 0;
    int streak = 0;
};

class Pipeline {
public:
    // Loads the environment and policy; with run_dir set, writes the run
    // directory (run.json, audit.log, reports/, scripts/, snapshots/).
    // Throws ConfigInvalid and scenario load errors.
    explicit Pipeline(RunConfig cfg, std::optional<std::filesystem::path> run_dir = std::nullopt);

    // Rebuilds a run from its directory by re-running the logged commands,
    // then continues live, appending to the same audit log. Throws
    // ChainCorrupt when the log does not verify or the re-run diverges.
    static std::unique_ptr<Pipeline> resume(const std::filesystem::path& run_dir);

    // Replays decisions and manual containments from `logged` instead of
    // the approval script and command channel.
    void use_replay_commands(const std::vector<AuditEvent>& logged);

    void step_tick();
    bool finished() const;
    // finish() has run.
    bool closed() const noexcept { return finished_; }
    // Runs until the budget is spent or, with stop_when_idle, nothing is
    // left to do. Writes summary, reports and the final snapshot.
    nlohmann::json run();
    // Writes summary.json and the final snapshot (idempotent).
    nlohmann::json finish();

    // Queues a decision for the next tick boundary. Throws UnknownPlan or
    // AlreadyDecided.
    void submit_decision(ApprovalDecision d);
    // Queues a manual containment. Throws UnknownFinding.
    void submit_contain(const std::string& finding_id, const std::string& actor);

    const RunConfig& config() const noexcept { return cfg_; }
    const Environment& env() const noexcept { return *env_; }
    const FindingQueue& queue() const noexcept { return queue_; }
    const std::map<std::string, RemediationPlan>& plans() const noexcept { return plans_; }
    const std::map<std::string, Script>& scripts() const noexcept { return scripts_; }
    const ApprovalBook& approvals() const noexcept { return approvals_; }
    const PolicyTable& policy() const noexcept { return policy_; }
    const AuditLog& log() const noexcept { return log_; }
    AuditLog& log() noexcept { return log_; }
    const std::optional<VulnerabilityReport>& latest_report() const noexcept { return report_; }
    const std::map<std::string, nlohmann::json>& reports() const noexcept { return report_docs_; }
    const BaselineModel& model() const noexcept { return model_; }
    Tick tick() const noexcept { return env_->clock(); }
    const std::string& run_id() const noexcept { return run_id_; }

    RunMetrics metrics() const;
    // Digest over environment, queue, plans and baseline model.
    std::string state_hash() const;
    nlohmann::json state_json() const;

private:
    void apply_commands(Tick t);
    void apply_decision(const ApprovalDecision& d, Tick t);
    void apply_contain(const std::string& finding_id, const std::string& actor, Tick t);
    void scan(const TelemetryBatch& batch, Tick t);
    void analyze_all(Tick t);
    void map_all(Tick t);
    void execute_all(Tick t);
    void check_integrity(const std::map<std::string, bool>& in_band, Tick t);
    void account(Tick t);

    void finding_failed(Finding& f, Tick t, const std::string& why);
    void notify_event(const AuditEvent& e);
    std::vector<Finding*> in_priority_order();
    bool has_cause(const Finding& f) const;
    bool baseline_suppressed(const Finding& f, Tick t);
    void write_snapshot(const std::string& name) const;

    RunConfig cfg_;
    std::optional<std::filesystem::path> dir_;
    std::string run_id_;
    std::optional<Environment> env_;
    ScoringConfig scoring_;
    SecurityPolicy security_;
    ScriptStore store_;
    ExecutionHistory history_;
    PolicyTable policy_;
    BaselineModel model_;
    FindingQueue queue_;
    std::map<std::string, RemediationPlan> plans_;
    std::map<std::string, Script> scripts_;
    std::map<std::string, ValidationVerdict> last_verdict_;
    std::map<std::string, std::string> plan_of_finding_;
    ApprovalBook approvals_;
    std::vector<IntegrityWatch> watches_;
    AuditLog log_;
    std::vector<Subscriber> subscribers_;
    std::optional<VulnerabilityReport> report_;
    std::map<std::string, nlohmann::json> report_docs_;
    std::deque<Command> channel_;
    std::optional<std::map<Tick, std::vector<Command>>> replay_;
    nlohmann::json approval_script_;
    std::set<std::string> scripted_done_;
    Rng baseline_rng_;
    std::map<std::string, bool> baseline_missed_;  // detection key -> missed
    std::map<std::string, Tick> first_seen_;       // detection key -> first raw sighting
    std::map<std::string, Tick> resolved_at_;         // finding -> tick
    std::map<std::string, Tick> remediation_start_;  // finding -> first execution tick
    std::vector<InjectedVuln> injections_;
    int false_positives_ = 0;
    int next_plan_ = 1;
    double downtime_minutes_ = 0.0;
    Tick ticks_run_ = 0;
    bool finished_ = false;
};

// Plan-independent part of an approval-script rule match.
bool script_rule_matches(const nlohmann::json& rule, const RemediationPlan& plan, const Finding& f);

struct ReplayResult {
    bool chain_ok = false;
    std::optional<std::size_t> first_broken;
    std::size_t events = 0;
    ReducedState reduced;
    // Re-run with the logged decisions (needs run.json beside the log).
    bool rerun_done = false;
    bool log_prefix_matches = false;
    std::string state_hash;
    std::optional<std::string> recorded_state_hash;
    bool reducer_matches_rerun = false;
};

// Verifies the chain, reduces it, and when run.json is present re-runs the
// recorded configuration with the logged decisions. Throws ChainCorrupt.
ReplayResult replay(const std::filesystem::path& log_path);

// Lifecycle projection compared between the reducer and a live queue.
nlohmann::json lifecycle_view(const nlohmann::json& finding);

}  // namespace soar
