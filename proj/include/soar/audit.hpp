#pragma once

// Hash-chained audit log, stakeholder notification, compliance reports and
// traditional-vs-automated metric comparison.

#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/types.hpp"

namespace soar {

enum class EventKind : std::uint8_t {
    Detected,
    Contained,
    Scored,
    Planned,
    ApprovalRequested,
    ApprovalDecided,
    Validated,
    Executed,
    IntegrityChecked,
    Resolved,
    Failed,
    Notified,
    ReportGenerated,
    PolicySwapped,
};
SOAR_ENUM_NAMES(EventKind, "Detected"sv, "Contained"sv, "Scored"sv, "Planned"sv, "ApprovalRequested"sv,
                "ApprovalDecided"sv, "Validated"sv, "Executed"sv, "IntegrityChecked"sv, "Resolved"sv, "Failed"sv,
                "Notified"sv, "ReportGenerated"sv, "PolicySwapped"sv)

inline const std::string kGenesisHash(64, '0');

struct AuditEvent {
    std::uint64_t seq = 0;
    Tick tick = 0;
    EventKind kind = EventKind::Detected;
    nlohmann::json payload = nlohmann::json::object();
    std::string prev_hash = kGenesisHash;
    std::string hash;

    // SHA-256 over the previous hash and the length-prefixed seq, tick,
    // kind and key-sorted payload.
    std::string compute_hash() const;
    std::string to_line() const;  // one JSON object, no trailing newline
    static AuditEvent parse_line(std::string_view line);
    nlohmann::json to_json() const;
};

struct VerifyResult {
    bool ok = true;
    std::optional<std::size_t> first_broken;
    std::string reason;
    std::size_t count = 0;  // events checked
};

// Checks sequence numbers, hash links, stored hashes and the canonical
// byte form of every line.
VerifyResult verify_lines(const std::vector<std::string>& lines);
VerifyResult verify_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Parses a verified log; throws ChainCorrupt naming the first broken index.
std::vector<AuditEvent> load_events(const std::filesystem::path& path);

class AuditLog {
public:
    AuditLog() = default;  // in memory only
    // Appends to `path`, continuing an existing chain after verifying it.
    // Throws ChainCorrupt when the existing tail does not verify.
    static AuditLog open(const std::filesystem::path& path, bool fsync = false);

    AuditLog(AuditLog&&) = default;
    AuditLog& operator=(AuditLog&&) = default;

    const AuditEvent& append(Tick tick, EventKind kind, nlohmann::json payload);

    const std::vector<AuditEvent>& events() const noexcept { return events_; }
    std::size_t size() const noexcept { return events_.size(); }
    const std::string& tail_hash() const noexcept { return events_.empty() ? kGenesisHash : events_.back().hash; }

    // Called after each append, with the stored event.
    void on_append(std::function<void(const AuditEvent&)> cb) { listener_ = std::move(cb); }

private:
    std::vector<AuditEvent> events_;
    std::optional<std::filesystem::path> path_;
    std::shared_ptr<std::FILE> out_;
    bool fsync_ = false;
    std::function<void(const AuditEvent&)> listener_;
};

// ----------------------------------------------------------- notification

enum class SinkKind : std::uint8_t { Log, Webhook };
SOAR_ENUM_NAMES(SinkKind, "log"sv, "webhook"sv)

struct Subscriber {
    std::string name;
    SinkKind kind = SinkKind::Log;
    std::string target;  // file path for log sinks, URL for webhooks
};

std::vector<Subscriber> parse_subscribers(const nlohmann::json& j);

// Outcome of one delivery attempt. Ambiguous: the sink may have received
// the message although no acknowledgment arrived.
enum class AttemptResult : std::uint8_t { Delivered, Failed, Ambiguous };

struct DeliveryRecord {
    std::string subscriber;
    std::uint64_t event_seq = 0;
    int attempts = 0;
    bool delivered = false;
    bool duplicate = false;  // a delivered message may have arrived twice
    std::vector<int> backoff_ms;
    std::string error;
    nlohmann::json to_json() const;
};

struct RetryPolicy {
    int max_attempts = 4;
    int base_backoff_ms = 100;
    int max_backoff_ms = 2000;
};

using Transport = std::function<AttemptResult(const Subscriber&, const std::string& body, std::string& error)>;
using Sleeper = std::function<void(int ms)>;

// Log sinks append a line to their file; webhooks POST JSON.
AttemptResult default_transport(const Subscriber& s, const std::string& body, std::string& error);

// At-least-once: every subscriber gets up to max_attempts tries with capped
// exponential backoff. Never throws.
std::vector<DeliveryRecord> notify(const std::vector<Subscriber>& subscribers, const AuditEvent& event,
                                   const Transport& transport = default_transport, const RetryPolicy& retry = {},
                                   const Sleeper& sleep = {});

// --------------------------------------------------------------- reporting

enum class Framework : std::uint8_t { Iso27001, NistCsf, NercCip };
SOAR_ENUM_NAMES(Framework, "iso27001"sv, "nist-csf"sv, "nerc-cip"sv)

// Event kind -> control ids for each framework (data/control_tags.json).
class ControlTags {
public:
    static ControlTags load_default();
    static ControlTags from_json(const nlohmann::json& j);
    std::vector<std::string> controls(Framework f, EventKind k) const;

private:
    std::map<std::pair<Framework, EventKind>, std::vector<std::string>> map_;
};

// Per-finding lifecycle rebuilt from the log alone.
nlohmann::json generate_report(const std::vector<AuditEvent>& events, Framework framework, const ControlTags& tags,
                               const std::string& run_id);

// Event-sourced view: finding_id -> latest finding document, plan_id ->
// latest plan document.
struct ReducedState {
    std::map<std::string, nlohmann::json> findings;
    std::map<std::string, nlohmann::json> plans;
    std::map<std::string, nlohmann::json> decisions;
    std::uint64_t last_seq = 0;
    Tick last_tick = 0;
    nlohmann::json to_json() const;
    bool operator==(const ReducedState&) const = default;
};

ReducedState reduce(const std::vector<AuditEvent>& events);

// ----------------------------------------------------------------- metrics

// Raw per-run quantities; the orchestrator fills what the log cannot show.
struct RunMetrics {
    std::string scenario_id;
    std::uint64_t seed = 0;
    std::string mode;
    Tick ticks = 0;
    std::size_t asset_count = 0;

    std::optional<double> containment_minutes;       // mean detection -> resolution
    std::optional<double> patching_minutes;          // mean for unpatched-system findings
    std::optional<double> ddos_mitigation_minutes;   // mean DDoS attack lifetime
    std::optional<double> detection_accuracy_pct;    // timely detected critical / injected critical
    int false_positives = 0;
    std::optional<double> manual_intervention_pct;   // gated plans / plans
    std::optional<double> human_remediation_pct;     // plans executed on a human decision / executed plans
    std::optional<double> downtime_minutes_per_attack;
    std::optional<double> data_loss_reduction_pct;   // attacks stopped before data impact
    std::optional<double> uptime_pct;
    int breaches = 0;
    std::optional<double> incident_response_minutes;  // mean detection -> first remediation step

    // Injection -> resolution per injected vulnerability, censored at the
    // end of the run; key "asset/entry@tick".
    std::map<std::string, Tick> vuln_containment;

    nlohmann::json to_json() const;
    static RunMetrics from_json(const nlohmann::json& j);
};

struct ComparisonRow {
    std::string metric;
    std::string unit;
    std::optional<double> traditional;
    std::optional<double> aisa;
    std::optional<double> savings_pct;  // null: not measured
    bool higher_is_better = false;
};

struct MetricsComparison {
    std::vector<ComparisonRow> rows;
    nlohmann::json to_json() const;
    const ComparisonRow* row(std::string_view metric) const;
};

// Every row name of the published comparison table, in order.
const std::vector<std::string>& comparison_row_names();

double savings_pct(double traditional, double aisa, bool higher_is_better);

// Throws ScenarioMismatch unless scenario and seed agree.
MetricsComparison compare_runs(const RunMetrics& traditional, const RunMetrics& aisa);

}  // namespace soar
