#pragma once

// Remediation executor: script resolution (stored or generated from
// templates), security-policy validation, the approval gate, execution
// against the environment, and post-remediation integrity checks.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/mapper.hpp"
#include "soar/scanner.hpp"
#include "soar/simenv.hpp"

namespace soar {

enum class ScriptFormat : std::uint8_t { SystemShellAutomation, GeneralScripting, WorkflowAutomation };
SOAR_ENUM_NAMES(ScriptFormat, "SystemShellAutomation"sv, "GeneralScripting"sv, "WorkflowAutomation"sv)

enum class ScriptSource : std::uint8_t { Preexisting, Generated };
SOAR_ENUM_NAMES(ScriptSource, "Preexisting"sv, "Generated"sv)

using Params = std::map<std::string, std::string>;

struct ScriptStep {
    std::string asset_id;
    ActionKind action = ActionKind::AlertOnly;
    Params params;
    std::string rendered;
    bool operator==(const ScriptStep&) const = default;
};

struct Script {
    std::string script_id;
    ScriptFormat format = ScriptFormat::SystemShellAutomation;
    std::vector<ScriptStep> steps;
    ScriptSource source = ScriptSource::Generated;
    std::optional<std::string> template_id;

    std::string text() const;          // rendered steps, one per line
    std::string content_hash() const;  // hex SHA-256 over format and steps
    std::set<std::string> touched_assets(const Environment& env) const;
    bool operator==(const Script&) const = default;
};

nlohmann::json to_json(const Script& s);
Script parse_script(const nlohmann::json& j);

// Rendering is invertible: parse_step(render_step(...)) gives the triple back.
std::string render_step(ScriptFormat fmt, const std::string& asset_id, ActionKind action, const Params& params);
ScriptStep parse_step(ScriptFormat fmt, std::string_view line);

// Format used for generated scripts on an asset class.
ScriptFormat format_for(AssetClass cls) noexcept;

struct ScriptTemplate {
    ActionKind action = ActionKind::AlertOnly;
    Params defaults;  // parameter slots with default values
};

// Last successful parameters per (action, asset class).
class ExecutionHistory {
public:
    std::optional<Params> last(ActionKind a, AssetClass cls) const;
    void record(ActionKind a, AssetClass cls, const Params& p);
    nlohmann::json to_json() const;

private:
    std::map<std::pair<ActionKind, AssetClass>, Params> last_;
};

class ScriptStore {
public:
    // Templates for all 14 actions; no stored scripts.
    static ScriptStore with_default_templates();
    static ScriptStore from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    const Script* lookup(VulnClass vc, AssetClass ac) const;
    void put(VulnClass vc, AssetClass ac, Script s);
    const ScriptTemplate* template_for(ActionKind a) const;
    void remove_template(ActionKind a) { templates_.erase(a); }
    std::size_t script_count() const noexcept { return scripts_.size(); }

private:
    std::map<std::pair<VulnClass, AssetClass>, Script> scripts_;
    std::map<ActionKind, ScriptTemplate> templates_;
};

// A stored script for the plan's (vuln class, asset class) if present, with
// any "{asset}" placeholder bound to the plan's asset; otherwise one
// generated from templates. Parameters come from, lowest precedence first:
// template defaults, history, catalog and asset facts, the plan itself.
// Throws TemplateMissing.
Script resolve_script(const RemediationPlan& plan, const ScriptStore& store, const ExecutionHistory& history,
                      const Environment& env);

struct MaintenanceWindow {
    Tick start = 0;
    Tick length = 0;
    Tick period = 0;  // 0 for a one-off window
    bool contains(Tick t) const noexcept;
};

struct DenyRule {
    std::string name;
    ActionKind action = ActionKind::AlertOnly;
    std::set<AssetClass> asset_classes;  // empty: any class
    std::optional<std::string> tag;      // asset must carry it
    bool outside_window_only = false;    // only denied outside maintenance windows
};

struct SecurityPolicy {
    std::vector<DenyRule> deny;
    std::vector<MaintenanceWindow> windows;
    int max_blast_radius = 0;  // 0: unlimited
    ApprovalTriggers approval;

    bool in_window(Tick t) const;
    static SecurityPolicy from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

enum class RuleKind : std::uint8_t { DenyRule, WindowRule, BlastRadius };
SOAR_ENUM_NAMES(RuleKind, "DenyRule"sv, "WindowRule"sv, "BlastRadius"sv)

struct Violation {
    RuleKind rule = RuleKind::DenyRule;
    std::string detail;
    bool operator==(const Violation&) const = default;
};

struct ValidationVerdict {
    std::vector<Violation> violations;
    std::string script_hash;  // hash of the script as validated
    Tick tick = 0;
    bool ok() const noexcept { return violations.empty(); }
};

// Evaluates every rule; pure in (script, policy, env, tick).
ValidationVerdict validate(const Script& script, const SecurityPolicy& policy, const Environment& env, Tick tick);

enum class ApprovalVerdict : std::uint8_t { Approve, Reject };
SOAR_ENUM_NAMES(ApprovalVerdict, "Approve"sv, "Reject"sv)

struct ApprovalDecision {
    std::string plan_id;
    ApprovalVerdict verdict = ApprovalVerdict::Approve;
    std::string actor;
    std::string comment;
    std::optional<ActionKind> ban_action;
    Tick tick = 0;
};

nlohmann::json to_json(const ApprovalDecision& d);
ApprovalDecision parse_decision(const nlohmann::json& j);

class ApprovalBook {
public:
    // Throws AlreadyDecided on a second decision for the same plan.
    void record(ApprovalDecision d);
    const ApprovalDecision* find(std::string_view plan_id) const;
    const std::map<std::string, ApprovalDecision, std::less<>>& all() const noexcept { return decisions_; }

private:
    std::map<std::string, ApprovalDecision, std::less<>> decisions_;
};

enum class Integrity : std::uint8_t { Restored, Degraded, Failed };
SOAR_ENUM_NAMES(Integrity, "Restored"sv, "Degraded"sv, "Failed"sv)

enum class ExecStatus : std::uint8_t { Pending, Rejected, Executed, StepFailed };
SOAR_ENUM_NAMES(ExecStatus, "Pending"sv, "Rejected"sv, "Executed"sv, "StepFailed"sv)

struct RemediationResult {
    std::string plan_id;
    ExecStatus status = ExecStatus::Pending;
    std::vector<ActionOutcome> steps;
    std::optional<Integrity> integrity;
    Tick started_tick = 0;
    Tick finished_tick = 0;
    std::optional<Tick> containment_minutes;
};

nlohmann::json to_json(const RemediationResult& r);

// Applies the gate, then the script's steps in order, stopping at the first
// failure. A missing decision on a gated plan returns Pending; Reject marks
// plan and finding Rejected. Nothing touches the environment unless the
// plan is ungated or approved. Throws ExecutionAborted when the script no
// longer hashes to what was validated or validation did not pass.
RemediationResult execute(RemediationPlan& plan, const Script& script, const ValidationVerdict& verdict,
                          Environment& env, const ApprovalBook& approvals, Finding& finding, Rng& rng);

// The cause behind a finding is gone: its vulnerability cleared, or for an
// anomaly, no attack still holding the asset.
bool cause_cleared(const Environment& env, const Finding& f);

// Restored needs a Healthy asset, the cause cleared and `in_band_streak`
// consecutive in-band telemetry ticks (at least kIntegrityStreak).
inline constexpr int kIntegrityStreak = 3;
Integrity integrity_check(const Environment& env, const Finding& f, int in_band_streak);

}  // namespace soar
