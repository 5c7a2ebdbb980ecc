#pragma once

// Remediation mapper: tabular Q-learning over (vuln class, asset class,
// exposure), SME feedback, and mapping of findings to remediation plans.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/scanner.hpp"
#include "soar/simenv.hpp"

namespace soar {

inline constexpr std::size_t kStateCount = kVulnClassCount * kAssetClassCount * kExposureCount;

struct State {
    VulnClass vuln_class = VulnClass::Anomaly;
    AssetClass asset_class = AssetClass::Server;
    Exposure exposure = Exposure::InternalOnly;

    std::size_t index() const noexcept;
    static State from_index(std::size_t i);
    std::string to_string() const;  // "UnpatchedSystems/ScadaController/InternetFacing"
    static State parse(std::string_view text);
    auto operator<=>(const State&) const = default;
};

State encode_state(const Finding& f, const Asset& a, const Catalog& catalog);

struct RlConfig {
    double alpha = 0.1;
    double gamma = 0.9;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int episodes = 20000;
    int max_steps = 6;
    double lambda_disruption = 0.01;  // per simulated minute
    double lambda_compliance = 1.0;
    double lambda_side_effect = 0.2;  // per affected asset
    double resolve_reward = 1.0;

    void validate() const;  // ConfigInvalid
    static RlConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct Transition {
    State next;
    bool resolved = false;
    double disruption_minutes = 0.0;
    bool compliance_violation = false;
    int side_effects = 0;
    bool terminal = false;  // environment ended the episode
};

class TrainingEnvironment {
public:
    virtual ~TrainingEnvironment() = default;
    virtual State reset(Rng& rng) = 0;
    virtual Transition act(ActionKind a, Rng& rng) = 0;
};

// Episodes drawn uniformly from a scenario's training situations, each a
// vulnerability or an attack placed on one asset of a fresh copy of the
// environment.
class SimTrainingEnvironment final : public TrainingEnvironment {
public:
    struct Situation {
        std::string asset_id;
        std::optional<std::string> entry_id;
        std::optional<AttackKind> attack;
        std::string exploited_entry_id;
    };

    SimTrainingEnvironment(Environment base, std::vector<Situation> situations);
    // Situations from the scenario's training.situations array.
    static SimTrainingEnvironment from_scenario(const Environment& base, const nlohmann::json& scenario);

    State reset(Rng& rng) override;
    Transition act(ActionKind a, Rng& rng) override;

    const std::vector<Situation>& situations() const noexcept { return situations_; }
    State state_of(const Situation& s) const;

private:
    bool cause_cleared() const;

    Environment base_;
    std::optional<Environment> env_;
    std::vector<Situation> situations_;
    std::size_t current_ = 0;
};

class PolicyTable {
public:
    enum class Verdict : std::uint8_t { Reinforce, Penalize, Pin, Ban };

    double q(const State& s, ActionKind a) const { return q_[s.index()][action_index(a)]; }
    void set_q(const State& s, ActionKind a, double v) { q_[s.index()][action_index(a)] = v; }
    int visits(const State& s, ActionKind a) const { return visits_[s.index()][action_index(a)]; }
    int state_visits(const State& s) const;
    void add_visit(const State& s, ActionKind a) { ++visits_[s.index()][action_index(a)]; }

    bool banned(const State& s, ActionKind a) const { return bans_.count({s.index(), a}) != 0; }
    std::optional<ActionKind> pinned(const State& s) const;
    std::vector<ActionKind> allowed(const State& s) const;
    double shaping(const State& s, ActionKind a) const;

    // Highest Q among allowed actions; ties go to the lowest action index.
    std::optional<ActionKind> greedy(const State& s) const;
    double max_q(const State& s) const;  // 0 when nothing is allowed

    // Reinforce/Penalize add to Q now and to every future training reward
    // for (s, a). Pin/Ban throw PinBanConflict when they contradict.
    // Bumps the version.
    void feedback(const State& s, ActionKind a, Verdict v, double amount = 0.0);

    int version() const noexcept { return version_; }
    nlohmann::json& metadata() noexcept { return metadata_; }
    const nlohmann::json& metadata() const noexcept { return metadata_; }

    nlohmann::json to_json() const;
    static PolicyTable from_json(const nlohmann::json& j);
    static PolicyTable load(const std::filesystem::path& p);
    void save(const std::filesystem::path& p) const;
    bool operator==(const PolicyTable&) const = default;

private:
    std::array<std::array<double, kActionCount>, kStateCount> q_{};
    std::array<std::array<int, kActionCount>, kStateCount> visits_{};
    std::map<std::size_t, ActionKind> pins_;
    std::set<std::pair<std::size_t, ActionKind>> bans_;
    std::map<std::pair<std::size_t, ActionKind>, double> shaping_;
    int version_ = 1;
    nlohmann::json metadata_ = nlohmann::json::object();
};

SOAR_ENUM_NAMES(PolicyTable::Verdict, "Reinforce"sv, "Penalize"sv, "Pin"sv, "Ban"sv)

// Episodic Q-learning with linearly decaying epsilon. Continues from
// `start` (pins, bans and shaping included). Deterministic given seed.
PolicyTable train(TrainingEnvironment& env, const RlConfig& cfg, std::uint64_t seed, PolicyTable start = {});

PolicyTable sme_feedback(PolicyTable pt, const State& s, ActionKind a, PolicyTable::Verdict v,
                         double amount = 0.0);

enum class PlanStatus : std::uint8_t { Draft, PendingApproval, Approved, Rejected, Executed, Failed };
SOAR_ENUM_NAMES(PlanStatus, "Draft"sv, "PendingApproval"sv, "Approved"sv, "Rejected"sv, "Executed"sv,
                "Failed"sv)

struct PlanStep {
    ActionKind action = ActionKind::AlertOnly;
    std::map<std::string, std::string> params;
    bool operator==(const PlanStep&) const = default;
};

struct RemediationPlan {
    std::string plan_id;
    std::string finding_id;
    std::string asset_id;
    State state;
    std::vector<PlanStep> steps;
    ActionKind primary = ActionKind::AlertOnly;  // the learned (or pinned) step
    bool requires_approval = false;
    std::string source;  // "pin", "greedy" or "fallback"
    std::map<ActionKind, double> q_values;
    int policy_version = 0;
    PlanStatus status = PlanStatus::Draft;
    Tick created_tick = 0;
    int attempts = 0;

    std::vector<ActionKind> actions() const;
};

nlohmann::json to_json(const RemediationPlan& p);
RemediationPlan parse_plan(const nlohmann::json& j);

// Conditions beyond business_critical that force SME approval.
struct ApprovalTriggers {
    std::set<AssetClass> asset_classes;
    std::set<std::string> tags;
    std::set<ActionKind> actions;

    bool fires(const Asset& a, const std::vector<ActionKind>& actions) const;
    static ApprovalTriggers from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Builds the plan for an analyzed finding. The primary action is the pin,
// else the greedy action, else the first catalog hint for an unvisited
// state. High risk prefixes IsolateSegment; a patch or an isolation gets a
// trailing RestartService. Banned actions never appear. Finding moves to
// Planned, then AwaitingApproval when gated. Throws NoActionAvailable.
RemediationPlan map_finding(Finding& f, const Asset& a, const Catalog& catalog, const PolicyTable& pt,
                            const ApprovalTriggers& triggers, std::string plan_id, Tick tick);

}  // namespace soar
