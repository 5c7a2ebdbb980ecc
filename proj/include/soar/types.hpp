#pragma once

// Enumerations shared across the pipeline, with their textual names.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "soar/error.hpp"

namespace soar {

using Tick = std::int64_t;

enum class AssetClass : std::uint8_t { ScadaController, Plc, Hmi, Server, Workstation, Firewall, Database };
enum class Exposure : std::uint8_t { InternetFacing, InternalOnly, AirGapped };
enum class ProtocolSecurity : std::uint8_t { Legacy, Secure };
enum class AssetState : std::uint8_t { Healthy, Degraded, Compromised, Isolated, Down };
enum class AttackKind : std::uint8_t { Ransomware, Ddos, Apt, CredentialAttack, InsiderMisuse, LateralMovement };
enum class PriorityBand : std::uint8_t { High, MediumHigh, MediumLow };
enum class RiskBand : std::uint8_t { Low, Medium, High };

// The ten vulnerability kinds of the bundled catalog plus pure anomalies.
enum class VulnClass : std::uint8_t {
    UnpatchedSystems,
    Ransomware,
    WeakAuthentication,
    Ddos,
    Misconfiguration,
    AdvancedPersistentThreat,
    InsiderThreat,
    ImproperSegmentation,
    InsecureProtocols,
    InsufficientLogging,
    Anomaly,
};

enum class ActionKind : std::uint8_t {
    AutoPatch,
    VirtualPatch,
    IsolateSegment,
    RestoreBackup,
    BlockTraffic,
    EnforceMfaResetCreds,
    RateLimit,
    FixMisconfig,
    DisableUnusedPorts,
    UpgradeProtocol,
    AdjustPrivileges,
    EnableLoggingAlerting,
    RestartService,
    FirmwareUpgrade,
    AlertOnly,  // containment-only; never part of a learned policy
};

inline constexpr std::size_t kVulnClassCount = 11;
inline constexpr std::size_t kAssetClassCount = 7;
inline constexpr std::size_t kExposureCount = 3;
// Learnable remediation actions (AlertOnly excluded).
inline constexpr std::size_t kActionCount = 14;

// Lifecycle of a finding; the order of enumerators is the legal order.
enum class Lifecycle : std::uint8_t {
    Detected,
    Queued,
    Analyzed,
    Planned,
    AwaitingApproval,
    Remediating,
    Resolved,
    Failed,
    Rejected,
};

template <class E>
struct EnumNames;

#define SOAR_ENUM_NAMES(E, ...)                                               \
    template <>                                                               \
    struct EnumNames<E> {                                                     \
        static constexpr std::array names = {__VA_ARGS__};                    \
    };

using namespace std::string_view_literals;

SOAR_ENUM_NAMES(AssetClass, "ScadaController"sv, "Plc"sv, "Hmi"sv, "Server"sv, "Workstation"sv,
                "Firewall"sv, "Database"sv)
SOAR_ENUM_NAMES(Exposure, "InternetFacing"sv, "InternalOnly"sv, "AirGapped"sv)
SOAR_ENUM_NAMES(ProtocolSecurity, "Legacy"sv, "Secure"sv)
SOAR_ENUM_NAMES(AssetState, "Healthy"sv, "Degraded"sv, "Compromised"sv, "Isolated"sv, "Down"sv)
SOAR_ENUM_NAMES(AttackKind, "Ransomware"sv, "Ddos"sv, "Apt"sv, "CredentialAttack"sv,
                "InsiderMisuse"sv, "LateralMovement"sv)
SOAR_ENUM_NAMES(PriorityBand, "High"sv, "MediumHigh"sv, "MediumLow"sv)
SOAR_ENUM_NAMES(RiskBand, "Low"sv, "Medium"sv, "High"sv)
SOAR_ENUM_NAMES(VulnClass, "UnpatchedSystems"sv, "Ransomware"sv, "WeakAuthentication"sv, "Ddos"sv,
                "Misconfiguration"sv, "AdvancedPersistentThreat"sv, "InsiderThreat"sv,
                "ImproperSegmentation"sv, "InsecureProtocols"sv, "InsufficientLogging"sv,
                "Anomaly"sv)
SOAR_ENUM_NAMES(ActionKind, "AutoPatch"sv, "VirtualPatch"sv, "IsolateSegment"sv, "RestoreBackup"sv,
                "BlockTraffic"sv, "EnforceMfaResetCreds"sv, "RateLimit"sv, "FixMisconfig"sv,
                "DisableUnusedPorts"sv, "UpgradeProtocol"sv, "AdjustPrivileges"sv,
                "EnableLoggingAlerting"sv, "RestartService"sv, "FirmwareUpgrade"sv, "AlertOnly"sv)
SOAR_ENUM_NAMES(Lifecycle, "Detected"sv, "Queued"sv, "Analyzed"sv, "Planned"sv,
                "AwaitingApproval"sv, "Remediating"sv, "Resolved"sv, "Failed"sv, "Rejected"sv)

template <class E>
constexpr std::string_view name_of(E e) {
    return EnumNames<E>::names[static_cast<std::size_t>(e)];
}

template <class E>
constexpr std::size_t enum_count() {
    return EnumNames<E>::names.size();
}

template <class E>
E parse_enum(std::string_view text) {
    const auto& names = EnumNames<E>::names;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == text) return static_cast<E>(i);
    }
    throw Error(ErrorCode::Parse, "unknown enum value '" + std::string(text) + "'");
}

template <class E>
    requires requires { EnumNames<E>::names; }
void to_json(nlohmann::json& j, E e) {
    j = std::string(name_of(e));
}

template <class E>
    requires requires { EnumNames<E>::names; }
void from_json(const nlohmann::json& j, E& e) {
    e = parse_enum<E>(j.get<std::string>());
}

inline bool is_terminal(Lifecycle l) {
    return l == Lifecycle::Resolved || l == Lifecycle::Failed || l == Lifecycle::Rejected;
}

// Index of an action in the learnable set; AlertOnly has none.
inline constexpr std::size_t action_index(ActionKind a) { return static_cast<std::size_t>(a); }
inline constexpr ActionKind action_at(std::size_t i) { return static_cast<ActionKind>(i); }

}  // namespace soar
