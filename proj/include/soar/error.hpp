#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace soar {

enum class ErrorCode {
    // cvss
    UnknownMetric,
    IllegalValue,
    MissingMetric,
    DuplicateMetric,
    // simulation environment
    CycleInDependencies,
    UnknownCatalogEntry,
    InvariantViolation,
    UnknownAsset,
    ActionInapplicable,
    // analyzer
    AssetGone,
    // mapper
    ConfigInvalid,
    PinBanConflict,
    NoActionAvailable,
    // executor
    TemplateMissing,
    ExecutionAborted,
    // audit
    ChainCorrupt,
    ScenarioMismatch,
    // orchestrator
    UnknownPlan,
    AlreadyDecided,
    UnknownFinding,
    Io,
    Parse,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail),
          code_(code),
          detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    // The offending token, asset id, rule name, ... depending on the code.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace soar
