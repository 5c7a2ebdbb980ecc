#include "soar/error.hpp"

namespace soar {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::UnknownMetric: return "UnknownMetric";
        case ErrorCode::IllegalValue: return "IllegalValue";
        case ErrorCode::MissingMetric: return "MissingMetric";
        case ErrorCode::DuplicateMetric: return "DuplicateMetric";
        case ErrorCode::CycleInDependencies: return "CycleInDependencies";
        case ErrorCode::UnknownCatalogEntry: return "UnknownCatalogEntry";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::UnknownAsset: return "UnknownAsset";
        case ErrorCode::ActionInapplicable: return "ActionInapplicable";
        case ErrorCode::AssetGone: return "AssetGone";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::PinBanConflict: return "PinBanConflict";
        case ErrorCode::NoActionAvailable: return "NoActionAvailable";
        case ErrorCode::TemplateMissing: return "TemplateMissing";
        case ErrorCode::ExecutionAborted: return "ExecutionAborted";
        case ErrorCode::ChainCorrupt: return "ChainCorrupt";
        case ErrorCode::ScenarioMismatch: return "ScenarioMismatch";
        case ErrorCode::UnknownPlan: return "UnknownPlan";
        case ErrorCode::AlreadyDecided: return "AlreadyDecided";
        case ErrorCode::UnknownFinding: return "UnknownFinding";
        case ErrorCode::Io: return "Io";
        case ErrorCode::Parse: return "Parse";
    }
    return "Unknown";
}

}  // namespace soar
