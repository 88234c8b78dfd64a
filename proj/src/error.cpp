#include "ris/error.hpp"

namespace ris {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingManifest: return "MissingManifest";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::NonContiguousLayout: return "NonContiguousLayout";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidBundle: return "InvalidBundle";
    case Errc::UnknownLayer: return "UnknownLayer";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::LayerMismatch: return "LayerMismatch";
    case Errc::ModeMismatch: return "ModeMismatch";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::NonPositiveTau: return "NonPositiveTau";
    case Errc::UnknownFeature: return "UnknownFeature";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::LayoutMismatch: return "LayoutMismatch";
    case Errc::DegenerateLayer: return "DegenerateLayer";
    case Errc::MissingActivations: return "MissingActivations";
    case Errc::BadK: return "BadK";
    case Errc::MissingPrediction: return "MissingPrediction";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::BadN: return "BadN";
    case Errc::InfeasiblePartition: return "InfeasiblePartition";
    case Errc::BadGroupSpec: return "BadGroupSpec";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace ris
