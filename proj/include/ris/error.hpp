#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ris {

enum class Errc {
  // tensor store
  MissingManifest,
  ShapeMismatch,
  UnsupportedVersion,
  NonContiguousLayout,
  IoFailure,
  InvalidBundle,
  UnknownLayer,
  // clustering
  TooFewPoints,
  DegenerateInput,
  LayerMismatch,
  // attribution / transfer
  ModeMismatch,
  EmptyBatch,
  NonPositiveTau,
  UnknownFeature,
  LengthMismatch,
  // retrieval
  LayoutMismatch,
  DegenerateLayer,
  MissingActivations,
  BadK,
  // evaluation
  MissingPrediction,
  EmptyGroup,
  BadN,
  // toy generator
  InfeasiblePartition,
  BadGroupSpec,
  // generic
  InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

/// Every module error carries a machine-checkable code plus a context message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ris
