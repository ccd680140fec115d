#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wmage {

/// Every failure the library reports carries one of these codes.
enum class Errc {
  // nifti_io
  BadMagic,
  BadHeader,
  UnsupportedDatatype,
  TruncatedData,
  UnsupportedRank,
  BigEndian,
  NonIntegerLabel,
  NegativeLabel,
  // volume_core / roi_features
  InvalidDims,
  GridMismatch,
  InvalidRoiTable,
  // autodiff_nn
  ShapeMismatch,
  EmptyOutput,
  DegenerateBatch,
  NoTape,
  MissingGrad,
  BadCheckpoint,
  // model_zoo
  InvalidSpec,
  KindMismatch,
  // experiment
  TooFewParticipants,
  UnknownRole,
  DuplicateId,
  DataMissing,
  EmptySet,
  DivergedLoss,
  ZeroVariance,
  LengthMismatch,
  EmptyInput,
  BadManifest,
  BadConfig,
  // phantom
  AgeOutOfRange,
  NoSignal,
  InvalidPhantomSpec,
  IoFailure,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace wmage
