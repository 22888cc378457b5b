#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace popusense {

/// Failure categories raised by the library. Each value names one
/// contract violation; callers switch on the code rather than parse text.
enum class Errc {
  // hypergraph
  EmptyEdge,
  IndexOutOfRange,
  NonPositiveWeight,
  KTooLarge,
  EmptyInput,
  IsolatedVertex,
  ShapeMismatch,
  // popusense
  BankTooSmall,
  InvalidConfig,
  // synthdata
  SizeTooSmall,
  ZeroDelta,
  NoValidPlacement,
  ManifestMismatch,
  CorruptImage,
  // train
  NonFiniteLoss,
  AnomalyLeak,
  VersionMismatch,
  CorruptCheckpoint,
  // evalkit
  SingleClass,
  NoPositives,
  EmptyMasks,
  ConflictingMetadata,
  // shared
  IoError,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace popusense
