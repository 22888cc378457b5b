#include "popusense/error.hpp"

namespace popusense {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyEdge: return "EmptyEdge";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::NonPositiveWeight: return "NonPositiveWeight";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::IsolatedVertex: return "IsolatedVertex";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BankTooSmall: return "BankTooSmall";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::SizeTooSmall: return "SizeTooSmall";
    case Errc::ZeroDelta: return "ZeroDelta";
    case Errc::NoValidPlacement: return "NoValidPlacement";
    case Errc::ManifestMismatch: return "ManifestMismatch";
    case Errc::CorruptImage: return "CorruptImage";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::AnomalyLeak: return "AnomalyLeak";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::SingleClass: return "SingleClass";
    case Errc::NoPositives: return "NoPositives";
    case Errc::EmptyMasks: return "EmptyMasks";
    case Errc::ConflictingMetadata: return "ConflictingMetadata";
    case Errc::IoError: return "IoError";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace popusense
