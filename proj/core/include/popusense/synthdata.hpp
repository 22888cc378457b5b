#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "popusense/tensor.hpp"

namespace popusense::synth {

struct Phantom {
  Image image;
  Mask foreground;
};

enum class Label { normal, anomalous };
enum class AnomalyType { none, contrast, texture };

std::string_view label_name(Label l) noexcept;
std::string_view anomaly_type_name(AnomalyType t) noexcept;
Label parse_label(std::string_view s);
AnomalyType parse_anomaly_type(std::string_view s);

struct LabeledSample {
  Image image;
  Mask mask;
  Label label = Label::normal;
  AnomalyType anomaly_type = AnomalyType::none;
  std::uint64_t seed = 0;
};

/// Blob radii are fractions of the image size.
struct ContrastParams {
  double radius_min = 0.06;
  double radius_max = 0.12;
  double delta_min = 0.2;
  double delta_max = 0.4;
};

struct TextureParams {
  double radius_min = 0.06;
  double radius_max = 0.12;
  double noise_sigma = 0.15;
  double grain = 2.0;  // pixels
};

struct DatasetSpec {
  int n_train_normal = 512;
  int n_val_normal = 64;
  int n_test_normal = 64;
  int n_test_contrast = 64;
  int n_test_texture = 64;
  int image_size = 64;
  std::uint64_t master_seed = 20240601;
  ContrastParams contrast;
  TextureParams texture;

  int total() const noexcept {
    return n_train_normal + n_val_normal + n_test_normal + n_test_contrast + n_test_texture;
  }
};

struct ManifestRow {
  std::string path;  // image path relative to the dataset root
  std::string split;
  Label label = Label::normal;
  AnomalyType anomaly_type = AnomalyType::none;
  std::uint64_t seed = 0;
};

using Manifest = std::vector<ManifestRow>;

struct Dataset {
  int image_size = 0;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::vector<LabeledSample> test;
};

inline constexpr std::string_view kManifestHeader = "path,split,label,anomaly_type,seed";

/// Ellipse body (~0.7, low-frequency modulation) over a smooth ~0.2
/// background with sigma 0.01 pixel noise. Deterministic in (seed, size).
Phantom make_phantom(std::uint64_t seed, int size);

/// Signed intensity shift inside a random blob of 1-3 overlapping discs.
LabeledSample inject_contrast_anomaly(const Phantom& ph, std::uint64_t seed,
                                      const ContrastParams& params = {});

/// Replaces the blob by its 7×7 local mean plus 7-periodic band-pass noise, keeping
/// the local mean while changing texture.
LabeledSample inject_texture_anomaly(const Phantom& ph, std::uint64_t seed,
                                     const TextureParams& params = {});

LabeledSample normal_sample(const Phantom& ph, std::uint64_t seed);

/// Writes {train,val,test}/{images,masks}/NNNNN.png and manifest.csv.
Manifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& dir);

Manifest read_manifest(const std::filesystem::path& dir);

}  // namespace popusense::synth
