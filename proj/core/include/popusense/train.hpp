#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "popusense/pdc_core.hpp"
#include "popusense/popusense.hpp"
#include "popusense/synthdata.hpp"
#include "popusense/tensor.hpp"

namespace popusense::train {

/// The three experimental arms.
enum class Configuration { pdccore, narrow_popusense, wide_popusense };

std::string_view configuration_name(Configuration c) noexcept;
std::string_view display_name(Configuration c) noexcept;
Configuration parse_configuration(std::string_view s);

enum class LossKind { l1, l2 };

std::string_view loss_name(LossKind k) noexcept;
LossKind parse_loss(std::string_view s);

struct TrainConfig {
  Configuration configuration = Configuration::pdccore;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 5e-3;
  double momentum = 0.9;
  LossKind loss = LossKind::l2;
  std::uint64_t seed = 7;
  int latent_channels = 64;
  /// Keep the refiner's output projection at zero (identity refinement).
  bool freeze_output_projection = false;
  /// Present for the PopuSense arms only.
  std::optional<context::PopuSenseConfig> popusense;

  void validate() const;
};

struct EvalOptions {
  double smoothing_sigma = 2.0;
  double top_q = 0.02;

  friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

struct TrainStats {
  double initial_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> seconds;
};

/// Everything a checkpoint holds: the trained model, the refiner, the bank
/// snapshot and the metadata needed to evaluate without the config file.
struct ModelBundle {
  Configuration configuration = Configuration::pdccore;
  std::uint64_t seed = 0;
  std::string config_hash;
  EvalOptions eval;
  bool freeze_output_projection = false;
  pdc::ModelParams model;
  std::optional<context::PopuSenseConfig> popusense;
  context::RefinerParams refiner;
  context::MemoryBank bank;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Freshly initialized bundle for cfg; parameter streams are derived from
/// cfg.seed so every arm with the same seed starts from the same PDC.
ModelBundle initialize_bundle(const TrainConfig& cfg, int image_size);

struct OptimizerState {
  pdc::ModelParams model_velocity;
  context::RefinerParams refiner_velocity;
};

OptimizerState make_optimizer_state(const ModelBundle& bundle);

double reconstruction_loss(const Tensor4& x, const Tensor4& xhat, LossKind kind);

/// d reconstruction_loss / d xhat.
Tensor4 reconstruction_loss_grad(const Tensor4& x, const Tensor4& xhat, LossKind kind);

/// Stacks sample images into a B×1×S×S batch.
Tensor4 make_batch(std::span<const synth::LabeledSample> samples, std::span<const std::size_t> indices);

/// Inference path encode → refine → decode. The wide arm scores each sample
/// on its own against the frozen bank, so results do not depend on batching.
Tensor4 reconstruct(const ModelBundle& bundle, const Tensor4& x);

/// Mean reconstruction loss over samples through reconstruct().
double validation_loss(const ModelBundle& bundle, std::span<const synth::LabeledSample> samples,
                       LossKind kind, int batch_size);

/// One seeded pass of momentum SGD over data. Mutates bundle and opt.
/// Throws Error(AnomalyLeak) for non-normal samples and Error(NonFiniteLoss)
/// on divergence.
double train_epoch(ModelBundle& bundle, OptimizerState& opt,
                   std::span<const synth::LabeledSample> data, const TrainConfig& cfg, int epoch);

struct FitOptions {
  EvalOptions eval;
  std::string config_hash;
  std::optional<std::filesystem::path> stats_csv;
  std::function<void(int epoch, double train_loss, double val_loss, double seconds)> on_epoch;
};

TrainStats fit(const TrainConfig& cfg, const std::filesystem::path& dataset_dir,
               const std::filesystem::path& out_checkpoint, const FitOptions& options = {});

/// Same as fit() on an already-loaded dataset; returns the trained bundle.
ModelBundle fit_dataset(const TrainConfig& cfg, const synth::Dataset& data, const FitOptions& options,
                        TrainStats& stats);

void write_stats_csv(const std::filesystem::path& path, const TrainStats& stats);

}  // namespace popusense::train
