#include "popusense/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "popusense/checkpoint.hpp"
#include "popusense/error.hpp"
#include "popusense/rng.hpp"

namespace popusense::train {

namespace {

enum SeedStream : std::uint64_t { kModelInit = 0x40DE1, kRefinerInit = 0x2EF1, kShuffle = 0x5BF1 };

}  // namespace

std::string_view configuration_name(Configuration c) noexcept {
  switch (c) {
    case Configuration::pdccore: return "pdccore";
    case Configuration::narrow_popusense: return "narrow_popusense";
    case Configuration::wide_popusense: return "wide_popusense";
  }
  return "pdccore";
}

std::string_view display_name(Configuration c) noexcept {
  switch (c) {
    case Configuration::pdccore: return "PDCCore";
    case Configuration::narrow_popusense: return "Narrow PopuSense";
    case Configuration::wide_popusense: return "Wide PopuSense";
  }
  return "PDCCore";
}

Configuration parse_configuration(std::string_view s) {
  if (s == "pdccore") return Configuration::pdccore;
  if (s == "narrow_popusense") return Configuration::narrow_popusense;
  if (s == "wide_popusense") return Configuration::wide_popusense;
  throw Error(Errc::InvalidConfig, "unknown configuration '" + std::string(s) + "'");
}

std::string_view loss_name(LossKind k) noexcept { return k == LossKind::l1 ? "l1" : "l2"; }

LossKind parse_loss(std::string_view s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2") return LossKind::l2;
  throw Error(Errc::InvalidConfig, "unknown loss '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(Errc::InvalidConfig, "epochs must be >= 0");
  if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(Errc::InvalidConfig, "learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::InvalidConfig, "momentum must lie in [0, 1)");
  if (latent_channels < 1) throw Error(Errc::InvalidConfig, "latent_channels must be >= 1");
  const bool needs_context = configuration != Configuration::pdccore;
  if (needs_context != popusense.has_value())
    throw Error(Errc::InvalidConfig, "PopuSense settings must be present exactly for the PopuSense arms");
  if (popusense) {
    popusense->validate();
    const auto expected = configuration == Configuration::narrow_popusense ? context::Variant::narrow
                                                                           : context::Variant::wide;
    if (popusense->variant != expected) throw Error(Errc::InvalidConfig, "PopuSense variant does not match arm");
    if (expected == context::Variant::wide && popusense->bank_capacity < static_cast<std::size_t>(batch_size))
      throw Error(Errc::InvalidConfig, "bank_capacity must be >= batch_size for the wide arm");
    if (expected == context::Variant::wide && static_cast<std::size_t>(batch_size) <= popusense->k)
      throw Error(Errc::InvalidConfig, "batch_size must exceed popusense.k for the wide arm");
  }
}

ModelBundle initialize_bundle(const TrainConfig& cfg, int image_size) {
  cfg.validate();
  ModelBundle b;
  b.configuration = cfg.configuration;
  b.seed = cfg.seed;
  b.freeze_output_projection = cfg.freeze_output_projection;
  b.model = pdc::ModelParams::initialize(image_size, cfg.latent_channels, derive_seed(cfg.seed, kModelInit));
  b.popusense = cfg.popusense;
  if (cfg.popusense) {
    b.refiner = context::RefinerParams::initialize(cfg.latent_channels, cfg.popusense->layers,
                                                   derive_seed(cfg.seed, kRefinerInit));
    if (cfg.popusense->variant == context::Variant::wide)
      b.bank = context::MemoryBank(cfg.popusense->bank_capacity, cfg.latent_channels);
  }
  return b;
}

OptimizerState make_optimizer_state(const ModelBundle& bundle) {
  return {bundle.model.zeros_like(), bundle.refiner.zeros_like()};
}

double reconstruction_loss(const Tensor4& x, const Tensor4& xhat, LossKind kind) {
  require_same_shape(x, xhat, "reconstruction_loss inputs differ in shape");
  if (x.size() == 0) throw Error(Errc::ShapeMismatch, "empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = xhat.data[i] - x.data[i];
    total += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  return total / static_cast<double>(x.size());
}

Tensor4 reconstruction_loss_grad(const Tensor4& x, const Tensor4& xhat, LossKind kind) {
  require_same_shape(x, xhat, "reconstruction_loss inputs differ in shape");
  Tensor4 g(x.n, x.c, x.h, x.w);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = xhat.data[i] - x.data[i];
    g.data[i] = kind == LossKind::l1 ? (d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0)) : 2.0 * d * inv;
  }
  return g;
}

Tensor4 make_batch(std::span<const synth::LabeledSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(Errc::ShapeMismatch, "empty batch");
  const int size = samples[indices.front()].image.size;
  Tensor4 x(static_cast<int>(indices.size()), 1, size, size);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = samples[indices[i]].image;
    if (img.size != size) throw Error(Errc::ShapeMismatch, "batch images differ in size");
    std::copy(img.pixels.begin(), img.pixels.end(), x.sample(static_cast<int>(i)).begin());
  }
  return x;
}

Tensor4 reconstruct(const ModelBundle& bundle, const Tensor4& x) {
  Tensor4 z = pdc::encode(x, bundle.model);
  if (!bundle.popusense) return pdc::decode(z, bundle.model);
  if (bundle.popusense->variant == context::Variant::narrow)
    return pdc::decode(context::refine_narrow(z, *bundle.popusense, bundle.refiner), bundle.model);

  // A bank that cannot yet supply k neighbours gives no context; fall back to the plain latent.
  if (bundle.bank.count() + 1 <= bundle.popusense->k) return pdc::decode(z, bundle.model);
  Tensor4 refined = z;
  Tensor4 one(1, z.c, z.h, z.w);
  for (int b = 0; b < z.n; ++b) {
    std::copy(z.sample(b).begin(), z.sample(b).end(), one.data.begin());
    const Tensor4 r = context::refine_wide(one, bundle.bank, *bundle.popusense, bundle.refiner);
    std::copy(r.data.begin(), r.data.end(), refined.sample(b).begin());
  }
  return pdc::decode(refined, bundle.model);
}

double validation_loss(const ModelBundle& bundle, std::span<const synth::LabeledSample> samples,
                       LossKind kind, int batch_size) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      idx.push_back(i);
    const Tensor4 x = make_batch(samples, idx);
    total += reconstruction_loss(x, reconstruct(bundle, x), kind) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

template <class Params>
void sgd_step(Params& params, Params& velocity, const Params& grads, double lr, double momentum,
              std::size_t skip_from) {
  auto p = params.params();
  auto v = velocity.params();
  const auto g = grads.params();
  for (std::size_t i = 0; i < p.size() && i < skip_from; ++i)
    for (std::size_t j = 0; j < p[i].values.size(); ++j) {
      v[i].values[j] = momentum * v[i].values[j] + g[i].values[j];
      p[i].values[j] -= lr * v[i].values[j];
    }
}

}  // namespace

double train_epoch(ModelBundle& bundle, OptimizerState& opt, std::span<const synth::LabeledSample> data,
                   const TrainConfig& cfg, int epoch) {
  for (const auto& s : data)
    if (s.label != synth::Label::normal)
      throw Error(Errc::AnomalyLeak, "training data must contain normal samples only");
  if (data.empty()) throw Error(Errc::EmptyInput, "no training samples");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, kShuffle, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  const bool refine = bundle.popusense.has_value();
  // Parameter blocks of the output projection (theta, bias) are the last two.
  const std::size_t refiner_blocks = bundle.refiner.layers.size() * 2;
  const std::size_t refiner_trainable = bundle.freeze_output_projection ? refiner_blocks - 2 : refiner_blocks;

  double loss_sum = 0.0;
  int batches = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
    const Tensor4 x = make_batch(data, idx);

    pdc::EncoderTrace enc;
    const Tensor4 z = pdc::encode(x, bundle.model, enc);
    context::RefineTrace ref;
    const Tensor4 zr = refine ? context::refine_traced(z, bundle.bank, *bundle.popusense, bundle.refiner, ref) : z;
    pdc::DecoderTrace dec;
    const Tensor4 xhat = pdc::decode(zr, bundle.model, dec);

    const double loss = reconstruction_loss(x, xhat, cfg.loss);
    if (!std::isfinite(loss))
      throw Error(Errc::NonFiniteLoss, "loss became non-finite in epoch " + std::to_string(epoch));

    pdc::ModelParams model_grad = bundle.model.zeros_like();
    const Tensor4 d_zr = pdc::decode_backward(dec, bundle.model, reconstruction_loss_grad(x, xhat, cfg.loss), model_grad);
    Tensor4 d_z = d_zr;
    if (refine) {
      context::RefinerParams refiner_grad = bundle.refiner.zeros_like();
      d_z = context::refine_backward(ref, bundle.refiner, d_zr, refiner_grad);
      sgd_step(bundle.refiner, opt.refiner_velocity, refiner_grad, cfg.learning_rate, cfg.momentum,
               refiner_trainable);
    }
    pdc::encode_backward(enc, bundle.model, d_z, model_grad);
    sgd_step(bundle.model, opt.model_velocity, model_grad, cfg.learning_rate, cfg.momentum,
             static_cast<std::size_t>(-1));

    if (refine && bundle.popusense->variant == context::Variant::wide) bundle.bank.push(context::pool_latent(z));

    loss_sum += loss;
    ++batches;
  }
  const double epoch_loss = loss_sum / batches;
  if (!std::isfinite(epoch_loss)) throw Error(Errc::NonFiniteLoss, "epoch loss is non-finite");
  return epoch_loss;
}

ModelBundle fit_dataset(const TrainConfig& cfg, const synth::Dataset& data, const FitOptions& options,
                        TrainStats& stats) {
  cfg.validate();
  if (data.train.empty()) throw Error(Errc::EmptyInput, "dataset has no training samples");
  ModelBundle bundle = initialize_bundle(cfg, data.image_size);
  bundle.config_hash = options.config_hash;
  bundle.eval = options.eval;
  OptimizerState opt = make_optimizer_state(bundle);

  stats = TrainStats{};
  stats.initial_val_loss = validation_loss(bundle, data.val, cfg.loss, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double train_loss = train_epoch(bundle, opt, data.train, cfg, epoch);
    const double val_loss = validation_loss(bundle, data.val, cfg.loss, cfg.batch_size);
    if (!std::isfinite(val_loss)) throw Error(Errc::NonFiniteLoss, "validation loss is non-finite");
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stats.train_loss.push_back(train_loss);
    stats.val_loss.push_back(val_loss);
    stats.seconds.push_back(seconds);
    if (options.on_epoch) options.on_epoch(epoch + 1, train_loss, val_loss, seconds);
  }
  return bundle;
}

TrainStats fit(const TrainConfig& cfg, const std::filesystem::path& dataset_dir,
               const std::filesystem::path& out_checkpoint, const FitOptions& options) {
  const synth::Dataset data = synth::load_dataset(dataset_dir);
  TrainStats stats;
  const ModelBundle bundle = fit_dataset(cfg, data, options, stats);
  save_checkpoint(out_checkpoint, bundle);
  if (options.stats_csv) write_stats_csv(*options.stats_csv, stats);
  return stats;
}

void write_stats_csv(const std::filesystem::path& path, const TrainStats& stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,seconds\n";
  char buf[128];
  for (std::size_t i = 0; i < stats.train_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.3f\n", i + 1, stats.train_loss[i], stats.val_loss[i],
                  stats.seconds[i]);
    out << buf;
  }
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

}  // namespace popusense::train
