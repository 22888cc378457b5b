#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "popusense/checkpoint.hpp"
#include "popusense/error.hpp"
#include "popusense/train.hpp"

using namespace popusense;
using namespace popusense::train;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::IoError;
}

Tensor4 random_images(int n, int s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor4 x(n, 1, s, s);
  for (auto& v : x.data) v = u(rng);
  return x;
}

std::vector<synth::LabeledSample> normals(int n, int size, std::uint64_t seed) {
  std::vector<synth::LabeledSample> out;
  for (int i = 0; i < n; ++i)
    out.push_back(synth::normal_sample(synth::make_phantom(seed + i, size), seed + i));
  return out;
}

synth::Dataset small_data(int train_n = 8, int size = 32) {
  synth::Dataset d;
  d.image_size = size;
  d.train = normals(train_n, size, 100);
  d.val = normals(4, size, 900);
  return d;
}

TrainConfig small_config(Configuration c, int epochs = 1) {
  TrainConfig cfg;
  cfg.configuration = c;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.latent_channels = 8;
  if (c == Configuration::narrow_popusense) cfg.popusense = context::PopuSenseConfig::defaults(context::Variant::narrow);
  if (c == Configuration::wide_popusense) {
    cfg.popusense = context::PopuSenseConfig::defaults(context::Variant::wide);
    cfg.popusense->k = 3;
    cfg.popusense->bank_capacity = 16;
  }
  return cfg;
}

}  // namespace

TEST(Loss, Examples) {
  const auto x = random_images(2, 8, 1);
  EXPECT_EQ(reconstruction_loss(x, x, LossKind::l2), 0.0);
  EXPECT_EQ(reconstruction_loss(x, x, LossKind::l1), 0.0);
  Tensor4 shifted = x;
  for (auto& v : shifted.data) v += 0.5;
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, shifted, LossKind::l2), 0.25);
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, shifted, LossKind::l1), 0.5);
}

TEST(Loss, L1MatchesElementwiseMean) {
  const auto x = random_images(3, 8, 2), y = random_images(3, 8, 3);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(x.data[i] - y.data[i]);
  EXPECT_NEAR(reconstruction_loss(x, y, LossKind::l1), sum / static_cast<double>(x.size()), 1e-12);
  EXPECT_EQ(code_of([&] { reconstruction_loss(x, random_images(2, 8, 1), LossKind::l1); }), Errc::ShapeMismatch);
}

TEST(Loss, GradientMatchesCentralDifferences) {
  const auto x = random_images(2, 4, 4), y = random_images(2, 4, 5);
  for (auto kind : {LossKind::l1, LossKind::l2}) {
    const auto g = reconstruction_loss_grad(x, y, kind);
    for (std::size_t i = 0; i < y.size(); ++i) {
      Tensor4 up = y, down = y;
      up.data[i] += 1e-6;
      down.data[i] -= 1e-6;
      const double fd = (reconstruction_loss(x, up, kind) - reconstruction_loss(x, down, kind)) / 2e-6;
      EXPECT_LT(oracle::grad_rel_error(g.data[i], fd), 1e-6);
    }
  }
}

TEST(TrainEpoch, ZeroLearningRateKeepsParametersButFillsBank) {
  const auto data = small_data();
  auto cfg = small_config(Configuration::wide_popusense);
  cfg.learning_rate = 0.0;
  auto bundle = initialize_bundle(cfg, data.image_size);
  const auto before = bundle;
  auto opt = make_optimizer_state(bundle);
  train_epoch(bundle, opt, data.train, cfg, 0);
  EXPECT_EQ(bundle.model, before.model);
  EXPECT_EQ(bundle.refiner, before.refiner);
  EXPECT_EQ(bundle.bank.count(), 8u);
  EXPECT_NE(bundle.bank, before.bank);
}

TEST(TrainEpoch, PdcAndFreshNarrowGiveSameLossAtZeroLearningRate) {
  const auto data = small_data();
  auto base = small_config(Configuration::pdccore);
  auto narrow = small_config(Configuration::narrow_popusense);
  base.learning_rate = narrow.learning_rate = 0.0;
  auto b1 = initialize_bundle(base, data.image_size), b2 = initialize_bundle(narrow, data.image_size);
  auto o1 = make_optimizer_state(b1), o2 = make_optimizer_state(b2);
  EXPECT_EQ(train_epoch(b1, o1, data.train, base, 0), train_epoch(b2, o2, data.train, narrow, 0));
}

TEST(TrainEpoch, FrozenArmsTrainExactlyLikeBaseline) {
  const auto data = small_data();
  FitOptions opts;
  TrainStats s0, s1, s2;
  const auto base = fit_dataset(small_config(Configuration::pdccore, 2), data, opts, s0);
  auto narrow = small_config(Configuration::narrow_popusense, 2);
  auto wide = small_config(Configuration::wide_popusense, 2);
  narrow.freeze_output_projection = wide.freeze_output_projection = true;
  const auto bn = fit_dataset(narrow, data, opts, s1);
  const auto bw = fit_dataset(wide, data, opts, s2);
  EXPECT_EQ(bn.model, base.model);
  EXPECT_EQ(bw.model, base.model);
  EXPECT_EQ(s1.train_loss, s0.train_loss);
  EXPECT_EQ(s2.val_loss, s0.val_loss);
  const auto x = make_batch(data.val, std::vector<std::size_t>{0, 1, 2, 3});
  EXPECT_EQ(reconstruct(bw, x), reconstruct(base, x));
}

TEST(TrainEpoch, UnfrozenRefinerLearns) {
  const auto data = small_data();
  FitOptions opts;
  TrainStats stats;
  const auto cfg = small_config(Configuration::narrow_popusense, 2);
  const auto trained = fit_dataset(cfg, data, opts, stats);
  EXPECT_NE(trained.refiner, initialize_bundle(cfg, data.image_size).refiner);
}

TEST(TrainEpoch, RejectsAnomalousSamples) {
  auto data = small_data();
  const auto ph = synth::make_phantom(5, 32);
  data.train.push_back(synth::inject_contrast_anomaly(ph, 6));
  const auto cfg = small_config(Configuration::pdccore);
  auto bundle = initialize_bundle(cfg, 32);
  auto opt = make_optimizer_state(bundle);
  EXPECT_EQ(code_of([&] { train_epoch(bundle, opt, data.train, cfg, 0); }), Errc::AnomalyLeak);
}

TEST(TrainEpoch, DivergenceIsReported) {
  const auto data = small_data();
  auto cfg = small_config(Configuration::pdccore, 20);
  cfg.learning_rate = 1e300;
  FitOptions opts;
  TrainStats stats;
  EXPECT_EQ(code_of([&] { fit_dataset(cfg, data, opts, stats); }), Errc::NonFiniteLoss);
}

TEST(TrainEpoch, OverfitsSingleSample) {
  synth::Dataset data;
  data.image_size = 64;
  data.train = normals(1, 64, 42);
  data.val = data.train;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e-2;
  cfg.loss = LossKind::l2;
  TrainStats stats;
  fit_dataset(cfg, data, {}, stats);
  ASSERT_EQ(stats.train_loss.size(), 50u);
  int decreases = 0;
  for (std::size_t i = 1; i < stats.train_loss.size(); ++i) decreases += stats.train_loss[i] < stats.train_loss[i - 1];
  EXPECT_GE(decreases, 45);
}

TEST(TrainEpoch, ReconstructsConstantImages) {
  synth::Dataset data;
  data.image_size = 32;
  synth::LabeledSample s;
  s.image = Image(32, 0.5);
  s.mask = Mask(32);
  data.train.assign(16, s);
  data.val.assign(2, s);
  auto cfg = small_config(Configuration::pdccore, 30);
  cfg.learning_rate = 2e-2;
  TrainStats stats;
  const auto bundle = fit_dataset(cfg, data, {}, stats);
  const auto x = make_batch(data.val, std::vector<std::size_t>{0});
  const auto xhat = reconstruct(bundle, x);
  for (double v : xhat.data) EXPECT_LT(std::abs(v - 0.5), 0.05);
}

TEST(Fit, ZeroEpochsWritesInitialization) {
  oracle::TempDir dir("fit0");
  synth::DatasetSpec spec;
  spec.n_train_normal = 4;
  spec.n_val_normal = spec.n_test_normal = 2;
  spec.n_test_contrast = spec.n_test_texture = 1;
  spec.image_size = 32;
  synth::build_dataset(spec, dir / "data");
  auto cfg = small_config(Configuration::wide_popusense, 0);
  FitOptions opts;
  opts.stats_csv = dir / "stats.csv";
  const auto stats = fit(cfg, dir / "data", dir / "a.ckpt", opts);
  EXPECT_TRUE(stats.train_loss.empty());
  save_checkpoint(dir / "init.ckpt", initialize_bundle(cfg, 32));
  EXPECT_EQ(oracle::read_bytes(dir / "a.ckpt"), oracle::read_bytes(dir / "init.ckpt"));
  std::ifstream csv(dir / "stats.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 1);
}

TEST(Fit, ReproducibleAndReloadable) {
  oracle::TempDir dir("fit-rep");
  synth::DatasetSpec spec;
  spec.n_train_normal = 8;
  spec.n_val_normal = 4;
  spec.n_test_normal = 2;
  spec.n_test_contrast = spec.n_test_texture = 1;
  spec.image_size = 32;
  synth::build_dataset(spec, dir / "data");
  const auto cfg = small_config(Configuration::wide_popusense, 2);
  FitOptions opts;
  opts.config_hash = "feedfacecafebeef";
  const auto s1 = fit(cfg, dir / "data", dir / "a.ckpt", opts);
  const auto s2 = fit(cfg, dir / "data", dir / "b.ckpt", opts);
  EXPECT_EQ(oracle::read_bytes(dir / "a.ckpt"), oracle::read_bytes(dir / "b.ckpt"));
  EXPECT_EQ(s1.train_loss, s2.train_loss);
  EXPECT_EQ(s1.val_loss, s2.val_loss);
  ASSERT_EQ(s1.val_loss.size(), 2u);
  EXPECT_LT(s1.val_loss.back(), s1.initial_val_loss);

  const auto loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(loaded.config_hash, "feedfacecafebeef");
  EXPECT_EQ(loaded.bank.count(), 16u);
  const auto data = synth::load_dataset(dir / "data");
  EXPECT_NEAR(validation_loss(loaded, data.val, cfg.loss, cfg.batch_size), s1.val_loss.back(), 1e-6);
}

TEST(Reconstruct, WideInferenceIgnoresBatchComposition) {
  const auto data = small_data();
  FitOptions opts;
  TrainStats stats;
  auto cfg = small_config(Configuration::wide_popusense, 1);
  const auto bundle = fit_dataset(cfg, data, opts, stats);
  const auto all = reconstruct(bundle, make_batch(data.val, std::vector<std::size_t>{0, 1, 2, 3}));
  const auto one = reconstruct(bundle, make_batch(data.val, std::vector<std::size_t>{2}));
  EXPECT_TRUE(std::equal(one.data.begin(), one.data.end(), all.sample(2).begin()));
}

TEST(Reconstruct, WideWithShortBankUsesPlainLatent) {
  const auto data = small_data();
  const auto cfg = small_config(Configuration::wide_popusense);
  auto bundle = initialize_bundle(cfg, 32);
  bundle.refiner.layers.back().theta.setConstant(0.1);
  bundle.refiner.layers.back().bias.setConstant(0.1);
  const auto x = make_batch(data.val, std::vector<std::size_t>{0, 1});
  const auto plain = pdc::decode(pdc::encode(x, bundle.model), bundle.model);
  EXPECT_EQ(reconstruct(bundle, x).data, plain.data);
  for (int i = 0; i < 3; ++i) bundle.bank.push(context::pool_latent(pdc::encode(x, bundle.model)).topRows(1));
  EXPECT_NE(reconstruct(bundle, x).data, plain.data);
}

TEST(TrainConfigCheck, WideBatchMustExceedK) {
  auto cfg = small_config(Configuration::wide_popusense);
  cfg.batch_size = 3;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), Errc::InvalidConfig);
}
