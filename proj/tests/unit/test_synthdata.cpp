#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "popusense/error.hpp"
#include "popusense/png_io.hpp"
#include "popusense/synthdata.hpp"

using namespace popusense;
using namespace popusense::synth;

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

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

/// 7×7 window mean with half-sample symmetric borders.
double window_mean(const Image& img, int y, int x) {
  double s = 0.0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) s += img.at(reflect(y + dy, img.size), reflect(x + dx, img.size));
  return s / 49.0;
}

bool window_inside(const Mask& m, int y, int x) {
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      const int yy = y + dy, xx = x + dx;
      if (yy < 0 || xx < 0 || yy >= m.size || xx >= m.size || !m.at(yy, xx)) return false;
    }
  return true;
}

void expect_local(const Phantom& ph, const LabeledSample& s) {
  ASSERT_GT(s.mask.count(), 0u);
  for (std::size_t i = 0; i < s.mask.bits.size(); ++i) {
    if (!s.mask.bits[i]) EXPECT_EQ(s.image.pixels[i], ph.image.pixels[i]);
    if (s.mask.bits[i]) EXPECT_TRUE(ph.foreground.bits[i]);
  }
}

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.n_train_normal = 4;
  spec.n_val_normal = 2;
  spec.n_test_normal = 3;
  spec.n_test_contrast = 2;
  spec.n_test_texture = 2;
  spec.image_size = 32;
  return spec;
}

}  // namespace

TEST(Phantom, DeterministicAndSeedDependent) {
  EXPECT_EQ(make_phantom(5, 64).image, make_phantom(5, 64).image);
  EXPECT_EQ(make_phantom(5, 64).foreground, make_phantom(5, 64).foreground);
  EXPECT_NE(make_phantom(5, 64).foreground, make_phantom(6, 64).foreground);
}

TEST(Phantom, SizeTooSmall) {
  EXPECT_EQ(code_of([] { make_phantom(1, 31); }), Errc::SizeTooSmall);
  EXPECT_NO_THROW(make_phantom(1, 32));
}

TEST(Phantom, ForegroundFractionAndRange) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto ph = make_phantom(seed, 64);
    const double frac = static_cast<double>(ph.foreground.count()) / (64.0 * 64.0);
    EXPECT_GE(frac, 0.15) << seed;
    EXPECT_LE(frac, 0.55) << seed;
    for (double v : ph.image.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ContrastAnomaly, ZeroDeltaRejected) {
  ContrastParams p;
  p.delta_min = p.delta_max = 0.0;
  EXPECT_EQ(code_of([&] { inject_contrast_anomaly(make_phantom(1, 64), 2, p); }), Errc::ZeroDelta);
}

TEST(ContrastAnomaly, LocalAndVisible) {
  int visible = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto ph = make_phantom(seed, 64);
    const auto s = inject_contrast_anomaly(ph, seed * 7 + 1);
    expect_local(ph, s);
    EXPECT_EQ(s.label, Label::anomalous);
    EXPECT_EQ(s.anomaly_type, AnomalyType::contrast);
    double shift = 0.0;
    for (std::size_t i = 0; i < s.mask.bits.size(); ++i)
      if (s.mask.bits[i]) shift += std::abs(s.image.pixels[i] - ph.image.pixels[i]);
    visible += shift / static_cast<double>(s.mask.count()) >= 0.15;
  }
  EXPECT_GE(visible, 190);
}

TEST(ContrastAnomaly, Deterministic) {
  const auto ph = make_phantom(3, 64);
  const auto a = inject_contrast_anomaly(ph, 9), b = inject_contrast_anomaly(ph, 9);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(ContrastAnomaly, OversizedBlobHasNoPlacement) {
  ContrastParams p;
  p.radius_min = p.radius_max = 0.45;
  EXPECT_EQ(code_of([&] { inject_contrast_anomaly(make_phantom(1, 64), 2, p); }), Errc::NoValidPlacement);
}

TEST(TextureAnomaly, ZeroNoiseIsLocalMean) {
  TextureParams p;
  p.noise_sigma = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ph = make_phantom(seed, 64);
    const auto s = inject_texture_anomaly(ph, seed + 100, p);
    expect_local(ph, s);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (s.mask.at(y, x)) EXPECT_NEAR(s.image.at(y, x), window_mean(ph.image, y, x), 1e-12);
  }
}

TEST(TextureAnomaly, PreservesWindowMean) {
  double worst = 0.0;
  int windows = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto ph = make_phantom(seed, 64);
    const auto s = inject_texture_anomaly(ph, seed * 3 + 5);
    expect_local(ph, s);
    EXPECT_EQ(s.anomaly_type, AnomalyType::texture);
    double changed = 0.0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (s.mask.at(y, x)) changed += std::abs(s.image.at(y, x) - ph.image.at(y, x));
        if (!window_inside(s.mask, y, x)) continue;
        worst = std::max(worst, std::abs(window_mean(s.image, y, x) - window_mean(ph.image, y, x)));
        ++windows;
      }
    EXPECT_GT(changed / static_cast<double>(s.mask.count()), 0.03) << "texture should visibly change";
  }
  EXPECT_GT(windows, 0);
  EXPECT_LE(worst, 0.05);
}

TEST(Dataset, DeterministicBytes) {
  oracle::TempDir a("data-a"), b("data-b");
  build_dataset(small_spec(), a.path());
  build_dataset(small_spec(), b.path());
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(oracle::read_bytes(entry.path()), oracle::read_bytes(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 2u * 13 + 1);
}

TEST(Dataset, ManifestLayout) {
  oracle::TempDir dir("data-layout");
  const auto manifest = build_dataset(small_spec(), dir.path());
  ASSERT_EQ(manifest.size(), 13u);
  EXPECT_EQ(manifest[0].path, "train/images/00000.png");
  EXPECT_EQ(manifest[4].path, "val/images/00000.png");
  EXPECT_EQ(manifest[6].path, "test/images/00000.png");
  EXPECT_EQ(manifest[9].anomaly_type, AnomalyType::contrast);
  EXPECT_EQ(manifest[12].anomaly_type, AnomalyType::texture);
  EXPECT_EQ(read_manifest(dir.path()).size(), 13u);
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "path,split,label,anomaly_type,seed");
  const auto png = png::read_gray(dir / "test/masks/00003.png");
  EXPECT_EQ(png.width, 32);
  for (auto v : png.pixels) EXPECT_TRUE(v == 0 || v == 255);
}

TEST(Dataset, DefaultSpecRowCount) {
  oracle::TempDir dir("data-default");
  EXPECT_EQ(build_dataset(DatasetSpec{}, dir.path()).size(), 768u);
}

TEST(Dataset, NoAnomaliesGivesNormalTestSplit) {
  oracle::TempDir dir("data-normal");
  auto spec = small_spec();
  spec.n_test_contrast = spec.n_test_texture = 0;
  build_dataset(spec, dir.path());
  const auto data = load_dataset(dir.path());
  EXPECT_EQ(data.test.size(), 3u);
  for (const auto& s : data.test) EXPECT_EQ(s.label, Label::normal);
}

TEST(Dataset, RoundTrip) {
  oracle::TempDir dir("data-rt");
  const auto spec = small_spec();
  const auto manifest = build_dataset(spec, dir.path());
  const auto data = load_dataset(dir.path());
  EXPECT_EQ(data.image_size, 32);
  ASSERT_EQ(data.train.size() + data.val.size() + data.test.size(), manifest.size());
  std::vector<const LabeledSample*> all;
  for (const auto* split : {&data.train, &data.val, &data.test})
    for (const auto& s : *split) all.push_back(&s);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& s = *all[i];
    EXPECT_EQ(s.label, manifest[i].label);
    EXPECT_EQ(s.anomaly_type, manifest[i].anomaly_type);
    EXPECT_EQ(s.seed, manifest[i].seed);
    const auto ph = make_phantom(s.seed, 32);
    if (s.label == Label::normal) {
      EXPECT_EQ(s.mask.count(), 0u);
      for (std::size_t p = 0; p < s.image.pixels.size(); ++p)
        EXPECT_LE(std::abs(s.image.pixels[p] - ph.image.pixels[p]), 1.0 / 255 + 1e-12);
    } else {
      EXPECT_GT(s.mask.count(), 0u);
      for (std::size_t p = 0; p < s.mask.bits.size(); ++p) {
        if (s.mask.bits[p]) EXPECT_TRUE(ph.foreground.bits[p]);
        else EXPECT_LE(std::abs(s.image.pixels[p] - ph.image.pixels[p]), 1.0 / 255 + 1e-12);
      }
    }
  }
}

TEST(Dataset, PixelsAreBytesOver255) {
  oracle::TempDir dir("data-q");
  build_dataset(small_spec(), dir.path());
  const auto data = load_dataset(dir.path());
  const auto& loaded = data.test[3];
  const auto raw = png::read_gray(dir / "test/images/00003.png");
  for (std::size_t p = 0; p < raw.pixels.size(); ++p) EXPECT_EQ(loaded.image.pixels[p], raw.pixels[p] / 255.0);
}

TEST(Dataset, MissingFileIsManifestMismatch) {
  oracle::TempDir dir("data-missing");
  build_dataset(small_spec(), dir.path());
  std::filesystem::remove(dir / "val/images/00001.png");
  EXPECT_EQ(code_of([&] { load_dataset(dir.path()); }), Errc::ManifestMismatch);
  std::filesystem::remove(dir / "manifest.csv");
  EXPECT_EQ(code_of([&] { load_dataset(dir.path()); }), Errc::ManifestMismatch);
}

TEST(Dataset, CorruptImage) {
  oracle::TempDir dir("data-corrupt");
  build_dataset(small_spec(), dir.path());
  std::ofstream(dir / "train/images/00002.png", std::ios::binary | std::ios::trunc) << "not a png";
  EXPECT_EQ(code_of([&] { load_dataset(dir.path()); }), Errc::CorruptImage);
}

TEST(Dataset, MaskLabelDisagreementIsManifestMismatch) {
  oracle::TempDir dir("data-label");
  build_dataset(small_spec(), dir.path());
  const auto blank = png::read_gray(dir / "test/masks/00000.png");
  std::filesystem::remove(dir / "test/masks/00004.png");
  png::write_gray(dir / "test/masks/00004.png", blank);
  EXPECT_EQ(code_of([&] { load_dataset(dir.path()); }), Errc::ManifestMismatch);
}
