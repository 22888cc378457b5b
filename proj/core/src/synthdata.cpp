#include "popusense/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "popusense/error.hpp"
#include "popusense/image_ops.hpp"
#include "popusense/png_io.hpp"
#include "popusense/rng.hpp"

namespace popusense::synth {

namespace fs = std::filesystem;

std::string_view label_name(Label l) noexcept { return l == Label::normal ? "normal" : "anomalous"; }

std::string_view anomaly_type_name(AnomalyType t) noexcept {
  switch (t) {
    case AnomalyType::none: return "none";
    case AnomalyType::contrast: return "contrast";
    case AnomalyType::texture: return "texture";
  }
  return "none";
}

Label parse_label(std::string_view s) {
  if (s == "normal") return Label::normal;
  if (s == "anomalous") return Label::anomalous;
  throw Error(Errc::ManifestMismatch, "unknown label '" + std::string(s) + "'");
}

AnomalyType parse_anomaly_type(std::string_view s) {
  if (s == "none") return AnomalyType::none;
  if (s == "contrast") return AnomalyType::contrast;
  if (s == "texture") return AnomalyType::texture;
  throw Error(Errc::ManifestMismatch, "unknown anomaly type '" + std::string(s) + "'");
}

namespace {

constexpr std::uint64_t kAnomalyStream = 0xA11;
constexpr int kMaxPlacementTries = 200;
// 7×7 local-mean window radius; blobs keep this margin to the foreground edge.
constexpr int kWindowRadius = 3;

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

void check_foreground(const Phantom& ph) {
  if (ph.foreground.count() == 0) throw Error(Errc::NoValidPlacement, "phantom foreground is empty");
}

// Union of 1-3 overlapping discs whose 7×7 neighbourhood lies in the foreground.
Mask place_blob(const Phantom& ph, std::mt19937_64& rng, double radius_min, double radius_max) {
  check_foreground(ph);
  const int size = ph.image.size;
  if (!(radius_min > 0.0) || radius_max < radius_min)
    throw Error(Errc::InvalidConfig, "blob radius range must satisfy 0 < min <= max");

  std::vector<int> fg;
  for (int i = 0; i < size * size; ++i)
    if (ph.foreground.bits[static_cast<std::size_t>(i)]) fg.push_back(i);

  std::uniform_real_distribution<double> radius_dist(radius_min * size, radius_max * size);
  std::uniform_int_distribution<std::size_t> pick(0, fg.size() - 1);
  std::uniform_int_distribution<int> disc_count(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
    struct Disc { double cx, cy, r; };
    std::vector<Disc> discs;
    const int centre = fg[pick(rng)];
    discs.push_back({centre % size + 0.5, centre / size + 0.5, radius_dist(rng)});
    const int extra = disc_count(rng) - 1;
    for (int d = 0; d < extra; ++d) {
      const Disc& prev = discs.back();
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double dist = prev.r * (0.3 + 0.6 * unit(rng));
      discs.push_back({prev.cx + dist * std::cos(angle), prev.cy + dist * std::sin(angle), radius_dist(rng)});
    }

    Mask blob(size);
    bool ok = true;
    for (int y = 0; y < size && ok; ++y)
      for (int x = 0; x < size && ok; ++x) {
        bool inside = false;
        for (const auto& d : discs) {
          const double dx = x + 0.5 - d.cx;
          const double dy = y + 0.5 - d.cy;
          inside = inside || dx * dx + dy * dy <= d.r * d.r;
        }
        if (!inside) continue;
        for (int wy = -kWindowRadius; wy <= kWindowRadius && ok; ++wy)
          for (int wx = -kWindowRadius; wx <= kWindowRadius && ok; ++wx) {
            const int yy = y + wy;
            const int xx = x + wx;
            ok = yy >= 0 && yy < size && xx >= 0 && xx < size && ph.foreground.at(yy, xx);
          }
        blob.at(y, x) = 1;
      }
    if (ok && blob.count() > 0) return blob;
  }
  throw Error(Errc::NoValidPlacement, "no blob placement inside the foreground after " +
                                          std::to_string(kMaxPlacementTries) + " tries");
}

constexpr int kTile = 2 * kWindowRadius + 1;

/// Blur of a kTile×kTile torus with wrap-around taps.
std::vector<double> wrap_blur(const std::vector<double>& t, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  auto wrap = [](int i) { return ((i % kTile) + kTile) % kTile; };
  std::vector<double> rows(t.size(), 0.0), out(t.size(), 0.0);
  for (int y = 0; y < kTile; ++y)
    for (int x = 0; x < kTile; ++x)
      for (int d = -r; d <= r; ++d) rows[y * kTile + x] += taps[d + r] * t[y * kTile + wrap(x + d)];
  for (int y = 0; y < kTile; ++y)
    for (int x = 0; x < kTile; ++x)
      for (int d = -r; d <= r; ++d) out[y * kTile + x] += taps[d + r] * rows[wrap(y + d) * kTile + x];
  return out;
}

/// Difference of Gaussians (grain, 2·grain) of white noise on the tile,
/// zero mean, scaled to standard deviation sigma.
std::vector<double> periodic_band_pass_tile(std::mt19937_64& rng, double grain, double sigma) {
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<double> w(kTile * kTile);
  for (auto& v : w) v = white(rng);
  const auto fine = wrap_blur(w, grain);
  const auto coarse = wrap_blur(w, 2.0 * grain);
  std::vector<double> t(w.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = fine[i] - coarse[i];
    mean += t[i];
  }
  mean /= static_cast<double>(t.size());
  double sq = 0.0;
  for (auto& v : t) {
    v -= mean;
    sq += v * v;
  }
  const double scale = sq > 0.0 ? sigma / std::sqrt(sq / static_cast<double>(t.size())) : 0.0;
  for (auto& v : t) v *= scale;
  return t;
}

LabeledSample anomalous(Image image, Mask mask, AnomalyType type, std::uint64_t seed) {
  LabeledSample s;
  s.image = std::move(image);
  s.mask = std::move(mask);
  s.label = Label::anomalous;
  s.anomaly_type = type;
  s.seed = seed;
  return s;
}

}  // namespace

Phantom make_phantom(std::uint64_t seed, int size) {
  if (size < 32) throw Error(Errc::SizeTooSmall, "phantom size must be >= 32, got " + std::to_string(size));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double s = size;
  const double cx = s / 2 + uniform(-0.1, 0.1) * s;
  const double cy = s / 2 + uniform(-0.1, 0.1) * s;
  const double ax = uniform(0.25, 0.40) * s;
  const double ay = uniform(0.25, 0.40) * s;
  const double rot = uniform(0.0, std::numbers::pi);
  const double body = uniform(0.66, 0.74);
  const double mod_amp = uniform(0.02, 0.05);
  const double mod_fx = uniform(-1.5, 1.5) / s;
  const double mod_fy = uniform(-1.5, 1.5) / s;
  const double mod_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double bg = uniform(0.17, 0.23);
  const double grad_amp = uniform(0.0, 0.05);
  const double grad_dir = uniform(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.01);

  const double c = std::cos(rot);
  const double sn = std::sin(rot);
  const double edge_scale = std::min(ax, ay);

  Phantom ph{Image(size), Mask(size)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double u = (dx * c + dy * sn) / ax;
      const double v = (-dx * sn + dy * c) / ay;
      const double r = std::sqrt(u * u + v * v);
      // About one pixel of anti-aliasing across the boundary.
      const double blend = std::clamp((1.0 - r) * edge_scale + 0.5, 0.0, 1.0);
      const double body_v =
          body + mod_amp * std::sin(2.0 * std::numbers::pi * (mod_fx * x + mod_fy * y) + mod_phase);
      const double bg_v =
          bg + grad_amp * ((x / s - 0.5) * std::cos(grad_dir) + (y / s - 0.5) * std::sin(grad_dir));
      ph.image.at(y, x) = clip01(blend * body_v + (1.0 - blend) * bg_v + noise(rng));
      ph.foreground.at(y, x) = r <= 1.0 ? 1 : 0;
    }
  return ph;
}

LabeledSample normal_sample(const Phantom& ph, std::uint64_t seed) {
  LabeledSample s;
  s.image = ph.image;
  s.mask = Mask(ph.image.size);
  s.seed = seed;
  return s;
}

LabeledSample inject_contrast_anomaly(const Phantom& ph, std::uint64_t seed, const ContrastParams& params) {
  if (!(params.delta_max > 0.0)) throw Error(Errc::ZeroDelta, "contrast anomaly needs a non-zero intensity shift");
  if (params.delta_min < 0.0 || params.delta_min > params.delta_max)
    throw Error(Errc::InvalidConfig, "delta range must satisfy 0 <= min <= max");
  std::mt19937_64 rng(seed);
  Mask blob = place_blob(ph, rng, params.radius_min, params.radius_max);
  std::uniform_real_distribution<double> magnitude(params.delta_min, params.delta_max);
  std::bernoulli_distribution negative(0.5);
  double delta = magnitude(rng);
  if (negative(rng)) delta = -delta;
  if (delta == 0.0) throw Error(Errc::ZeroDelta, "drawn intensity shift is zero");

  Image img = ph.image;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    if (blob.bits[i]) img.pixels[i] = clip01(img.pixels[i] + delta);
  return anomalous(std::move(img), std::move(blob), AnomalyType::contrast, seed);
}

LabeledSample inject_texture_anomaly(const Phantom& ph, std::uint64_t seed, const TextureParams& params) {
  if (params.noise_sigma < 0.0 || !(params.grain > 0.0))
    throw Error(Errc::InvalidConfig, "texture noise sigma must be >= 0 and grain > 0");
  std::mt19937_64 rng(seed);
  Mask blob = place_blob(ph, rng, params.radius_min, params.radius_max);
  const int size = ph.image.size;
  const auto local = box_mean(ph.image.pixels, size, size, kWindowRadius);

  std::vector<double> texture(local.size(), 0.0);
  if (params.noise_sigma > 0.0) {
    // A zero-mean tile with the window's period sums to zero over every
    // 7×7 window, so windows inside the blob keep their mean.
    const auto tile = periodic_band_pass_tile(rng, params.grain, params.noise_sigma);
    std::uniform_int_distribution<int> phase(0, kTile - 1);
    const int oy = phase(rng), ox = phase(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        texture[static_cast<std::size_t>(y) * size + x] = tile[((y + oy) % kTile) * kTile + (x + ox) % kTile];
  }

  Image img = ph.image;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    if (blob.bits[i]) img.pixels[i] = params.noise_sigma > 0.0 ? clip01(local[i] + texture[i]) : local[i];
  return anomalous(std::move(img), std::move(blob), AnomalyType::texture, seed);
}

namespace {

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(clip01(v) * 255.0)); }

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

void write_sample(const fs::path& root, const std::string& split, int index, const LabeledSample& s,
                  Manifest& manifest) {
  const std::string name = index_name(index) + ".png";
  const int size = s.image.size;
  png::GrayImage img{size, size, std::vector<std::uint8_t>(s.image.pixels.size())};
  png::GrayImage mask{size, size, std::vector<std::uint8_t>(s.mask.bits.size())};
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
    img.pixels[i] = quantize(s.image.pixels[i]);
    mask.pixels[i] = s.mask.bits[i] ? 255 : 0;
  }
  png::write_gray(root / split / "images" / name, img);
  png::write_gray(root / split / "masks" / name, mask);
  manifest.push_back({split + "/images/" + name, split, s.label, s.anomaly_type, s.seed});
}

// Stream identifiers for per-sample seed derivation.
enum Stream : std::uint64_t { kTrain = 1, kVal = 2, kTestNormal = 3, kTestContrast = 4, kTestTexture = 5 };

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Manifest build_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  if (spec.n_train_normal < 0 || spec.n_val_normal < 0 || spec.n_test_normal < 0 || spec.n_test_contrast < 0 ||
      spec.n_test_texture < 0)
    throw Error(Errc::InvalidConfig, "dataset counts must be >= 0");
  std::error_code ec;
  for (const char* split : {"train", "val", "test"})
    for (const char* kind : {"images", "masks"}) {
      fs::create_directories(out_dir / split / kind, ec);
      if (ec) throw Error(Errc::IoError, "cannot create " + (out_dir / split / kind).string() + ": " + ec.message());
    }

  Manifest manifest;
  manifest.reserve(static_cast<std::size_t>(spec.total()));
  const int size = spec.image_size;
  auto emit_normals = [&](const std::string& split, Stream stream, int count, int& index) {
    for (int i = 0; i < count; ++i) {
      const auto seed = derive_seed(spec.master_seed, stream, static_cast<std::uint64_t>(i));
      write_sample(out_dir, split, index++, normal_sample(make_phantom(seed, size), seed), manifest);
    }
  };

  int index = 0;
  emit_normals("train", kTrain, spec.n_train_normal, index);
  index = 0;
  emit_normals("val", kVal, spec.n_val_normal, index);
  index = 0;
  emit_normals("test", kTestNormal, spec.n_test_normal, index);
  for (int i = 0; i < spec.n_test_contrast; ++i) {
    const auto seed = derive_seed(spec.master_seed, kTestContrast, static_cast<std::uint64_t>(i));
    auto s = inject_contrast_anomaly(make_phantom(seed, size), derive_seed(seed, kAnomalyStream), spec.contrast);
    s.seed = seed;
    write_sample(out_dir, "test", index++, s, manifest);
  }
  for (int i = 0; i < spec.n_test_texture; ++i) {
    const auto seed = derive_seed(spec.master_seed, kTestTexture, static_cast<std::uint64_t>(i));
    auto s = inject_texture_anomaly(make_phantom(seed, size), derive_seed(seed, kAnomalyStream), spec.texture);
    s.seed = seed;
    write_sample(out_dir, "test", index++, s, manifest);
  }

  std::ofstream csv(out_dir / "manifest.csv", std::ios::binary);
  if (!csv) throw Error(Errc::IoError, "cannot write " + (out_dir / "manifest.csv").string());
  csv << kManifestHeader << '\n';
  for (const auto& row : manifest)
    csv << row.path << ',' << row.split << ',' << label_name(row.label) << ','
        << anomaly_type_name(row.anomaly_type) << ',' << row.seed << '\n';
  if (!csv) throw Error(Errc::IoError, "failed writing manifest");
  return manifest;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.csv";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ManifestMismatch, "missing " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw Error(Errc::ManifestMismatch, path.string() + ": unexpected header");
  Manifest rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 5) throw Error(Errc::ManifestMismatch, where + ": expected 5 fields");
    ManifestRow row;
    row.path = f[0];
    row.split = f[1];
    if (row.split != "train" && row.split != "val" && row.split != "test")
      throw Error(Errc::ManifestMismatch, where + ": unknown split '" + row.split + "'");
    if (row.path.rfind(row.split + "/images/", 0) != 0)
      throw Error(Errc::ManifestMismatch, where + ": path outside its split image directory");
    row.label = parse_label(f[2]);
    row.anomaly_type = parse_anomaly_type(f[3]);
    if ((row.label == Label::normal) != (row.anomaly_type == AnomalyType::none))
      throw Error(Errc::ManifestMismatch, where + ": label and anomaly type disagree");
    try {
      std::size_t used = 0;
      row.seed = std::stoull(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(Errc::ManifestMismatch, where + ": bad seed '" + f[4] + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Dataset load_dataset(const fs::path& dir) {
  const Manifest rows = read_manifest(dir);
  Dataset ds;
  for (const auto& row : rows) {
    const fs::path image_path = dir / row.path;
    std::string mask_rel = row.path;
    mask_rel.replace(row.split.size() + 1, 6, "masks");
    const fs::path mask_path = dir / mask_rel;
    if (!fs::is_regular_file(image_path) || !fs::is_regular_file(mask_path))
      throw Error(Errc::ManifestMismatch, "manifest references missing file for " + row.path);

    const auto img = png::read_gray(image_path);
    const auto mask = png::read_gray(mask_path);
    if (img.width != img.height || mask.width != img.width || mask.height != img.height)
      throw Error(Errc::CorruptImage, row.path + ": image and mask must be equal-sized squares");
    if (ds.image_size == 0) ds.image_size = img.width;
    if (img.width != ds.image_size) throw Error(Errc::ManifestMismatch, row.path + ": inconsistent image size");

    LabeledSample s;
    s.image = Image(img.width);
    s.mask = Mask(img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      s.image.pixels[i] = img.pixels[i] / 255.0;
      if (mask.pixels[i] != 0 && mask.pixels[i] != 255)
        throw Error(Errc::CorruptImage, mask_rel + ": mask is not binary");
      s.mask.bits[i] = mask.pixels[i] ? 1 : 0;
    }
    s.label = row.label;
    s.anomaly_type = row.anomaly_type;
    s.seed = row.seed;
    if ((s.mask.count() > 0) != (s.label == Label::anomalous))
      throw Error(Errc::ManifestMismatch, row.path + ": mask disagrees with label");

    if (row.split == "train") ds.train.push_back(std::move(s));
    else if (row.split == "val") ds.val.push_back(std::move(s));
    else ds.test.push_back(std::move(s));
  }
  return ds;
}

}  // namespace popusense::synth
