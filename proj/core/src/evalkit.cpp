#include "popusense/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "popusense/checkpoint.hpp"
#include "popusense/error.hpp"
#include "popusense/pdc_core.hpp"

namespace popusense::eval {

namespace {

using json = nlohmann::json;

constexpr const char* kReportSchema = "popusense-report/1";
constexpr const char* kAnomalyTypes[] = {"contrast", "texture"};

void check_lengths(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size()) throw Error(Errc::ShapeMismatch, "scores and labels differ in length");
}

double auroc_from(std::span<const double> scores, auto label_of) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U statistic, kept integral so the result is exact.
  std::uint64_t twice_wins = 0;
  std::uint64_t neg_below = 0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (label_of(order[j]) ? pos : neg) += 1;
      ++j;
    }
    twice_wins += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw Error(Errc::SingleClass, "AUROC needs both classes");
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

void check_maps(const Tensor4& maps, std::span<const Mask> masks) {
  if (maps.c != 1 || static_cast<std::size_t>(maps.n) != masks.size())
    throw Error(Errc::ShapeMismatch, "one single-channel map per mask expected");
  for (const auto& m : masks)
    if (m.size != maps.h || maps.h != maps.w) throw Error(Errc::ShapeMismatch, "map and mask sizes differ");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int row_rank(const MetricsReport& r) {
  if (r.frozen_output_projection) return 3;
  if (r.configuration == "pdccore") return 0;
  if (r.configuration == "narrow_popusense") return 1;
  if (r.configuration == "wide_popusense") return 2;
  return 4;
}

json cell_json(const CellMetrics& c) {
  return {{"image_auroc", c.image_auroc}, {"image_ap", c.image_ap},       {"pixel_auroc", c.pixel_auroc},
          {"best_dice", c.best_dice},     {"n_normal", c.n_normal},       {"n_anomalous", c.n_anomalous}};
}

json report_json(const MetricsReport& r) {
  json cells = json::object();
  for (const auto& [type, c] : r.cells) cells[type] = cell_json(c);
  return {{"schema", kReportSchema},
          {"configuration", r.configuration},
          {"display_name", r.display_name},
          {"frozen_output_projection", r.frozen_output_projection},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"smoothing_sigma", r.smoothing_sigma},
          {"top_q", r.top_q},
          {"cells", cells}};
}

MetricsReport report_from(const json& j) {
  MetricsReport r;
  try {
    if (j.at("schema").get<std::string>() != kReportSchema)
      throw Error(Errc::ConfigError, "unknown report schema");
    r.configuration = j.at("configuration").get<std::string>();
    r.display_name = j.at("display_name").get<std::string>();
    r.frozen_output_projection = j.at("frozen_output_projection").get<bool>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.smoothing_sigma = j.at("smoothing_sigma").get<double>();
    r.top_q = j.at("top_q").get<double>();
    for (const auto& [type, c] : j.at("cells").items()) {
      CellMetrics m;
      m.image_auroc = c.at("image_auroc").get<double>();
      m.image_ap = c.at("image_ap").get<double>();
      m.pixel_auroc = c.at("pixel_auroc").get<double>();
      m.best_dice = c.at("best_dice").get<double>();
      m.n_normal = c.at("n_normal").get<int>();
      m.n_anomalous = c.at("n_anomalous").get<int>();
      r.cells[type] = m;
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("malformed report: ") + e.what());
  }
  return r;
}

}  // namespace

double auroc(const ScoredSet& s) {
  check_lengths(s);
  return auroc_from(s.scores, [&](std::size_t i) { return s.labels[i] != 0; });
}

double average_precision(const ScoredSet& s) {
  check_lengths(s);
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  const auto positives = std::count_if(s.labels.begin(), s.labels.end(), [](auto l) { return l != 0; });
  if (positives == 0) throw Error(Errc::NoPositives, "average precision needs at least one positive");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (s.labels[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  return sum / static_cast<double>(positives);
}

double pixel_auroc(const Tensor4& maps, std::span<const Mask> masks) {
  check_maps(maps, masks);
  const auto plane = maps.plane();
  return auroc_from(maps.data, [&](std::size_t i) { return masks[i / plane].bits[i % plane] != 0; });
}

double best_dice(const Tensor4& maps, std::span<const Mask> masks, int points) {
  check_maps(maps, masks);
  if (points < 2) throw Error(Errc::InvalidConfig, "threshold sweep needs at least 2 points");
  const auto plane = maps.plane();
  std::size_t mask_total = 0;
  for (const auto& m : masks) mask_total += m.count();
  if (mask_total == 0) throw Error(Errc::EmptyMasks, "best Dice needs at least one anomalous pixel");

  // Ascending scores; tp_from[i] = mask pixels among positions i..end.
  std::vector<std::size_t> order(maps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return maps.data[a] < maps.data[b]; });
  std::vector<double> sorted(order.size());
  std::vector<std::size_t> tp_from(order.size() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = maps.data[order[i]];
  for (std::size_t i = order.size(); i-- > 0;)
    tp_from[i] = tp_from[i + 1] + (masks[order[i] / plane].bits[order[i] % plane] != 0 ? 1 : 0);

  const double lo = sorted.front();
  const double hi = sorted.back();
  double best = 0.0;
  for (int i = 0; i < points; ++i) {
    const double t = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    const auto first = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    const std::size_t selected = sorted.size() - first;
    const double dice = 2.0 * static_cast<double>(tp_from[first]) / static_cast<double>(selected + mask_total);
    best = std::max(best, dice);
  }
  return best;
}

std::string MetricsReport::row_key() const {
  return frozen_output_projection ? configuration + "+frozen" : configuration;
}

std::string MetricsReport::row_label() const {
  return frozen_output_projection ? display_name + " (frozen)" : display_name;
}

ScoredTestSet score_samples(const train::ModelBundle& bundle, std::span<const synth::LabeledSample> samples) {
  ScoredTestSet out;
  if (samples.empty()) return out;
  const int size = samples.front().image.size;
  out.maps = Tensor4(static_cast<int>(samples.size()), 1, size, size);
  constexpr std::size_t kBatch = 16;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += kBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + kBatch); ++i) idx.push_back(i);
    const Tensor4 x = train::make_batch(samples, idx);
    const Tensor4 xhat = train::reconstruct(bundle, x);
    const Tensor4 maps = pdc::residual_map(x, xhat, bundle.eval.smoothing_sigma);
    const auto scores = pdc::image_score(maps, bundle.eval.top_q);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto src = maps.sample(static_cast<int>(i));
      std::copy(src.begin(), src.end(), out.maps.sample(static_cast<int>(idx[i])).begin());
      out.scores.push_back(scores[i]);
    }
  }
  return out;
}

MetricsReport evaluate_checkpoint(const train::ModelBundle& bundle, const synth::Dataset& data) {
  MetricsReport r;
  r.configuration = std::string(train::configuration_name(bundle.configuration));
  r.display_name = std::string(train::display_name(bundle.configuration));
  r.frozen_output_projection = bundle.freeze_output_projection && bundle.popusense.has_value();
  r.seed = bundle.seed;
  r.config_hash = bundle.config_hash;
  r.smoothing_sigma = bundle.eval.smoothing_sigma;
  r.top_q = bundle.eval.top_q;

  const auto& test = data.test;
  const ScoredTestSet scored = score_samples(bundle, test);

  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test[i].anomaly_type == synth::AnomalyType::none) normals.push_back(i);

  for (const auto type : {synth::AnomalyType::contrast, synth::AnomalyType::texture}) {
    std::vector<std::size_t> members = normals;
    std::size_t anomalous = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test[i].anomaly_type == type) {
        members.push_back(i);
        ++anomalous;
      }
    if (anomalous == 0) continue;

    ScoredSet image;
    Tensor4 maps(static_cast<int>(members.size()), 1, scored.maps.h, scored.maps.w);
    std::vector<Mask> masks;
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto i = members[m];
      image.scores.push_back(scored.scores[i]);
      image.labels.push_back(test[i].label == synth::Label::anomalous ? 1 : 0);
      const auto src = scored.maps.sample(static_cast<int>(i));
      std::copy(src.begin(), src.end(), maps.sample(static_cast<int>(m)).begin());
      masks.push_back(test[i].mask);
    }
    CellMetrics cell;
    cell.image_auroc = auroc(image);
    cell.image_ap = average_precision(image);
    cell.pixel_auroc = pixel_auroc(maps, masks);
    cell.best_dice = best_dice(maps, masks);
    cell.n_normal = static_cast<int>(normals.size());
    cell.n_anomalous = static_cast<int>(anomalous);
    r.cells[std::string(synth::anomaly_type_name(type))] = cell;
  }
  return r;
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir) {
  const auto bundle = train::load_checkpoint(checkpoint);
  const auto data = synth::load_dataset(dataset_dir);
  return evaluate_checkpoint(bundle, data);
}

std::string report_to_json(const MetricsReport& r) { return report_json(r).dump(2) + "\n"; }

MetricsReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, std::string("malformed report: ") + e.what());
  }
  return report_from(j);
}

void write_report(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write report " + path.string());
  out << report_to_json(r);
  if (!out) throw Error(Errc::IoError, "failed writing report " + path.string());
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open report " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::vector<MetricsReport> merge_reports(const std::vector<MetricsReport>& reports) {
  std::vector<MetricsReport> rows;
  std::map<std::string, std::string> cell_hash;  // "<row>/<type>" -> config hash
  for (const auto& rep : reports) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.row_key() == rep.row_key(); });
    if (it == rows.end()) {
      rows.push_back(rep);
      rows.back().cells.clear();
      it = rows.end() - 1;
    }
    for (const auto& [type, cell] : rep.cells) {
      const std::string key = rep.row_key() + "/" + type;
      const auto seen = cell_hash.find(key);
      if (seen != cell_hash.end() && seen->second != rep.config_hash)
        throw Error(Errc::ConflictingMetadata, "cell " + rep.row_label() + " / " + type +
                                                   " reported with config hashes " + seen->second + " and " +
                                                   rep.config_hash);
      cell_hash[key] = rep.config_hash;
      it->cells[type] = cell;
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return row_rank(a) < row_rank(b); });
  return rows;
}

std::string render_table(const std::vector<MetricsReport>& rows) {
  std::size_t label_w = std::string("configuration").size();
  for (const auto& r : rows) label_w = std::max(label_w, r.row_label().size());
  const char* metrics[] = {"img_auroc", "img_ap", "px_auroc", "dice"};
  constexpr int kCol = 9;
  const int group_w = 4 * kCol + 3;

  std::ostringstream out;
  auto pad = [](const std::string& s, std::size_t w, bool right) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
  };
  out << pad("", label_w, false);
  for (const char* type : kAnomalyTypes) {
    const std::string t = type;
    const std::size_t left = (static_cast<std::size_t>(group_w) - t.size()) / 2;
    out << " | " << pad(std::string(left, ' ') + t, static_cast<std::size_t>(group_w), false);
  }
  out << '\n' << pad("configuration", label_w, false);
  for (std::size_t g = 0; g < std::size(kAnomalyTypes); ++g) {
    out << " |";
    for (const char* m : metrics) out << ' ' << pad(m, kCol, true);
  }
  out << '\n' << std::string(label_w, '-');
  for (std::size_t g = 0; g < std::size(kAnomalyTypes); ++g) out << "-+-" << std::string(static_cast<std::size_t>(group_w), '-');
  out << '\n';
  for (const auto& r : rows) {
    out << pad(r.row_label(), label_w, false);
    for (const char* type : kAnomalyTypes) {
      out << " |";
      const auto it = r.cells.find(type);
      if (it == r.cells.end()) {
        for (int k = 0; k < 4; ++k) out << ' ' << pad("-", kCol, true);
        continue;
      }
      const auto& c = it->second;
      for (double v : {c.image_auroc, c.image_ap, c.pixel_auroc, c.best_dice}) out << ' ' << pad(fmt(v), kCol, true);
    }
    out << '\n';
  }
  return out.str();
}

std::string merged_json(const std::vector<MetricsReport>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(report_json(r));
  return json{{"schema", "popusense-report-table/1"}, {"rows", arr}}.dump(2) + "\n";
}

}  // namespace popusense::eval
