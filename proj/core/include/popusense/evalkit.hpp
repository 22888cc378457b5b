#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "popusense/tensor.hpp"
#include "popusense/train.hpp"

namespace popusense::eval {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 1 = anomalous
};

/// P(score_pos > score_neg) + 0.5 P(tie), from exact integer pair counts.
double auroc(const ScoredSet& s);

/// Sum over ranks k of (R_k - R_{k-1}) P_k, ranking by descending score with
/// ties kept in input order (no tie-group averaging).
double average_precision(const ScoredSet& s);

/// auroc over every pixel of every map, labelled by the masks.
double pixel_auroc(const Tensor4& maps, std::span<const Mask> masks);

/// Max over thresholds t_i = lo + (hi - lo) i / (points - 1), i = 0..points-1,
/// of the pooled Dice between {score >= t_i} and the masks. lo and hi are
/// the smallest and largest score.
double best_dice(const Tensor4& maps, std::span<const Mask> masks, int points = 101);

struct CellMetrics {
  double image_auroc = 0.0;
  double image_ap = 0.0;
  double pixel_auroc = 0.0;
  double best_dice = 0.0;
  int n_normal = 0;
  int n_anomalous = 0;

  friend bool operator==(const CellMetrics&, const CellMetrics&) = default;
};

/// Metrics for one configuration, keyed by anomaly type ("contrast",
/// "texture"). A type with no test samples has no cell.
struct MetricsReport {
  std::string configuration;  // e.g. "wide_popusense"
  std::string display_name;   // e.g. "Wide PopuSense"
  bool frozen_output_projection = false;
  std::uint64_t seed = 0;
  std::string config_hash;
  double smoothing_sigma = 0.0;
  double top_q = 0.0;
  std::map<std::string, CellMetrics> cells;

  /// Row key in merged tables: configuration, plus "+frozen" for frozen arms.
  std::string row_key() const;
  std::string row_label() const;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Scores every test sample (encode → refine → decode → residual map →
/// image score) and stratifies each anomaly type against the shared
/// normal test set.
MetricsReport evaluate_checkpoint(const train::ModelBundle& bundle, const synth::Dataset& data);
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir);

/// Per-sample maps and scores, in test-split order.
struct ScoredTestSet {
  Tensor4 maps;
  std::vector<double> scores;
};
ScoredTestSet score_samples(const train::ModelBundle& bundle, std::span<const synth::LabeledSample> samples);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);
void write_report(const std::filesystem::path& path, const MetricsReport& r);
MetricsReport read_report(const std::filesystem::path& path);

/// Merges reports into rows. Throws Error(ConflictingMetadata) when one row
/// and anomaly type comes from two reports with different config hashes.
std::vector<MetricsReport> merge_reports(const std::vector<MetricsReport>& reports);

/// Aligned text table: one row per configuration, a column group per
/// anomaly type. PDCCore, Narrow PopuSense, Wide PopuSense come first.
std::string render_table(const std::vector<MetricsReport>& rows);

std::string merged_json(const std::vector<MetricsReport>& rows);

}  // namespace popusense::eval
