#pragma once

// Sweep engine over the ablation axes: prompt depth (layer intervals added in
// ascending or descending order), prompt length x reparameterization, and
// classification head choice. Emits TSV/JSON tables and SVG line plots.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptune/training.hpp"

namespace ptune {

enum class SweepAxis { kDepthInterval, kPromptLength, kReparam, kHeadKind };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

// Base configuration of one run: synthetic task + backbone + prompts + training.
struct RunConfig {
  ModelConfig model;
  PromptConfig prompt;
  TrainConfig train;
  TaskKind task_kind = TaskKind::kClassification;
  int difficulty = 0;
  std::uint64_t data_seed = 1;
  std::uint64_t backbone_seed = 7;
  double qa_null_threshold = 0.0;

  // optional file-backed data (ner/srl: CoNLL columns; qa: JSON records)
  std::string train_file, dev_file;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  std::uint64_t hash() const;
};

struct SweepSpec {
  SweepAxis axis = SweepAxis::kDepthInterval;
  std::vector<std::string> values;  // e.g. k values, lengths; empty -> axis default
  int repeats = 3;                  // seeds per point

  void validate() const;
};

struct AblationRow {
  std::string axis_value;  // e.g. "1-12" interval label, length, head kind
  std::string variant;     // ascending/descending, reparam, or head kind
  std::uint64_t seed = 0;
  double metric = 0.0;
  std::size_t trainable_params = 0;
  double seconds = 0.0;
};

struct AblationReport {
  std::string axis;
  std::vector<AblationRow> rows;
  std::vector<std::pair<std::string, std::string>> expected;  // (axis_value, variant) points
  int repeats = 1;
  std::string task;
  std::string notes;  // observed tendencies recorded, not asserted

  bool complete() const;
  std::vector<std::pair<std::string, std::string>> missing_points() const;
  double mean_metric(const std::string& axis_value, const std::string& variant) const;
};

// single training run for a fully resolved config; returns (best dev metric,
// trainable count, wall seconds)
struct RunOutcome {
  double metric = 0.0;
  std::size_t trainable_params = 0;
  double seconds = 0.0;
};
RunOutcome execute_run(const RunConfig& config, const std::string& artifact_dir = "");

enum class DepthOrder { kAscending, kDescending };
std::string to_string(DepthOrder o);

// 1-indexed "x-y" interval label used in reports
std::string interval_label(int num_layers, int k, DepthOrder order);
std::vector<int> interval_layers(int num_layers, int k, DepthOrder order);

AblationReport depth_ablation(const std::vector<int>& k_values, DepthOrder order,
                              const RunConfig& base, int repeats = 3, int jobs = 1);
// both orders in one report (what the CLI runs)
AblationReport depth_ablation_both(const std::vector<int>& k_values, const RunConfig& base,
                                   int repeats = 3, int jobs = 1);

AblationReport length_sweep(const std::vector<int>& lengths, const std::vector<Reparam>& reparams,
                            const RunConfig& base, int repeats = 3, int jobs = 1);

AblationReport head_comparison(const RunConfig& base, int repeats = 3, int jobs = 1);

struct ReportFormats {
  bool tsv = true;
  bool json = true;
  bool plot = true;
};

// Writes report.tsv / report.json / plot_<axis>.svg under out_dir. Refuses
// incomplete reports, listing the missing points.
std::vector<std::string> emit_report(const AblationReport& report, const std::string& out_dir,
                                     const ReportFormats& formats = {});

AblationReport report_from_json_file(const std::string& path);

}  // namespace ptune
