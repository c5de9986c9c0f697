#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stellar/numerics.hpp"

namespace stellar {

// Lower-triangular success-rate matrix: rows[i][j] is the success rate on
// task j after training through task i (0-indexed), defined for j <= i.
struct SuccessMatrix {
  std::vector<Vec> rows;

  int task_count() const { return static_cast<int>(rows.size()); }
  void add_stage_row(Vec row);
  double at(int stage, int task) const { return rows.at(stage).at(task); }
};

struct MetricsReport {
  double fwt = 0.0;
  double nbt = 0.0;
  double auc = 0.0;
  double final_sr = 0.0;
};

// Validates shape and ranges (throws std::invalid_argument listing offending
// cells), then evaluates the four continual-learning metrics.
MetricsReport compute_metrics(const SuccessMatrix& R);

struct ReportMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// Writes R_matrix.csv, metrics.json and success_curves.csv into out_dir
// (created on demand). CSV numbers use '.' decimals regardless of locale.
void emit_reports(const MetricsReport& report, const SuccessMatrix& R,
                  const std::filesystem::path& out_dir, const ReportMeta& meta = {});

std::string success_matrix_to_csv(const SuccessMatrix& R);
SuccessMatrix success_matrix_from_csv(const std::string& csv);

}  // namespace stellar
