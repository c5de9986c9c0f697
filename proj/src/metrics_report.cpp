#include "stellar/metrics_report.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "stellar/serialize.hpp"

namespace stellar {

void SuccessMatrix::add_stage_row(Vec row) {
  if (row.size() != rows.size() + 1)
    throw std::invalid_argument("SuccessMatrix: stage row must have stage+1 entries");
  rows.push_back(std::move(row));
}

namespace {

void validate(const SuccessMatrix& R) {
  if (R.rows.empty()) throw std::invalid_argument("SuccessMatrix: empty matrix");
  std::string bad;
  for (std::size_t i = 0; i < R.rows.size(); ++i) {
    if (R.rows[i].size() != i + 1)
      throw std::invalid_argument("SuccessMatrix: row " + std::to_string(i) + " has " +
                                  std::to_string(R.rows[i].size()) + " entries, expected " +
                                  std::to_string(i + 1));
    for (std::size_t j = 0; j < R.rows[i].size(); ++j) {
      const double v = R.rows[i][j];
      if (!(v >= 0.0 && v <= 1.0))
        bad += " (" + std::to_string(i) + "," + std::to_string(j) + ")=" + format_double(v);
    }
  }
  if (!bad.empty()) throw std::invalid_argument("SuccessMatrix: entries outside [0,1]:" + bad);
}

}  // namespace

MetricsReport compute_metrics(const SuccessMatrix& R) {
  validate(R);
  const int m_count = R.task_count();
  MetricsReport out;

  for (int m = 0; m < m_count; ++m) out.fwt += R.at(m, m);
  out.fwt /= m_count;

  // The m = M outer term has an empty inner average; it contributes 0 while
  // the outer sum still divides by M.
  for (int m = 0; m < m_count - 1; ++m) {
    double inner = 0.0;
    for (int q = m + 1; q < m_count; ++q) inner += R.at(m, m) - R.at(q, m);
    out.nbt += inner / (m_count - 1 - m);
  }
  out.nbt /= m_count;

  for (int m = 0; m < m_count; ++m) {
    double inner = 0.0;
    for (int q = m; q < m_count; ++q) inner += R.at(q, m);
    out.auc += inner / (m_count - m);
  }
  out.auc /= m_count;

  for (int j = 0; j < m_count; ++j) out.final_sr += R.at(m_count - 1, j);
  out.final_sr /= m_count;

  return out;
}

std::string success_matrix_to_csv(const SuccessMatrix& R) {
  const int m_count = R.task_count();
  std::string csv = "stage";
  for (int j = 0; j < m_count; ++j) csv += ",task_" + std::to_string(j);
  csv += "\n";
  for (int i = 0; i < m_count; ++i) {
    csv += std::to_string(i);
    for (int j = 0; j < m_count; ++j) {
      csv += ",";
      if (j <= i) csv += format_double(R.at(i, j));
    }
    csv += "\n";
  }
  return csv;
}

SuccessMatrix success_matrix_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("R matrix CSV: missing header");
  SuccessMatrix R;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row_in(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row_in, cell, ',')) cells.push_back(cell);
    if (cells.empty()) continue;
    Vec row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) break;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      if (ec != std::errc{} || ptr != cells[c].data() + cells[c].size())
        throw std::runtime_error("R matrix CSV: bad cell '" + cells[c] + "'");
      row.push_back(v);
    }
    R.add_stage_row(std::move(row));
  }
  if (R.rows.empty()) throw std::runtime_error("R matrix CSV: no data rows");
  return R;
}

void emit_reports(const MetricsReport& report, const SuccessMatrix& R,
                  const std::filesystem::path& out_dir, const ReportMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec && !std::filesystem::is_directory(out_dir))
    throw std::runtime_error("emit_reports: cannot create " + out_dir.string() + ": " +
                             ec.message());

  write_text_file(out_dir / "R_matrix.csv", success_matrix_to_csv(R));

  Json metrics;
  metrics["format_version"] = 1;
  metrics["fwt"] = report.fwt;
  metrics["nbt"] = report.nbt;
  metrics["auc"] = report.auc;
  metrics["final_sr"] = report.final_sr;
  metrics["config_hash"] = meta.config_hash;
  metrics["seed"] = meta.seed;
  metrics["nbt_convention"] =
      "outer sum divides by M (task count); the empty m=M inner average contributes 0";
  write_text_file(out_dir / "metrics.json", metrics.dump(2) + "\n");

  std::string curves = "task_id,stage,success\n";
  for (int i = 0; i < R.task_count(); ++i)
    for (int j = 0; j <= i; ++j)
      curves += std::to_string(j) + "," + std::to_string(i) + "," + format_double(R.at(i, j)) + "\n";
  write_text_file(out_dir / "success_curves.csv", curves);
}

}  // namespace stellar
