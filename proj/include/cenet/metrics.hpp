#pragma once

// Training metrics logs: reading the line-delimited records and exporting
// them as CSV and SVG loss curves.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cenet {

struct MetricsRow {
  long step = 0;
  std::string domain;
  std::map<std::string, double> values;  // lr, L_ID, L_Tri, L_IE, L_LD, total
};

std::vector<MetricsRow> read_metrics_log(const std::filesystem::path& path);

/// step,domain,<value columns in first-seen order>
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

/// One panel per value column, one polyline per domain.
void write_metrics_svg(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

}  // namespace cenet
