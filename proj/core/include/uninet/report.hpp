#ifndef UNINET_REPORT_HPP
#define UNINET_REPORT_HPP

#include <optional>
#include <string>
#include <vector>

namespace uninet::report {

struct SummaryRow {
    std::string cell, metric;
    std::optional<double> clean, attacked, ratio;
    std::string direction;
};

std::vector<SummaryRow> read_summary_csv(const std::string& path);

// grouped metric-ratio bars per task; semantic tasks shaded separately from
// geometric tasks; y axis labeled "metric ratio"
void write_ratio_bars_svg(const std::string& path, const std::vector<SummaryRow>& rows);

// one row per metric: clean value, per-cell attacked values, per-cell ratios
void write_ratio_table_csv(const std::string& path, const std::vector<SummaryRow>& rows);

// four panels for a class-swap cell: per-class AP, cls loss, reg loss,
// mean aspect ratio, clean vs attacked
void write_swap_panels_svg(const std::string& path, const std::vector<SummaryRow>& rows);

}  // namespace uninet::report

#endif
