#include "uninet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "uninet/errors.hpp"

namespace uninet::report {

namespace {

std::optional<double> parse_cell(const std::string& s) {
    if (s == "absent" || s.empty()) return std::nullopt;
    return std::stod(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

// task metrics shown in the grouped ratio plot, with their group
struct PlotMetric {
    const char* metric;
    const char* label;
    bool semantic;
};
constexpr PlotMetric kPlotMetrics[] = {
    {"map_box", "OD", true},   {"miou", "SS", true},      {"map_mask", "IS", true},
    {"depth_rmse", "D", false}, {"id_l1", "ID", false},
};

const char* kBarColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                            "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

}  // namespace

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open summary: " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("cell,metric,clean,attacked,ratio,direction", 0) != 0)
        throw FormatError("summary csv: bad header in " + path);
    std::vector<SummaryRow> rows;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto parts = split_csv_line(line);
        if (parts.size() != 6)
            throw FormatError("summary csv: malformed line " + std::to_string(lineno) + " in " + path);
        SummaryRow r;
        r.cell = parts[0];
        r.metric = parts[1];
        r.clean = parse_cell(parts[2]);
        r.attacked = parse_cell(parts[3]);
        r.ratio = parse_cell(parts[4]);
        r.direction = parts[5];
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_ratio_bars_svg(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::vector<std::string> cells;
    std::map<std::pair<std::string, std::string>, std::optional<double>> ratio;
    for (const auto& r : rows) {
        if (std::find(cells.begin(), cells.end(), r.cell) == cells.end()) cells.push_back(r.cell);
        ratio[{r.cell, r.metric}] = r.ratio;
    }

    const int ngroups = static_cast<int>(std::size(kPlotMetrics));
    const int nbars = std::max<int>(1, static_cast<int>(cells.size()));
    const double bar_w = 18.0, gap = 14.0;
    const double group_w = nbars * bar_w + gap * 2.0;
    const double plot_h = 220.0, left = 70.0, top = 40.0, bottom = 70.0;
    const double width = left + ngroups * group_w + 40.0;
    const double height = top + plot_h + bottom;

    double max_ratio = 1.0;
    for (const auto& [k, v] : ratio)
        if (v) max_ratio = std::max(max_ratio, *v);
    max_ratio = std::min(max_ratio, 3.0);  // keep bars readable when ratios blow up
    auto ybar = [&](double v) { return top + plot_h - plot_h * std::min(v, max_ratio) / max_ratio; };

    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << static_cast<int>(width)
      << "\" height=\"" << static_cast<int>(height) << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // semantic / geometric shading
    int sem_groups = 0;
    for (const auto& m : kPlotMetrics) sem_groups += m.semantic ? 1 : 0;
    f << "<rect x=\"" << fmt2(left) << "\" y=\"" << fmt2(top) << "\" width=\""
      << fmt2(sem_groups * group_w) << "\" height=\"" << fmt2(plot_h)
      << "\" fill=\"#e7f4e7\"/>\n";
    f << "<rect x=\"" << fmt2(left + sem_groups * group_w) << "\" y=\"" << fmt2(top) << "\" width=\""
      << fmt2((ngroups - sem_groups) * group_w) << "\" height=\"" << fmt2(plot_h)
      << "\" fill=\"#f9e7e7\"/>\n";

    // axes and ticks
    f << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(top) << "\" x2=\"" << fmt2(left)
      << "\" y2=\"" << fmt2(top + plot_h) << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(top + plot_h) << "\" x2=\""
      << fmt2(left + ngroups * group_w) << "\" y2=\"" << fmt2(top + plot_h)
      << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = max_ratio * t / 4.0;
        const double y = ybar(v);
        f << "<text x=\"" << fmt2(left - 8) << "\" y=\"" << fmt2(y + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << fmt2(v) << "</text>\n";
        f << "<line x1=\"" << fmt2(left - 4) << "\" y1=\"" << fmt2(y) << "\" x2=\"" << fmt2(left)
          << "\" y2=\"" << fmt2(y) << "\" stroke=\"black\"/>\n";
    }
    f << "<text x=\"16\" y=\"" << fmt2(top + plot_h / 2)
      << "\" font-size=\"12\" transform=\"rotate(-90 16 " << fmt2(top + plot_h / 2)
      << ")\" text-anchor=\"middle\">metric ratio</text>\n";

    for (int gi = 0; gi < ngroups; ++gi) {
        const double gx = left + gi * group_w + gap;
        for (int ci = 0; ci < static_cast<int>(cells.size()); ++ci) {
            const auto it = ratio.find({cells[static_cast<size_t>(ci)], kPlotMetrics[gi].metric});
            if (it == ratio.end() || !it->second) continue;
            const double v = *it->second;
            const double y = ybar(v);
            f << "<rect x=\"" << fmt2(gx + ci * bar_w) << "\" y=\"" << fmt2(y) << "\" width=\""
              << fmt2(bar_w - 3) << "\" height=\"" << fmt2(top + plot_h - y) << "\" fill=\""
              << kBarColors[ci % 8] << "\"/>\n";
        }
        f << "<text x=\"" << fmt2(gx + (cells.size() * bar_w) / 2) << "\" y=\""
          << fmt2(top + plot_h + 18) << "\" text-anchor=\"middle\" font-size=\"12\">"
          << kPlotMetrics[gi].label << "</text>\n";
    }

    // legend
    double ly = top + plot_h + 36;
    for (int ci = 0; ci < static_cast<int>(cells.size()); ++ci) {
        const double lx = left + (ci % 3) * 180.0;
        if (ci > 0 && ci % 3 == 0) ly += 16;
        f << "<rect x=\"" << fmt2(lx) << "\" y=\"" << fmt2(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
          << kBarColors[ci % 8] << "\"/>\n";
        f << "<text x=\"" << fmt2(lx + 14) << "\" y=\"" << fmt2(ly) << "\" font-size=\"11\">"
          << cells[static_cast<size_t>(ci)] << "</text>\n";
    }
    f << "</svg>\n";
}

void write_ratio_table_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::vector<std::string> cells;
    std::vector<std::string> metrics;
    std::map<std::pair<std::string, std::string>, const SummaryRow*> by_key;
    for (const auto& r : rows) {
        if (std::find(cells.begin(), cells.end(), r.cell) == cells.end()) cells.push_back(r.cell);
        if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end())
            metrics.push_back(r.metric);
        by_key[{r.cell, r.metric}] = &r;
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "metric,clean";
    for (const auto& c : cells) f << ',' << c;
    for (const auto& c : cells) f << ",ratio_" << c;
    f << "\n";
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string("absent");
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", *v);
        return std::string(buf);
    };
    for (const auto& m : metrics) {
        std::optional<double> clean;
        for (const auto& c : cells) {
            auto it = by_key.find({c, m});
            if (it != by_key.end() && it->second->clean) clean = it->second->clean;
        }
        f << m << ',' << fmt(clean);
        for (const auto& c : cells) {
            auto it = by_key.find({c, m});
            f << ',' << fmt(it != by_key.end() ? it->second->attacked : std::nullopt);
        }
        for (const auto& c : cells) {
            auto it = by_key.find({c, m});
            f << ',' << fmt(it != by_key.end() ? it->second->ratio : std::nullopt);
        }
        f << "\n";
    }
}

void write_swap_panels_svg(const std::string& path, const std::vector<SummaryRow>& rows) {
    // collect per-class values for the four panel families
    struct Panel {
        std::string title;
        std::vector<std::string> labels;
        std::vector<double> clean, attacked;
    };
    const char* prefixes[] = {"ap_box.", "loss_cls.", "loss_reg.", "aspect_ratio."};
    const char* titles[] = {"AP", "cls loss", "reg loss", "mean aspect ratio"};
    std::vector<Panel> panels(4);
    for (int i = 0; i < 4; ++i) panels[static_cast<size_t>(i)].title = titles[i];
    for (const auto& r : rows) {
        for (int i = 0; i < 4; ++i) {
            const std::string pref = prefixes[i];
            if (r.metric.rfind(pref, 0) != 0) continue;
            // numeric per-class suffixes are internal; keep named classes only
            const std::string label = r.metric.substr(pref.size());
            if (!r.clean || !r.attacked) continue;
            if (label.find_first_not_of("0123456789") == std::string::npos) continue;
            panels[static_cast<size_t>(i)].labels.push_back(label);
            panels[static_cast<size_t>(i)].clean.push_back(*r.clean);
            panels[static_cast<size_t>(i)].attacked.push_back(*r.attacked);
        }
    }

    const double pw = 230.0, ph = 190.0, margin = 45.0;
    const double width = 2 * pw + 3 * margin, height = 2 * ph + 3 * margin + 20;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << static_cast<int>(width)
      << "\" height=\"" << static_cast<int>(height) << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (int pi = 0; pi < 4; ++pi) {
        const Panel& p = panels[static_cast<size_t>(pi)];
        const double ox = margin + (pi % 2) * (pw + margin);
        const double oy = margin + (pi / 2) * (ph + margin);
        double vmax = 1e-9;
        for (double v : p.clean) vmax = std::max(vmax, v);
        for (double v : p.attacked) vmax = std::max(vmax, v);
        if (p.title == "mean aspect ratio") vmax = std::max(vmax, 1.2);
        f << "<text x=\"" << fmt2(ox + pw / 2) << "\" y=\"" << fmt2(oy - 8)
          << "\" text-anchor=\"middle\" font-size=\"12\">" << p.title << "</text>\n";
        f << "<line x1=\"" << fmt2(ox) << "\" y1=\"" << fmt2(oy) << "\" x2=\"" << fmt2(ox)
          << "\" y2=\"" << fmt2(oy + ph) << "\" stroke=\"black\"/>\n";
        f << "<line x1=\"" << fmt2(ox) << "\" y1=\"" << fmt2(oy + ph) << "\" x2=\"" << fmt2(ox + pw)
          << "\" y2=\"" << fmt2(oy + ph) << "\" stroke=\"black\"/>\n";
        const int n = static_cast<int>(p.labels.size());
        for (int i = 0; i < n; ++i) {
            const double gx = ox + 24 + i * 92.0;
            const double hc = ph * p.clean[static_cast<size_t>(i)] / vmax;
            const double ha = ph * p.attacked[static_cast<size_t>(i)] / vmax;
            f << "<rect x=\"" << fmt2(gx) << "\" y=\"" << fmt2(oy + ph - hc)
              << "\" width=\"26\" height=\"" << fmt2(hc) << "\" fill=\"#4c72b0\"/>\n";
            f << "<rect x=\"" << fmt2(gx + 30) << "\" y=\"" << fmt2(oy + ph - ha)
              << "\" width=\"26\" height=\"" << fmt2(ha) << "\" fill=\"#c44e52\"/>\n";
            f << "<text x=\"" << fmt2(gx + 28) << "\" y=\"" << fmt2(oy + ph + 14)
              << "\" text-anchor=\"middle\" font-size=\"11\">" << p.labels[static_cast<size_t>(i)]
              << "</text>\n";
        }
        if (p.title == "mean aspect ratio") {
            const double y1 = oy + ph - ph * std::min(1.0, 1.0 / vmax * vmax) * (1.0 / vmax);
            f << "<line x1=\"" << fmt2(ox) << "\" y1=\"" << fmt2(oy + ph - ph / vmax) << "\" x2=\""
              << fmt2(ox + pw) << "\" y2=\"" << fmt2(oy + ph - ph / vmax)
              << "\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";
            (void)y1;
        }
    }
    f << "<rect x=\"" << fmt2(margin) << "\" y=\"" << fmt2(height - 24)
      << "\" width=\"10\" height=\"10\" fill=\"#4c72b0\"/>\n";
    f << "<text x=\"" << fmt2(margin + 14) << "\" y=\"" << fmt2(height - 15)
      << "\" font-size=\"11\">clean</text>\n";
    f << "<rect x=\"" << fmt2(margin + 70) << "\" y=\"" << fmt2(height - 24)
      << "\" width=\"10\" height=\"10\" fill=\"#c44e52\"/>\n";
    f << "<text x=\"" << fmt2(margin + 84) << "\" y=\"" << fmt2(height - 15)
      << "\" font-size=\"11\">attacked</text>\n";
    f << "</svg>\n";
}

}  // namespace uninet::report
