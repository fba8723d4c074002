#include "featlens/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace featlens {

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream f(path);
  check(bool(f), "report: cannot write " + path);
  f << "method,transform,metric,value\n";
  for (const auto& r : rows)
    f << r.method << ',' << r.transform << ',' << r.metric << ',' << format_value(r.value) << '\n';
  check(bool(f), "report: short write to " + path);
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream f(path);
  check(bool(f), "report: cannot open " + path);
  std::string line;
  check(bool(std::getline(f, line)), "report: empty file " + path);
  check(line == "method,transform,metric,value", "report: unexpected header in " + path);
  std::vector<ReportRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ReportRow r;
    std::string value;
    check(bool(std::getline(ss, r.method, ',')) && bool(std::getline(ss, r.transform, ',')) &&
              bool(std::getline(ss, r.metric, ',')) && bool(std::getline(ss, value)),
          "report: malformed row in " + path + ": '" + line + "'");
    r.value = std::stod(value);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream f(path);
  check(bool(f), "train log: cannot write " + path);
  f << "step,lr,loss,acc\n";
  for (const auto& r : log.rows) {
    f << r.step << ',' << format_value(r.lr) << ',' << format_value(r.loss) << ',';
    if (r.acc >= 0.0) f << format_value(r.acc);
    f << '\n';
  }
  check(bool(f), "train log: short write to " + path);
}

// ---------------------------------------------------------------------------
// SVG scatter
// ---------------------------------------------------------------------------
namespace {
constexpr int kW = 560, kH = 420;
constexpr int kMargin = 56;

double map_x(double x, double lo, double hi) {
  return kMargin + (x - lo) / (hi - lo) * (kW - 2 * kMargin);
}
double map_y(double y, double lo, double hi) {
  return kH - kMargin - (y - lo) / (hi - lo) * (kH - 2 * kMargin);
}
}  // namespace

void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                       const Regression& fit, const std::string& title) {
  double xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
  for (const auto& p : points) {
    xlo = std::min(xlo, p.x);
    xhi = std::max(xhi, p.x);
    ylo = std::min(ylo, p.y);
    yhi = std::max(yhi, p.y);
  }
  if (xhi - xlo < 1e-9) xhi = xlo + 1.0;
  if (yhi - ylo < 1e-9) yhi = ylo + 1.0;

  std::ofstream f(path);
  check(bool(f), "scatter: cannot write " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  f << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  f << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
    << "</text>\n";

  // axes
  f << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin
    << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kMargin
    << "\" y2=\"" << kMargin << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 14
    << "\" text-anchor=\"middle\" font-size=\"12\">whole-feature correlation</text>\n";
  f << "<text x=\"16\" y=\"" << kH / 2
    << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " << kH / 2
    << ")\">top-1 accuracy</text>\n";
  for (double t = 0.0; t <= 1.0001; t += 0.25) {
    const double xv = xlo + t * (xhi - xlo), yv = ylo + t * (yhi - ylo);
    f << "<text x=\"" << map_x(xv, xlo, xhi) << "\" y=\"" << kH - kMargin + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << format_value(xv) << "</text>\n";
    f << "<text x=\"" << kMargin - 6 << "\" y=\"" << map_y(yv, ylo, yhi) + 4
      << "\" text-anchor=\"end\" font-size=\"10\">" << format_value(yv) << "</text>\n";
  }

  // fitted line clipped to the x range
  const double fy0 = fit.intercept + fit.slope * xlo;
  const double fy1 = fit.intercept + fit.slope * xhi;
  f << "<line x1=\"" << map_x(xlo, xlo, xhi) << "\" y1=\"" << map_y(fy0, ylo, yhi) << "\" x2=\""
    << map_x(xhi, xlo, xhi) << "\" y2=\"" << map_y(fy1, ylo, yhi)
    << "\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n";

  for (const auto& p : points) {
    const double px = map_x(p.x, xlo, xhi), py = map_y(p.y, ylo, yhi);
    if (p.series == 0) {
      f << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"4\" fill=\"#2b6cb0\"/>\n";
    } else {
      f << "<path d=\"M " << px - 5 << ' ' << py << " H " << px + 5 << " M " << px << ' '
        << py - 5 << " V " << py + 5 << "\" stroke=\"#c53030\" stroke-width=\"2\"/>\n";
    }
    f << "<text x=\"" << px + 7 << "\" y=\"" << py - 6 << "\" font-size=\"10\">" << p.label
      << "</text>\n";
  }
  f << "<text x=\"" << kW - kMargin << "\" y=\"" << kMargin - 8
    << "\" text-anchor=\"end\" font-size=\"11\">fit r = " << format_value(fit.r)
    << "</text>\n";
  f << "</svg>\n";
  check(bool(f), "scatter: short write to " + path);
}

}  // namespace featlens
