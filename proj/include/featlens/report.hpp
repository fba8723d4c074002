#pragma once

#include <string>
#include <vector>

#include "featlens/analysis.hpp"
#include "featlens/train.hpp"

namespace featlens {

struct ReportRow {
  std::string method;
  std::string transform;
  std::string metric;
  double value = 0.0;
};

// Fixed-format numeric rendering so fixed-seed reruns emit identical bytes.
std::string format_value(double v);

// CSV with header "method,transform,metric,value".
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);
std::vector<ReportRow> read_report_csv(const std::string& path);

// CSV with header "step,lr,loss,acc"; acc column left empty when unset.
void write_train_log_csv(const TrainLog& log, const std::string& path);

struct ScatterPoint {
  double x = 0.0, y = 0.0;
  std::string label;
  int series = 0;  // 0: plain host points, 1: lens points
};

// Standalone SVG scatter of (correlation, accuracy) with the fitted line.
void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                       const Regression& fit, const std::string& title);

}  // namespace featlens
