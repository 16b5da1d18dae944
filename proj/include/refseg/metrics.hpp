#pragma once

// Segmentation metrics: per-image IoU, gIoU (mean of per-image IoUs),
// cIoU (cumulative intersection over cumulative union) and Pr@X.

#include "refseg/image.hpp"

#include <string>
#include <vector>

namespace refseg {

struct PixelCounts {
  int64_t intersection = 0;
  int64_t unions = 0;
};

// Validates shapes and binarity.
PixelCounts count_overlap(const MaskU8& pred, const MaskU8& gt);

// The empty-vs-empty convention lives here: union 0 means both masks agree
// the target is absent, scored as 1.0.
double iou_from_counts(const PixelCounts& c);

double iou(const MaskU8& pred, const MaskU8& gt);
double giou(const std::vector<double>& per_image_ious);
double ciou(const std::vector<PixelCounts>& counts);

// Percentage of images with IoU >= threshold; threshold must be in (0,1).
double precision_at(const std::vector<double>& per_image_ious, double threshold);

inline const std::vector<int>& pr_thresholds_percent() {
  static const std::vector<int> t = {50, 60, 70, 80, 90};
  return t;
}

struct EvalReport {
  double giou = 0.0;                       // fraction
  double ciou = 0.0;                       // fraction
  std::vector<std::pair<int, double>> pr;  // threshold percent -> percentage
  std::vector<double> per_image_iou;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

class EvalAccumulator {
 public:
  void add(const MaskU8& pred, const MaskU8& gt);
  EvalReport report() const;
  size_t count() const { return ious_.size(); }

 private:
  std::vector<double> ious_;
  std::vector<PixelCounts> counts_;
};

// Plain-text tables in the published column order:
// Pr@0.5 Pr@0.6 Pr@0.7 Pr@0.8 Pr@0.9 cIoU gIoU.
std::string metrics_table_header(const std::vector<std::string>& label_cols);
std::string metrics_table_row(const std::vector<std::string>& labels, const EvalReport& r);

}  // namespace refseg
