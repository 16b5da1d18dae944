#include "refseg/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace refseg {

PixelCounts count_overlap(const MaskU8& pred, const MaskU8& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("iou: mask shapes differ: " + std::to_string(pred.h) + "x" +
                                std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                                std::to_string(gt.w));
  PixelCounts c;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const uint8_t p = pred.data[i], g = gt.data[i];
    if (p > 1 || g > 1) throw std::invalid_argument("iou: masks must be strictly binary");
    c.intersection += (p & g);
    c.unions += (p | g);
  }
  return c;
}

double iou_from_counts(const PixelCounts& c) {
  if (c.unions == 0) return 1.0;
  return static_cast<double>(c.intersection) / static_cast<double>(c.unions);
}

double iou(const MaskU8& pred, const MaskU8& gt) { return iou_from_counts(count_overlap(pred, gt)); }

double giou(const std::vector<double>& per_image_ious) {
  if (per_image_ious.empty()) throw std::invalid_argument("giou: empty list");
  double acc = 0.0;
  for (double v : per_image_ious) acc += v;
  return acc / static_cast<double>(per_image_ious.size());
}

double ciou(const std::vector<PixelCounts>& counts) {
  if (counts.empty()) throw std::invalid_argument("ciou: empty list");
  PixelCounts total;
  for (const auto& c : counts) {
    total.intersection += c.intersection;
    total.unions += c.unions;
  }
  return iou_from_counts(total);
}

double precision_at(const std::vector<double>& per_image_ious, double threshold) {
  if (per_image_ious.empty()) throw std::invalid_argument("precision_at: empty list");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("precision_at: threshold must be in (0,1)");
  int64_t hits = 0;
  for (double v : per_image_ious) hits += v >= threshold ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(per_image_ious.size());
}

void EvalAccumulator::add(const MaskU8& pred, const MaskU8& gt) {
  auto c = count_overlap(pred, gt);
  counts_.push_back(c);
  ious_.push_back(iou_from_counts(c));
}

EvalReport EvalAccumulator::report() const {
  EvalReport r;
  r.per_image_iou = ious_;
  r.giou = giou(ious_);
  r.ciou = ciou(counts_);
  for (int t : pr_thresholds_percent()) r.pr.emplace_back(t, precision_at(ious_, t / 100.0));
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["giou"] = giou;
  j["ciou"] = ciou;
  for (const auto& [t, v] : pr) j["pr"]["0." + std::to_string(t / 10)] = v;
  j["per_image_iou"] = per_image_iou;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.giou = j.at("giou").get<double>();
  r.ciou = j.at("ciou").get<double>();
  for (int t : pr_thresholds_percent()) {
    const std::string key = "0." + std::to_string(t / 10);
    r.pr.emplace_back(t, j.at("pr").at(key).get<double>());
  }
  if (j.contains("per_image_iou")) r.per_image_iou = j["per_image_iou"].get<std::vector<double>>();
  return r;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string pad_to(const std::string& s, size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

constexpr size_t kColWidth = 9;

}  // namespace

std::string metrics_table_header(const std::vector<std::string>& label_cols) {
  std::string out;
  for (const auto& l : label_cols) out += pad_to(l, kColWidth);
  for (int t : pr_thresholds_percent()) out += pad_to("Pr@0." + std::to_string(t / 10), kColWidth);
  out += pad_to("cIoU", kColWidth);
  out += pad_to("gIoU", kColWidth);
  return out;
}

std::string metrics_table_row(const std::vector<std::string>& labels, const EvalReport& r) {
  std::string out;
  for (const auto& l : labels) out += pad_to(l, kColWidth);
  for (const auto& [t, v] : r.pr) out += pad_to(fixed2(v), kColWidth);
  out += pad_to(fixed2(100.0 * r.ciou), kColWidth);
  out += pad_to(fixed2(100.0 * r.giou), kColWidth);
  return out;
}

}  // namespace refseg
