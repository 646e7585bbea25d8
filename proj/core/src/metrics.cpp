#include "uninet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "uninet/errors.hpp"
#include "uninet/losses.hpp"

namespace uninet::metrics {

namespace {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct ScoredPred {
    double score;
    int image;
    int index_in_image;  // stable tie-break
};

}  // namespace

ApResult average_precision(const std::vector<ApImage>& images, ApKind kind, int num_classes,
                           const std::vector<double>& iou_thresholds) {
    ApResult res;
    res.per_class.assign(static_cast<size_t>(num_classes), std::nullopt);

    for (int cls = 0; cls < num_classes; ++cls) {
        int total_gt = 0;
        std::vector<ScoredPred> preds;
        for (int im = 0; im < static_cast<int>(images.size()); ++im) {
            for (const auto& gt : *images[static_cast<size_t>(im)].gts)
                if (gt.class_id == cls) ++total_gt;
            const auto& dets = *images[static_cast<size_t>(im)].dets;
            for (int di = 0; di < static_cast<int>(dets.size()); ++di)
                if (dets[static_cast<size_t>(di)].class_id == cls)
                    preds.push_back({dets[static_cast<size_t>(di)].score, im, di});
        }
        if (total_gt == 0) continue;  // class absent from GT: excluded from the mean

        std::sort(preds.begin(), preds.end(), [](const ScoredPred& a, const ScoredPred& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image != b.image) return a.image < b.image;
            return a.index_in_image < b.index_in_image;
        });

        double ap_sum = 0.0;
        for (double thr : iou_thresholds) {
            // greedy matching in score order; each GT matched at most once
            std::vector<std::vector<uint8_t>> gt_used(images.size());
            for (size_t im = 0; im < images.size(); ++im)
                gt_used[im].assign(images[im].gts->size(), 0);

            std::vector<uint8_t> is_tp(preds.size(), 0);
            for (size_t pi = 0; pi < preds.size(); ++pi) {
                const ApImage& img = images[static_cast<size_t>(preds[pi].image)];
                const model::Detection& det =
                    (*img.dets)[static_cast<size_t>(preds[pi].index_in_image)];
                double best_iou = 0.0;
                int best_gt = -1;
                for (int gi = 0; gi < static_cast<int>(img.gts->size()); ++gi) {
                    const auto& gt = (*img.gts)[static_cast<size_t>(gi)];
                    if (gt.class_id != cls || gt_used[static_cast<size_t>(preds[pi].image)][static_cast<size_t>(gi)])
                        continue;
                    const double iou = kind == ApKind::Box ? model::box_iou(det.box, gt.box)
                                                           : mask_iou(det.mask, gt.mask);
                    if (iou > best_iou) {
                        best_iou = iou;
                        best_gt = gi;
                    }
                }
                if (best_gt >= 0 && best_iou >= thr) {
                    is_tp[pi] = 1;
                    gt_used[static_cast<size_t>(preds[pi].image)][static_cast<size_t>(best_gt)] = 1;
                }
            }

            // 101-point interpolated AP
            std::vector<double> precisions, recalls;
            int tp = 0, fp = 0;
            for (size_t pi = 0; pi < preds.size(); ++pi) {
                if (is_tp[pi])
                    ++tp;
                else
                    ++fp;
                precisions.push_back(static_cast<double>(tp) / (tp + fp));
                recalls.push_back(static_cast<double>(tp) / total_gt);
            }
            for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i)
                precisions[static_cast<size_t>(i)] =
                    std::max(precisions[static_cast<size_t>(i)], precisions[static_cast<size_t>(i + 1)]);
            double ap = 0.0;
            for (int r = 0; r <= 100; ++r) {
                const double recall = r / 100.0;
                auto it = std::lower_bound(recalls.begin(), recalls.end(), recall);
                if (it != recalls.end()) ap += precisions[static_cast<size_t>(it - recalls.begin())];
            }
            ap_sum += ap / 101.0;
        }
        res.per_class[static_cast<size_t>(cls)] = ap_sum / static_cast<double>(iou_thresholds.size());
    }

    double sum = 0.0;
    int n = 0;
    for (const auto& v : res.per_class)
        if (v) {
            sum += *v;
            ++n;
        }
    if (n > 0) res.map = sum / n;
    return res;
}

MiouAccumulator::MiouAccumulator(int num_classes)
    : num_classes_(num_classes),
      confusion_(static_cast<size_t>(num_classes) * num_classes, 0) {}

void MiouAccumulator::add(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("miou: size mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] < 0 || gt[i] >= num_classes_ || pred[i] < 0 || pred[i] >= num_classes_)
            throw std::invalid_argument("miou: class index out of range");
        ++confusion_[static_cast<size_t>(gt[i]) * num_classes_ + pred[i]];
    }
}

void MiouAccumulator::merge(const MiouAccumulator& other) {
    if (other.num_classes_ != num_classes_) throw std::invalid_argument("miou merge: class mismatch");
    for (size_t i = 0; i < confusion_.size(); ++i) confusion_[i] += other.confusion_[i];
}

MiouResult MiouAccumulator::result() const {
    MiouResult r;
    r.per_class.assign(static_cast<size_t>(num_classes_), std::nullopt);
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < num_classes_; ++c) {
        int64_t gt_total = 0, pred_total = 0;
        for (int j = 0; j < num_classes_; ++j) {
            gt_total += confusion_[static_cast<size_t>(c) * num_classes_ + j];
            pred_total += confusion_[static_cast<size_t>(j) * num_classes_ + c];
        }
        if (gt_total == 0) continue;  // class absent from GT
        const int64_t inter = confusion_[static_cast<size_t>(c) * num_classes_ + c];
        const int64_t uni = gt_total + pred_total - inter;
        const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        r.per_class[static_cast<size_t>(c)] = iou;
        sum += iou;
        ++n;
    }
    if (n > 0) r.miou = sum / n;
    return r;
}

MiouResult miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes) {
    MiouAccumulator acc(num_classes);
    acc.add(pred, gt);
    return acc.result();
}

bool depth_pixel_valid(double gt) {
    return gt >= losses::kDepthValidMin && gt <= losses::kDepthValidMax;
}

void DepthAccumulator::add(const Tensor& pred, const Tensor& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("depth metrics: size mismatch");
    for (int64_t i = 0; i < pred.size(); ++i) {
        if (!depth_pixel_valid(gt[i])) continue;
        const double e = pred[i] - gt[i];
        sq_sum_ += e * e;
        rel_sum_ += std::fabs(e) / gt[i];
        ++n_;
    }
}

DepthErrors DepthAccumulator::result() const {
    DepthErrors r;
    r.valid_pixels = n_;
    if (n_ > 0) {
        r.rmse = std::sqrt(sq_sum_ / static_cast<double>(n_));
        r.abs_rel = rel_sum_ / static_cast<double>(n_);
    }
    return r;
}

DepthErrors depth_metrics(const Tensor& pred, const Tensor& gt) {
    DepthAccumulator acc;
    acc.add(pred, gt);
    return acc.result();
}

void InstanceDepthAccumulator::add(const std::vector<model::Detection>& dets,
                                   const std::vector<scenegen::InstanceAnnotation>& gts) {
    std::vector<int> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[static_cast<size_t>(a)].score > dets[static_cast<size_t>(b)].score; });
    std::vector<uint8_t> used(gts.size(), 0);
    for (int di : order) {
        const auto& det = dets[static_cast<size_t>(di)];
        double best_iou = 0.0;
        int best = -1;
        for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
            if (used[static_cast<size_t>(gi)] || gts[static_cast<size_t>(gi)].class_id != det.class_id)
                continue;
            const double iou = model::box_iou(det.box, gts[static_cast<size_t>(gi)].box);
            if (iou > best_iou) {
                best_iou = iou;
                best = gi;
            }
        }
        if (best >= 0 && best_iou >= iou_) {
            used[static_cast<size_t>(best)] = 1;
            const double d = std::fabs(det.median_depth - gts[static_cast<size_t>(best)].median_depth);
            l1_sum_ += d;
            rel_sum_ += d / gts[static_cast<size_t>(best)].median_depth;
            ++n_;
        }
    }
}

InstanceDepthErrors InstanceDepthAccumulator::result() const {
    InstanceDepthErrors r;
    r.matches = n_;
    if (n_ > 0) {
        r.l1 = l1_sum_ / n_;
        r.abs_rel = rel_sum_ / n_;
    }
    return r;
}

InstanceDepthErrors instance_depth_metrics(const std::vector<model::Detection>& dets,
                                           const std::vector<scenegen::InstanceAnnotation>& gts,
                                           double matching_iou) {
    InstanceDepthAccumulator acc(matching_iou);
    acc.add(dets, gts);
    return acc.result();
}

std::optional<double> metric_ratio(double before, double after, Direction dir) {
    if (dir == Direction::HigherBetter) {
        if (before <= 0.0) return std::nullopt;
        return after / before;
    }
    if (after <= 0.0) return std::nullopt;
    return before / after;
}

double delta_mtl(const std::vector<double>& mtl_metrics, const std::vector<double>& single_metrics,
                 const std::vector<Direction>& directions) {
    if (mtl_metrics.size() != single_metrics.size() || mtl_metrics.size() != directions.size())
        throw std::invalid_argument("delta_mtl: size mismatch");
    if (mtl_metrics.empty()) throw std::invalid_argument("delta_mtl: no metrics");
    double acc = 0.0;
    for (size_t i = 0; i < mtl_metrics.size(); ++i) {
        const double sign = directions[i] == Direction::LowerBetter ? -1.0 : 1.0;
        acc += sign * (mtl_metrics[i] - single_metrics[i]) / single_metrics[i];
    }
    return 100.0 * acc / static_cast<double>(mtl_metrics.size());
}

void ClassRegionAccumulator::add(const std::vector<int>& pred_seg, const Tensor& pred_depth,
                                 const std::vector<int>& gt_seg, const Tensor& gt_depth) {
    for (size_t i = 0; i < gt_seg.size(); ++i) {
        const bool pg = gt_seg[i] == target_;
        const bool pp = pred_seg[i] == target_;
        inter_ += pg && pp;
        uni_ += pg || pp;
        if (pg && depth_pixel_valid(gt_depth[static_cast<int64_t>(i)])) {
            const double e = pred_depth[static_cast<int64_t>(i)] - gt_depth[static_cast<int64_t>(i)];
            sq_sum_ += e * e;
            ++n_depth_;
        }
    }
}

ClassRegionMetrics ClassRegionAccumulator::result() const {
    ClassRegionMetrics r;
    if (uni_ > 0) r.class_iou = static_cast<double>(inter_) / static_cast<double>(uni_);
    if (n_depth_ > 0) r.region_rmse = std::sqrt(sq_sum_ / static_cast<double>(n_depth_));
    return r;
}

ClassRegionMetrics class_region_metrics(const std::vector<int>& pred_seg, const Tensor& pred_depth,
                                        const std::vector<int>& gt_seg, const Tensor& gt_depth,
                                        int target_class) {
    ClassRegionAccumulator acc(target_class);
    acc.add(pred_seg, pred_depth, gt_seg, gt_depth);
    return acc.result();
}

std::optional<double> mean_aspect_ratio(const std::vector<model::Detection>& dets, int class_id,
                                        double score_thresh) {
    double sum = 0.0;
    int n = 0;
    for (const auto& d : dets) {
        if (d.class_id != class_id || d.score < score_thresh) continue;
        const double w = d.box[2] - d.box[0], h = d.box[3] - d.box[1];
        if (h <= 0.0) continue;
        sum += w / h;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

// -------------------------------------------------------------- MetricReport

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void emit(std::ostringstream& out, const std::string& name, const std::optional<double>& v) {
    out << name << ',' << (v ? fmt_double(*v) : "absent") << ','
        << (metric_direction(name) == Direction::HigherBetter ? "higher" : "lower") << "\n";
}

void emit_vec(std::ostringstream& out, const std::string& prefix,
              const std::vector<std::optional<double>>& v) {
    for (size_t i = 0; i < v.size(); ++i)
        emit(out, prefix + "." + std::to_string(i), v[i]);
}

}  // namespace

Direction metric_direction(const std::string& name) {
    if (name.rfind("depth_rmse", 0) == 0 || name.rfind("depth_abs_rel", 0) == 0 ||
        name.rfind("id_l1", 0) == 0 || name.rfind("id_abs_rel", 0) == 0 ||
        name.rfind("region_rmse", 0) == 0 || name.find("loss") != std::string::npos)
        return Direction::LowerBetter;
    return Direction::HigherBetter;
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value,direction\n";
    emit(out, "map_box", map_box);
    emit(out, "map_mask", map_mask);
    emit(out, "miou", miou);
    emit(out, "depth_rmse", depth_rmse);
    emit(out, "depth_abs_rel", depth_abs_rel);
    emit(out, "id_l1", id_l1);
    emit(out, "id_abs_rel", id_abs_rel);
    emit_vec(out, "ap_box", per_class_ap_box);
    emit_vec(out, "ap_mask", per_class_ap_mask);
    emit_vec(out, "iou", per_class_iou);
    out << "num_samples," << num_samples << ",higher\n";
    return out.str();
}

MetricReport MetricReport::from_csv(const std::string& text) {
    MetricReport r;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("metric,value,direction", 0) != 0)
        throw FormatError("metric report: missing header row");
    std::map<std::string, std::optional<double>> kv;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw FormatError("metric report: malformed row: " + line);
        const std::string name = line.substr(0, c1);
        const std::string val = line.substr(c1 + 1, c2 - c1 - 1);
        if (val == "absent")
            kv[name] = std::nullopt;
        else
            kv[name] = std::stod(val);
    }
    auto get = [&](const std::string& n) -> std::optional<double> {
        auto it = kv.find(n);
        return it == kv.end() ? std::nullopt : it->second;
    };
    r.map_box = get("map_box");
    r.map_mask = get("map_mask");
    r.miou = get("miou");
    r.depth_rmse = get("depth_rmse");
    r.depth_abs_rel = get("depth_abs_rel");
    r.id_l1 = get("id_l1");
    r.id_abs_rel = get("id_abs_rel");
    for (const char* prefix : {"ap_box", "ap_mask", "iou"}) {
        std::vector<std::optional<double>> vec;
        for (int i = 0;; ++i) {
            auto it = kv.find(std::string(prefix) + "." + std::to_string(i));
            if (it == kv.end()) break;
            vec.push_back(it->second);
        }
        if (std::string(prefix) == "ap_box")
            r.per_class_ap_box = vec;
        else if (std::string(prefix) == "ap_mask")
            r.per_class_ap_mask = vec;
        else
            r.per_class_iou = vec;
    }
    if (auto n = get("num_samples")) r.num_samples = static_cast<int>(*n);
    return r;
}

}  // namespace uninet::metrics
