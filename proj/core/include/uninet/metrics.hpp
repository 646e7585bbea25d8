#ifndef UNINET_METRICS_HPP
#define UNINET_METRICS_HPP

#include <optional>
#include <string>
#include <vector>

#include "uninet/model.hpp"
#include "uninet/scenegen.hpp"
#include "uninet/tensor.hpp"

namespace uninet::metrics {

enum class Direction { HigherBetter, LowerBetter };

enum class ApKind { Box, Mask };

// per-image inputs for detection evaluation
struct ApImage {
    const std::vector<model::Detection>* dets;
    const std::vector<scenegen::InstanceAnnotation>* gts;
    int h = 0, w = 0;
};

inline std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 9; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

struct ApResult {
    std::optional<double> map;                       // mean over classes with GT
    std::vector<std::optional<double>> per_class;    // absent where no GT
};

ApResult average_precision(const std::vector<ApImage>& images, ApKind kind, int num_classes,
                           const std::vector<double>& iou_thresholds = coco_iou_thresholds());

struct MiouResult {
    std::optional<double> miou;
    std::vector<std::optional<double>> per_class;
};

// accumulates a confusion matrix across images
class MiouAccumulator {
public:
    explicit MiouAccumulator(int num_classes);
    void add(const std::vector<int>& pred, const std::vector<int>& gt);
    MiouResult result() const;
    void merge(const MiouAccumulator& other);

private:
    int num_classes_;
    std::vector<int64_t> confusion_;  // num_classes x num_classes
};

MiouResult miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes);

// depth-evaluation validity: ignore GT outside [1e-3, 80]
bool depth_pixel_valid(double gt);

struct DepthErrors {
    std::optional<double> rmse, abs_rel;
    int64_t valid_pixels = 0;
};

class DepthAccumulator {
public:
    void add(const Tensor& pred, const Tensor& gt);
    DepthErrors result() const;

private:
    double sq_sum_ = 0.0, rel_sum_ = 0.0;
    int64_t n_ = 0;
};

DepthErrors depth_metrics(const Tensor& pred, const Tensor& gt);

struct InstanceDepthErrors {
    std::optional<double> l1, abs_rel;
    int matches = 0;
};

class InstanceDepthAccumulator {
public:
    explicit InstanceDepthAccumulator(double matching_iou = 0.5) : iou_(matching_iou) {}
    void add(const std::vector<model::Detection>& dets,
             const std::vector<scenegen::InstanceAnnotation>& gts);
    InstanceDepthErrors result() const;

private:
    double iou_;
    double l1_sum_ = 0.0, rel_sum_ = 0.0;
    int n_ = 0;
};

InstanceDepthErrors instance_depth_metrics(const std::vector<model::Detection>& dets,
                                           const std::vector<scenegen::InstanceAnnotation>& gts,
                                           double matching_iou = 0.5);

// fraction of performance retained after an attack
std::optional<double> metric_ratio(double before, double after, Direction dir);

// signed mean relative improvement over single-task baselines, in percent
double delta_mtl(const std::vector<double>& mtl_metrics, const std::vector<double>& single_metrics,
                 const std::vector<Direction>& directions);

struct ClassRegionMetrics {
    std::optional<double> class_iou;
    std::optional<double> region_rmse;
};

class ClassRegionAccumulator {
public:
    explicit ClassRegionAccumulator(int target_class) : target_(target_class) {}
    void add(const std::vector<int>& pred_seg, const Tensor& pred_depth,
             const std::vector<int>& gt_seg, const Tensor& gt_depth);
    ClassRegionMetrics result() const;

private:
    int target_;
    int64_t inter_ = 0, uni_ = 0;
    double sq_sum_ = 0.0;
    int64_t n_depth_ = 0;
};

ClassRegionMetrics class_region_metrics(const std::vector<int>& pred_seg, const Tensor& pred_depth,
                                        const std::vector<int>& gt_seg, const Tensor& gt_depth,
                                        int target_class);

std::optional<double> mean_aspect_ratio(const std::vector<model::Detection>& dets, int class_id,
                                        double score_thresh = 0.0);

// one evaluation run; absent fields mean the task was not evaluated
struct MetricReport {
    std::optional<double> map_box, map_mask, miou, depth_rmse, depth_abs_rel, id_l1, id_abs_rel;
    std::vector<std::optional<double>> per_class_ap_box, per_class_ap_mask, per_class_iou;
    int num_samples = 0;

    std::string to_csv() const;
    static MetricReport from_csv(const std::string& text);
};

Direction metric_direction(const std::string& metric_name);

}  // namespace uninet::metrics

#endif
