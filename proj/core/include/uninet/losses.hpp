#ifndef UNINET_LOSSES_HPP
#define UNINET_LOSSES_HPP

#include <array>
#include <optional>
#include <vector>

#include "uninet/autodiff.hpp"
#include "uninet/maskcodec.hpp"
#include "uninet/model.hpp"
#include "uninet/scenegen.hpp"

namespace uninet::losses {

struct LossWeights {
    double reg = 1.0, cls = 1.0, cent = 1.0, seg = 1.0, is = 1.0, depth = 1.0, id = 1.0;
    void validate() const;  // all positive
};

// Dense FCOS-style training targets. Field access is instrumented so tests
// can verify which target groups an attack objective actually read.
class DenseTargets {
public:
    struct AccessLog {
        bool cls = false, box = false, cent = false, seg = false, mask_codes = false,
             depth = false, inst_depth = false;
    };
    struct Level {
        int h = 0, w = 0, stride = 0;
        std::vector<int> cls;                      // h*w; -1 for negatives
        std::vector<std::array<double, 4>> dists;  // h*w; meaningful at positives
        std::vector<double> centerness;            // h*w
        std::vector<double> mask_codes;            // k*h*w
        std::vector<double> median_depth;          // h*w
    };

    int num_levels() const { return static_cast<int>(levels_.size()); }
    int level_h(int l) const { return levels_[static_cast<size_t>(l)].h; }
    int level_w(int l) const { return levels_[static_cast<size_t>(l)].w; }
    int level_stride(int l) const { return levels_[static_cast<size_t>(l)].stride; }
    int total_positives() const { return total_positives_; }
    int dropped_instances() const { return dropped_instances_; }
    int code_dim() const { return code_dim_; }

    const std::vector<int>& cls_at(int l) const;
    const std::vector<std::array<double, 4>>& box_at(int l) const;
    const std::vector<double>& centerness_at(int l) const;
    const std::vector<double>& mask_codes_at(int l) const;
    const std::vector<double>& inst_depth_at(int l) const;
    const std::vector<int>& seg() const;
    const Tensor& depth() const;
    const std::vector<uint8_t>& depth_valid() const;

    const AccessLog& access_log() const { return log_; }
    void reset_access_log() const { log_ = AccessLog{}; }

private:
    friend DenseTargets assign_targets(const scenegen::Sample&, const model::ModelConfig&,
                                       const maskcodec::PcaBasis*);
    std::vector<Level> levels_;
    std::vector<int> seg_gt_;
    Tensor depth_gt_;
    std::vector<uint8_t> depth_valid_;
    int total_positives_ = 0;
    int dropped_instances_ = 0;
    int code_dim_ = 0;
    mutable AccessLog log_;
};

// depth validity bounds from the evaluation protocol
inline constexpr double kDepthValidMin = 1e-3;
inline constexpr double kDepthValidMax = 80.0;

DenseTargets assign_targets(const scenegen::Sample& sample, const model::ModelConfig& cfg,
                            const maskcodec::PcaBasis* basis);

// individual losses; class_filter restricts cls/reg to one thing class
ad::Value loss_cls(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                   const DenseTargets& t, double alpha = 0.75, double gamma = 2.0,
                   int class_filter = -1);
ad::Value loss_reg(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                   const DenseTargets& t, int class_filter = -1);
ad::Value loss_cent(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                    const DenseTargets& t);
ad::Value loss_seg(ad::Graph& g, const ad::Value& seg_logits, const DenseTargets& t,
                   const std::vector<double>& class_weights);
ad::Value loss_is(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                  const DenseTargets& t);
ad::Value loss_depth(ad::Graph& g, const ad::Value& depth_map, const DenseTargets& t);
ad::Value loss_id(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                  const DenseTargets& t);

struct LossConfig {
    double varifocal_alpha = 0.75;
    double varifocal_gamma = 2.0;
    std::vector<double> seg_class_weights;  // empty = uniform
    LossWeights weights;
    double eps_floor = 1e-8;
};

// differentiable loss terms; null for tasks outside the mask
struct LossTerms {
    ad::Value reg, cls, cent, seg, is, depth, id;
    std::vector<std::pair<ad::Value, double>> active_weighted(const LossWeights& w) const;
};

LossTerms compute_losses(ad::Graph& g, const model::DenseOutputs& dense, const DenseTargets& t,
                         const LossConfig& cfg, const model::TaskSet& task_mask);

// plain-number view of one evaluation of the objective
struct LossBundle {
    std::optional<double> reg, cls, cent, seg, is, depth, id;
    double semantic = 0.0, geometric = 0.0, mtl = 0.0;
};

LossBundle bundle_from_terms(const LossTerms& terms, const LossWeights& weights, double eps_floor);

// Eq-style grouping: semantic = reg+cls+seg+is, geometric = depth+id;
// centerness belongs to neither group
std::pair<double, double> grouped_losses(const LossBundle& b);

ad::Value sum_scalars(ad::Graph& g, const std::vector<ad::Value>& xs);

// geometric mean of weighted losses; terms below eps_floor are clamped
ad::Value mtl_loss(ad::Graph& g, const std::vector<std::pair<ad::Value, double>>& weighted_terms,
                   double eps_floor = 1e-8);
double mtl_loss_value(const std::vector<std::pair<double, double>>& loss_weight_pairs,
                      double eps_floor = 1e-8);

// general GIoU on corner boxes, exposed for the regression loss and tests
double giou(const std::array<double, 4>& a, const std::array<double, 4>& b);

// ENet-style class balancing: w_c = 1 / ln(1.02 + f_c), renormalized to mean 1
std::vector<double> class_balance_weights(const std::vector<double>& pixel_frequencies);

}  // namespace uninet::losses

#endif
