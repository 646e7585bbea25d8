#ifndef UNINET_ATTACKS_HPP
#define UNINET_ATTACKS_HPP

#include <optional>
#include <string>
#include <vector>

#include "uninet/losses.hpp"
#include "uninet/model.hpp"
#include "uninet/scenegen.hpp"

namespace uninet::attacks {

enum class LossSelector { Mtl, Semantic, Geometric, Reg, Cls, Cent, Seg, Is, Depth, Id };

LossSelector parse_selector(const std::string& name);
std::string selector_name(LossSelector s);

struct AttackConfig {
    double epsilon = 1.0;  // l_inf bound on the 0-255 pixel scale
    double alpha = 1.0;    // step size, same units
    int iterations = -1;   // -1: use pgd_iterations(epsilon)
    LossSelector selector = LossSelector::Mtl;
    void validate() const;
};

// plain-value copy of DenseOutputs for before/after reporting
struct DenseSnapshot {
    struct Level {
        int stride = 0;
        Tensor cls_logits, centerness, box_dists, mask_codes, inst_depth;
    };
    std::vector<Level> levels;
    Tensor seg_logits, depth_map;
    static DenseSnapshot of(const model::DenseOutputs& dense);
};

struct AttackOutcome {
    Tensor adv_image;
    Tensor perturbation;                  // adv - clean
    std::vector<double> objective_trace;  // initial value plus one per iteration
    double epsilon = 0.0;                 // effective bound, 0-255 units
    int iterations = 0;
    DenseSnapshot before, after;
    // DAG bookkeeping
    int initial_targets = 0;
    std::optional<double> flipped_fraction;
};

// attack-iteration schedule: min(floor(eps)+4, ceil(1.25*eps))
int pgd_iterations(double epsilon);

struct AttackContext {
    const maskcodec::PcaBasis* basis = nullptr;
    losses::LossConfig loss_cfg;
};

// untargeted PGD: maximize the selected loss against ground-truth targets,
// starting from the clean image
AttackOutcome pgd_attack(const model::UniNet& net, const scenegen::Sample& sample,
                         const AttackContext& ctx, const AttackConfig& cfg);

// same, but with externally assigned targets (reused across configs)
AttackOutcome pgd_attack(const model::UniNet& net, const scenegen::Sample& sample,
                         const losses::DenseTargets& targets, const AttackContext& ctx,
                         const AttackConfig& cfg);

struct DagConfig {
    int max_iters = 60;
    double gamma = 0.5 / 255.0;     // per-step l_inf magnitude on [0,1] images
    double confidence = 0.3;        // top-class probability gate
    bool include_seg_pixels = false;
};

// targeted class swap (pi(c1)=c2, pi(c2)=c1) on pre-NMS detection locations
AttackOutcome dag_swap_attack(const model::UniNet& net, const scenegen::Sample& sample, int c1,
                              int c2, const DagConfig& cfg = {});

// nearest-non-target fills; exact euclidean distances, ties by row-major index
std::vector<int> build_hiding_target_seg(const std::vector<int>& pred_seg, int h, int w,
                                         int target_class);
Tensor build_hiding_target_depth(const std::vector<int>& pred_seg, const Tensor& pred_depth,
                                 int target_class);

enum class HidingHead { Seg, Depth };

struct HidingTarget {
    HidingHead head = HidingHead::Seg;
    std::vector<int> seg_target;  // used when head == Seg
    Tensor depth_target;          // used when head == Depth
};

// targeted hiding: minimize cross entropy (seg) or RMSE (depth) against the
// built target by signed gradient descent inside the epsilon ball
AttackOutcome hiding_attack(const model::UniNet& net, const scenegen::Sample& sample,
                            const HidingTarget& target, double epsilon = 2.0, double alpha = 1.0,
                            int iterations = -1);

void save_outcome(const std::string& dir, const std::string& stem, const AttackOutcome& outcome);

}  // namespace uninet::attacks

#endif
