#ifndef UNINET_MODEL_HPP
#define UNINET_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "uninet/autodiff.hpp"
#include "uninet/maskcodec.hpp"
#include "uninet/tensor.hpp"

namespace uninet::model {

struct TaskSet {
    bool od = false, ss = false, is = false, d = false, id = false;

    static TaskSet all() { return {true, true, true, true, true}; }
    static TaskSet parse(const std::string& csv);  // "od,ss,is,d,id"
    std::string to_string() const;
    bool empty() const { return !(od || ss || is || d || id); }
    bool contains(const TaskSet& other) const;
    bool operator==(const TaskSet&) const = default;
    void validate() const;  // throws ConfigError; IS/ID require OD
};

struct LevelRange {
    double lo = 0.0, hi = 0.0;  // max regression distance in (lo, hi]
};

struct ModelConfig {
    int num_stuff_classes = 2;
    int num_thing_classes = 2;
    std::array<int, 6> encoder_channels{16, 24, 32, 48, 64, 64};  // E2..E7
    int decoder_channels = 24;                                    // D2..D6
    int fpn_channels = 32;
    int tower_depth = 2;
    int tower_channels = 32;
    int head_channels = 16;       // seg/depth mixing conv width
    int seg_reduce_channels = 64; // per-level 1x1 reduction before concat
    int mask_code_dim = 32;       // k, shared with the mask codec
    std::array<LevelRange, 3> level_ranges{{{0.0, 32.0}, {32.0, 64.0}, {64.0, 1e18}}};
    uint64_t seed = 7;

    int num_seg_classes() const { return num_stuff_classes + num_thing_classes; }
    void validate() const;
};

inline constexpr std::array<int, 6> kEncoderStrides{4, 8, 16, 32, 64, 128};
inline constexpr std::array<int, 3> kLevelStrides{8, 16, 32};  // P3..P5

struct LevelOutputs {
    int stride = 0;
    ad::Value cls_logits;  // {h,w,num_thing}
    ad::Value centerness;  // {h,w,1}, logits
    ad::Value box_dists;   // {h,w,4}, nonnegative pixels (stride-scaled exp)
    ad::Value mask_codes;  // {h,w,k}; null unless IS
    ad::Value inst_depth;  // {h,w,1}, positive meters; null unless ID
};

struct DenseOutputs {
    std::vector<LevelOutputs> levels;  // P3..P5; empty unless OD
    ad::Value seg_logits;              // {H,W,C}; null unless SS
    ad::Value depth_map;               // {H,W,1}, positive; null unless D
};

struct Detection {
    int class_id = 0;
    double score = 0.0;
    std::array<double, 4> box{};     // clipped to image bounds
    std::vector<uint8_t> mask;       // full-image binary mask; empty unless IS
    double median_depth = 0.0;
};

class UniNet {
public:
    UniNet(ModelConfig cfg, TaskSet tasks);

    const ModelConfig& config() const { return cfg_; }
    const TaskSet& tasks() const { return tasks_; }

    std::array<ad::Value, 6> encode(ad::Graph& g, const ad::Value& image) const;
    // D2..D6 at indices 0..4
    std::array<ad::Value, 5> decode(ad::Graph& g, const std::array<ad::Value, 6>& e) const;
    std::vector<LevelOutputs> instance_head(ad::Graph& g, const std::array<ad::Value, 6>& e) const;
    ad::Value segmentation_head(ad::Graph& g, const std::array<ad::Value, 5>& d, int image_h, int image_w) const;
    ad::Value depth_head(ad::Graph& g, const std::array<ad::Value, 5>& d, int image_h, int image_w) const;

    DenseOutputs forward(ad::Graph& g, const ad::Value& image) const;
    DenseOutputs forward(ad::Graph& g, const ad::Value& image, const TaskSet& task_mask) const;

    const std::vector<std::pair<std::string, ad::Value>>& parameters() const { return params_; }
    ad::Value param(const std::string& name) const;
    int64_t parameter_count() const;
    uint64_t parameter_checksum() const;
    void zero_grad() const;
    // nesting-safe gradient freeze; flags flip only on the outermost transition
    void freeze_params() const;
    void unfreeze_params() const;

private:
    ad::Value make_param(const std::string& name, std::vector<int> shape, double init_std,
                         double bias_fill = 0.0);
    ad::Value conv_block(ad::Graph& g, const ad::Value& x, const std::string& name, int stride) const;
    ad::Value res_block(ad::Graph& g, const ad::Value& x, const std::string& name) const;

    ModelConfig cfg_;
    TaskSet tasks_;
    std::vector<std::pair<std::string, ad::Value>> params_;
    std::map<std::string, ad::Value> by_name_;
    mutable void* rng_ = nullptr;  // only used during construction
    mutable std::mutex freeze_mu_;
    mutable int freeze_count_ = 0;
};

// temporarily freezes parameter gradients (used by attacks)
class ParamFreeze {
public:
    explicit ParamFreeze(const UniNet& net) : net_(net) { net_.freeze_params(); }
    ~ParamFreeze() { net_.unfreeze_params(); }
    ParamFreeze(const ParamFreeze&) = delete;
    ParamFreeze& operator=(const ParamFreeze&) = delete;

private:
    const UniNet& net_;
};

std::vector<Detection> decode_detections(const DenseOutputs& dense, int image_h, int image_w,
                                         const maskcodec::PcaBasis* basis, double score_thresh,
                                         double nms_iou, int max_dets);

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

// checkpoint: magic "UNCK", version, json header, float64 parameter payload,
// optional embedded PCA basis
struct Checkpoint {
    ModelConfig config;
    TaskSet tasks;
    std::vector<std::pair<std::string, Tensor>> params;
    std::optional<maskcodec::PcaBasis> basis;
    std::vector<double> seg_class_weights;  // empty unless SS was trained
};

inline constexpr int kCheckpointVersion = 1;

Checkpoint snapshot(const UniNet& net);
void load_into(UniNet& net, const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace uninet::model

#endif
