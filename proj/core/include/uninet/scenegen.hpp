#ifndef UNINET_SCENEGEN_HPP
#define UNINET_SCENEGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uninet/tensor.hpp"

namespace uninet::scenegen {

enum class ThingShape { Ellipse, Rectangle };

struct ThingClassSpec {
    std::string name;
    double aspect_mean = 1.0;    // box width / height
    double aspect_spread = 0.1;
    double base_size_min = 24.0;  // apparent height in pixels at depth == near
    double base_size_max = 44.0;
    ThingShape shape = ThingShape::Ellipse;
    std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct SceneSpec {
    int image_height = 128;
    int image_width = 128;
    std::vector<std::string> stuff_classes{"sky", "ground"};
    std::vector<ThingClassSpec> thing_classes;
    int instance_count_min = 2;
    int instance_count_max = 5;
    double depth_near = 3.0;
    double depth_far = 30.0;
    uint64_t seed = 1;
    // artifact constants, echoed in the manifest
    double horizon_frac = 0.42;       // sky/ground split as a fraction of height
    double instance_depth_max = 12.0; // instances sampled in [near, this]
    double pixel_noise = 0.015;

    int num_classes() const { return static_cast<int>(stuff_classes.size() + thing_classes.size()); }
    void validate() const;  // throws ConfigError
    static SceneSpec reference();  // the default desk-scale generator
};

struct InstanceAnnotation {
    int class_id = 0;                 // index into thing_classes
    std::array<double, 4> box{};      // x_min, y_min, x_max, y_max in pixel-edge coords
    std::vector<uint8_t> mask;        // h*w, visible region after occlusion
    double median_depth = 0.0;

    double box_w() const { return box[2] - box[0]; }
    double box_h() const { return box[3] - box[1]; }
};

struct Sample {
    Tensor image;               // {h,w,3} in [0,1]
    std::vector<int> seg_gt;    // h*w class indices, stuff classes first
    Tensor depth_gt;            // {h,w,1} meters
    std::vector<InstanceAnnotation> instances;
    std::string sample_id;
    int height = 0, width = 0;
};

Sample generate_scene(const SceneSpec& spec, int index);

// throws InvariantError naming the first violated Sample invariant
void validate_sample(const Sample& sample, const SceneSpec& spec);

struct DatasetManifest {
    int format_version = 1;
    SceneSpec spec;
    std::vector<std::string> sample_ids;
    std::string root_dir;  // set on load/render, not serialized
};

inline constexpr int kManifestVersion = 1;

DatasetManifest render_dataset(const SceneSpec& spec, int count, const std::string& out_dir);
DatasetManifest load_manifest(const std::string& dir);
Sample load_sample(const DatasetManifest& manifest, const std::string& sample_id);

std::string sample_id_for_index(int index);

// row-major run-length encoding of binary masks, zeros first
std::vector<int> rle_encode(const std::vector<uint8_t>& mask);
std::vector<uint8_t> rle_decode(const std::vector<int>& counts, size_t total);

// tight pixel-edge bounding box of a mask; false when the mask is empty
bool mask_bbox(const std::vector<uint8_t>& mask, int h, int w, std::array<double, 4>& box);

std::string spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const std::string& text);

}  // namespace uninet::scenegen

#endif
