#include "uninet/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "uninet/errors.hpp"
#include "uninet/image_io.hpp"
#include "uninet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace uninet::scenegen {

void SceneSpec::validate() const {
    if (image_height <= 0 || image_width <= 0) throw ConfigError("scene spec: non-positive image size");
    if (image_height % 128 != 0 || image_width % 128 != 0)
        throw ConfigError("scene spec: image dimensions must be divisible by 128");
    if (stuff_classes.size() < 2) throw ConfigError("scene spec: need at least two stuff classes");
    if (thing_classes.empty()) throw ConfigError("scene spec: need at least one thing class");
    bool has_tall = false, has_wide = false;
    for (const auto& t : thing_classes) {
        if (t.aspect_mean < 1.0) has_tall = true;
        if (t.aspect_mean > 1.0) has_wide = true;
        if (t.base_size_min <= 0 || t.base_size_max < t.base_size_min)
            throw ConfigError("scene spec: bad size range for class " + t.name);
    }
    if (!has_tall || !has_wide)
        throw ConfigError("scene spec: need one thing class with aspect mean < 1 and one > 1");
    if (instance_count_min < 0 || instance_count_max < instance_count_min)
        throw ConfigError("scene spec: bad instance count range");
    if (!(depth_near > 1e-3)) throw ConfigError("scene spec: depth near must exceed 1e-3");
    if (!(depth_far <= 80.0)) throw ConfigError("scene spec: depth far must not exceed 80");
    if (!(depth_near < depth_far)) throw ConfigError("scene spec: depth near must be below far");
    if (!(instance_depth_max >= depth_near && instance_depth_max <= depth_far))
        throw ConfigError("scene spec: instance depth cap outside [near, far]");
    if (horizon_frac <= 0.05 || horizon_frac >= 0.95) throw ConfigError("scene spec: horizon fraction out of range");
}

SceneSpec SceneSpec::reference() {
    SceneSpec s;
    s.thing_classes = {
        {"person", 0.45, 0.08, 26.0, 44.0, ThingShape::Ellipse, {0.82, 0.29, 0.24}},
        {"car", 2.0, 0.25, 16.0, 26.0, ThingShape::Rectangle, {0.20, 0.36, 0.80}},
    };
    return s;
}

std::string sample_id_for_index(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

std::vector<int> rle_encode(const std::vector<uint8_t>& mask) {
    std::vector<int> counts;
    uint8_t cur = 0;
    int run = 0;
    for (uint8_t v : mask) {
        const uint8_t bit = v ? 1 : 0;
        if (bit == cur) {
            ++run;
        } else {
            counts.push_back(run);
            cur = bit;
            run = 1;
        }
    }
    counts.push_back(run);
    return counts;
}

std::vector<uint8_t> rle_decode(const std::vector<int>& counts, size_t total) {
    std::vector<uint8_t> mask;
    mask.reserve(total);
    uint8_t cur = 0;
    for (int c : counts) {
        if (c < 0) throw FormatError("negative RLE run");
        mask.insert(mask.end(), static_cast<size_t>(c), cur);
        cur = cur ? 0 : 1;
    }
    if (mask.size() != total) throw FormatError("RLE length mismatch");
    return mask;
}

bool mask_bbox(const std::vector<uint8_t>& mask, int h, int w, std::array<double, 4>& box) {
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask[static_cast<size_t>(y) * w + x]) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) return false;
    box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
           static_cast<double>(y1 + 1)};
    return true;
}

namespace {

struct DrawnInstance {
    int class_id;
    double depth;
    double cx, cy, rx, ry;  // half extents in pixels
    ThingShape shape;
    std::array<double, 3> color;
};

bool inside_shape(const DrawnInstance& d, double px, double py) {
    const double dx = (px - d.cx) / d.rx;
    const double dy = (py - d.cy) / d.ry;
    if (d.shape == ThingShape::Ellipse) return dx * dx + dy * dy <= 1.0;
    return std::fabs(px - d.cx) <= d.rx && std::fabs(py - d.cy) <= d.ry;
}

// depth is persisted as float32; snap at generation time so annotations
// (median depth) survive the disk round-trip exactly
double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Sample generate_scene(const SceneSpec& spec, int index) {
    spec.validate();
    if (index < 0) throw std::invalid_argument("generate_scene: negative index");
    const int h = spec.image_height, w = spec.image_width;
    const int num_stuff = static_cast<int>(spec.stuff_classes.size());
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(index)));

    Sample s;
    s.height = h;
    s.width = w;
    s.sample_id = sample_id_for_index(index);
    s.image = Tensor({h, w, 3});
    s.depth_gt = Tensor({h, w, 1});
    s.seg_gt.assign(static_cast<size_t>(h) * w, 0);

    // background: sky above the horizon at far depth, ground ramping far->near
    const int horizon = std::clamp(static_cast<int>(std::lround(spec.horizon_frac * h)), 1, h - 2);
    for (int y = 0; y < h; ++y) {
        const bool sky = y < horizon;
        double depth;
        if (sky) {
            depth = snap_f32(spec.depth_far);
        } else {
            const double t = static_cast<double>(y - horizon) / (h - 1 - horizon);
            depth = snap_f32(spec.depth_far + (spec.depth_near - spec.depth_far) * t);
        }
        for (int x = 0; x < w; ++x) {
            s.seg_gt[static_cast<size_t>(y) * w + x] = sky ? 0 : 1;
            s.depth_gt.at3(y, x, 0) = depth;
            if (sky) {
                const double t = static_cast<double>(y) / std::max(1, horizon - 1);
                s.image.at3(y, x, 0) = 0.45 + 0.25 * t;
                s.image.at3(y, x, 1) = 0.62 + 0.20 * t;
                s.image.at3(y, x, 2) = 0.88 + 0.07 * t;
            } else {
                const double shade = 0.45 + 0.50 * (spec.depth_near / depth);
                s.image.at3(y, x, 0) = 0.48 * shade + 0.18;
                s.image.at3(y, x, 1) = 0.44 * shade + 0.16;
                s.image.at3(y, x, 2) = 0.40 * shade + 0.14;
            }
        }
    }

    // sample instances; placement failures reduce the count instead of erroring
    const int requested =
        static_cast<int>(rng.uniform_int(spec.instance_count_min, spec.instance_count_max));
    std::vector<DrawnInstance> drawn;
    for (int i = 0; i < requested; ++i) {
        const int cls = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(spec.thing_classes.size()) - 1));
        const ThingClassSpec& tc = spec.thing_classes[static_cast<size_t>(cls)];
        bool placed = false;
        for (int attempt = 0; attempt < 12 && !placed; ++attempt) {
            const double aspect = std::clamp(rng.normal(tc.aspect_mean, tc.aspect_spread), 0.15, 6.0);
            const double u_min = spec.depth_near / spec.instance_depth_max;
            const double u = rng.uniform(u_min, 1.0);  // uniform apparent scale
            const double depth = snap_f32(spec.depth_near / u);
            const double base = rng.uniform(tc.base_size_min, tc.base_size_max);
            const double hh = base * u;
            const double ww = hh * aspect;
            if (hh < 5.0 || ww < 5.0) continue;  // too small to carry a usable mask
            const double rx = ww / 2.0, ry = hh / 2.0;
            if (2.0 * rx > w - 4 || 2.0 * ry > h - 4) continue;
            const double cx = rng.uniform(rx + 1.0, w - rx - 1.0);
            const double y_lo = std::max(ry + 1.0, 0.30 * h);
            const double y_hi = h - ry - 1.0;
            if (y_lo >= y_hi) continue;
            const double cy = rng.uniform(y_lo, y_hi);
            std::array<double, 3> color;
            for (int c = 0; c < 3; ++c)
                color[static_cast<size_t>(c)] =
                    std::clamp(tc.color[static_cast<size_t>(c)] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
            const double shade = 0.55 + 0.45 * u;  // darker when farther: a learnable depth cue
            for (auto& c : color) c *= shade;
            drawn.push_back({cls, depth, cx, cy, rx, ry, tc.shape, color});
            placed = true;
        }
    }

    // composite far-to-near; ties keep sampling order so the later one wins
    std::vector<int> order(drawn.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return drawn[static_cast<size_t>(a)].depth > drawn[static_cast<size_t>(b)].depth; });

    std::vector<int> inst_id(static_cast<size_t>(h) * w, -1);
    for (int oi : order) {
        const DrawnInstance& d = drawn[static_cast<size_t>(oi)];
        const int yx0 = std::max(0, static_cast<int>(std::floor(d.cy - d.ry)));
        const int yx1 = std::min(h - 1, static_cast<int>(std::ceil(d.cy + d.ry)));
        const int xx0 = std::max(0, static_cast<int>(std::floor(d.cx - d.rx)));
        const int xx1 = std::min(w - 1, static_cast<int>(std::ceil(d.cx + d.rx)));
        for (int y = yx0; y <= yx1; ++y) {
            for (int x = xx0; x <= xx1; ++x) {
                if (!inside_shape(d, x + 0.5, y + 0.5)) continue;
                const size_t p = static_cast<size_t>(y) * w + x;
                inst_id[p] = oi;
                s.seg_gt[p] = num_stuff + d.class_id;
                s.depth_gt.at3(y, x, 0) = d.depth;
                s.image.at3(y, x, 0) = d.color[0];
                s.image.at3(y, x, 1) = d.color[1];
                s.image.at3(y, x, 2) = d.color[2];
            }
        }
    }

    // annotations from visible regions; fully occluded or empty shapes are dropped
    for (size_t i = 0; i < drawn.size(); ++i) {
        std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
        std::vector<double> depths;
        for (size_t p = 0; p < mask.size(); ++p) {
            if (inst_id[p] == static_cast<int>(i)) {
                mask[p] = 1;
                depths.push_back(s.depth_gt[static_cast<int64_t>(p)]);
            }
        }
        InstanceAnnotation ann;
        if (!mask_bbox(mask, h, w, ann.box)) continue;
        ann.class_id = drawn[i].class_id;
        ann.mask = std::move(mask);
        ann.median_depth = median_of(std::move(depths));
        s.instances.push_back(std::move(ann));
    }

    // pixel noise, applied last so compositing stays exact
    if (spec.pixel_noise > 0) {
        for (int64_t i = 0; i < s.image.size(); ++i)
            s.image[i] = std::clamp(s.image[i] + rng.uniform(-spec.pixel_noise, spec.pixel_noise), 0.0, 1.0);
    }
    return s;
}

void validate_sample(const Sample& s, const SceneSpec& spec) {
    const int h = s.height, w = s.width;
    const int num_stuff = static_cast<int>(spec.stuff_classes.size());
    const int num_classes = spec.num_classes();
    if (s.image.h() != h || s.image.w() != w || s.depth_gt.h() != h || s.depth_gt.w() != w)
        throw InvariantError("sample " + s.sample_id + ": shape mismatch");
    for (size_t p = 0; p < s.seg_gt.size(); ++p) {
        if (s.seg_gt[p] < 0 || s.seg_gt[p] >= num_classes)
            throw InvariantError("sample " + s.sample_id + ": segmentation class out of range");
    }
    // float32 storage can nudge values past the exact bounds by ~1e-6 relative
    for (int64_t i = 0; i < s.depth_gt.size(); ++i) {
        const double d = s.depth_gt[i];
        if (!std::isfinite(d) || d < spec.depth_near - 1e-4 || d > spec.depth_far + 1e-4)
            throw InvariantError("sample " + s.sample_id + ": depth outside [near, far]");
    }
    for (size_t ii = 0; ii < s.instances.size(); ++ii) {
        const InstanceAnnotation& a = s.instances[ii];
        if (a.class_id < 0 || a.class_id >= static_cast<int>(spec.thing_classes.size()))
            throw InvariantError("sample " + s.sample_id + ": instance class out of range");
        if (a.mask.size() != static_cast<size_t>(h) * w)
            throw InvariantError("sample " + s.sample_id + ": mask size mismatch");
        std::array<double, 4> tight;
        if (!mask_bbox(a.mask, h, w, tight))
            throw InvariantError("sample " + s.sample_id + ": empty instance mask");
        if (tight != a.box)
            throw InvariantError("sample " + s.sample_id + ": box is not the tight bounding box of the mask");
        if (a.box_w() <= 0 || a.box_h() <= 0)
            throw InvariantError("sample " + s.sample_id + ": degenerate box");
        std::vector<double> depths;
        for (size_t p = 0; p < a.mask.size(); ++p) {
            if (!a.mask[p]) continue;
            if (s.seg_gt[p] != num_stuff + a.class_id)
                throw InvariantError("sample " + s.sample_id + ": mask pixel class mismatch in seg_gt");
            depths.push_back(s.depth_gt[static_cast<int64_t>(p)]);
        }
        if (median_of(std::move(depths)) != a.median_depth)
            throw InvariantError("sample " + s.sample_id + ": median depth mismatch");
    }
}

namespace {

json thing_to_json(const ThingClassSpec& t) {
    return json{{"name", t.name},
                {"aspect_mean", t.aspect_mean},
                {"aspect_spread", t.aspect_spread},
                {"base_size_min", t.base_size_min},
                {"base_size_max", t.base_size_max},
                {"shape", t.shape == ThingShape::Ellipse ? "ellipse" : "rectangle"},
                {"color", t.color}};
}

ThingClassSpec thing_from_json(const json& j) {
    ThingClassSpec t;
    t.name = j.at("name").get<std::string>();
    t.aspect_mean = j.at("aspect_mean").get<double>();
    t.aspect_spread = j.at("aspect_spread").get<double>();
    t.base_size_min = j.at("base_size_min").get<double>();
    t.base_size_max = j.at("base_size_max").get<double>();
    const std::string shape = j.at("shape").get<std::string>();
    if (shape == "ellipse")
        t.shape = ThingShape::Ellipse;
    else if (shape == "rectangle")
        t.shape = ThingShape::Rectangle;
    else
        throw FormatError("unknown thing shape: " + shape);
    t.color = j.at("color").get<std::array<double, 3>>();
    return t;
}

json spec_to_json_obj(const SceneSpec& s) {
    json things = json::array();
    for (const auto& t : s.thing_classes) things.push_back(thing_to_json(t));
    return json{{"image_height", s.image_height},
                {"image_width", s.image_width},
                {"stuff_classes", s.stuff_classes},
                {"thing_classes", things},
                {"instance_count_min", s.instance_count_min},
                {"instance_count_max", s.instance_count_max},
                {"depth_near", s.depth_near},
                {"depth_far", s.depth_far},
                {"seed", s.seed},
                {"horizon_frac", s.horizon_frac},
                {"instance_depth_max", s.instance_depth_max},
                {"pixel_noise", s.pixel_noise}};
}

SceneSpec spec_from_json_obj(const json& j) {
    SceneSpec s;
    s.image_height = j.at("image_height").get<int>();
    s.image_width = j.at("image_width").get<int>();
    s.stuff_classes = j.at("stuff_classes").get<std::vector<std::string>>();
    s.thing_classes.clear();
    for (const auto& t : j.at("thing_classes")) s.thing_classes.push_back(thing_from_json(t));
    s.instance_count_min = j.at("instance_count_min").get<int>();
    s.instance_count_max = j.at("instance_count_max").get<int>();
    s.depth_near = j.at("depth_near").get<double>();
    s.depth_far = j.at("depth_far").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
    s.horizon_frac = j.at("horizon_frac").get<double>();
    s.instance_depth_max = j.at("instance_depth_max").get<double>();
    s.pixel_noise = j.at("pixel_noise").get<double>();
    return s;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
    if (!f) throw IoError("short write: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return text;
}

}  // namespace

std::string spec_to_json(const SceneSpec& spec) { return spec_to_json_obj(spec).dump(2); }

SceneSpec spec_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, true);
    return spec_from_json_obj(j);
}

DatasetManifest render_dataset(const SceneSpec& spec, int count, const std::string& out_dir) {
    spec.validate();
    if (count < 0) throw std::invalid_argument("render_dataset: negative count");
    std::vector<fs::path> written;
    try {
        fs::create_directories(fs::path(out_dir) / "images");
        fs::create_directories(fs::path(out_dir) / "seg");
        fs::create_directories(fs::path(out_dir) / "depth");
        fs::create_directories(fs::path(out_dir) / "ann");

        DatasetManifest m;
        m.format_version = kManifestVersion;
        m.spec = spec;
        m.root_dir = out_dir;

        for (int i = 0; i < count; ++i) {
            Sample s = generate_scene(spec, i);
            const fs::path img = fs::path(out_dir) / "images" / (s.sample_id + ".png");
            const fs::path seg = fs::path(out_dir) / "seg" / (s.sample_id + ".png");
            const fs::path dep = fs::path(out_dir) / "depth" / (s.sample_id + ".raw");
            const fs::path ann = fs::path(out_dir) / "ann" / (s.sample_id + ".json");

            io::write_png_rgb(img.string(), s.image);
            written.push_back(img);
            std::vector<uint8_t> seg8(s.seg_gt.size());
            for (size_t p = 0; p < seg8.size(); ++p) seg8[p] = static_cast<uint8_t>(s.seg_gt[p]);
            io::write_png_gray(seg.string(), seg8, s.height, s.width);
            written.push_back(seg);
            io::write_depth_raw(dep.string(), s.depth_gt);
            written.push_back(dep);

            json ja;
            ja["sample_id"] = s.sample_id;
            ja["height"] = s.height;
            ja["width"] = s.width;
            json insts = json::array();
            for (const auto& a : s.instances) {
                insts.push_back(json{{"class_id", a.class_id},
                                     {"box", a.box},
                                     {"median_depth", a.median_depth},
                                     {"mask_rle", rle_encode(a.mask)}});
            }
            ja["instances"] = insts;
            write_text_file(ann.string(), ja.dump());
            written.push_back(ann);

            m.sample_ids.push_back(s.sample_id);
        }

        json jm;
        jm["format_version"] = m.format_version;
        jm["spec"] = spec_to_json_obj(spec);
        jm["samples"] = m.sample_ids;
        write_text_file((fs::path(out_dir) / "manifest.json").string(), jm.dump(2));
        return m;
    } catch (...) {
        for (const auto& p : written) {
            std::error_code ec;
            fs::remove(p, ec);
        }
        throw;
    }
}

DatasetManifest load_manifest(const std::string& dir) {
    const fs::path mp = fs::path(dir) / "manifest.json";
    json j;
    try {
        j = json::parse(read_text_file(mp.string()));
    } catch (const json::parse_error& e) {
        throw FormatError("manifest parse error in " + mp.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion)
        throw FormatError("manifest format version " + std::to_string(m.format_version) +
                          " unsupported (expected " + std::to_string(kManifestVersion) + ")");
    m.spec = spec_from_json_obj(j.at("spec"));
    m.sample_ids = j.at("samples").get<std::vector<std::string>>();
    m.root_dir = dir;
    return m;
}

Sample load_sample(const DatasetManifest& manifest, const std::string& sample_id) {
    if (std::find(manifest.sample_ids.begin(), manifest.sample_ids.end(), sample_id) ==
        manifest.sample_ids.end())
        throw IoError("sample id not in manifest: " + sample_id);
    const fs::path root(manifest.root_dir);

    Sample s;
    s.sample_id = sample_id;
    s.image = io::read_png_rgb((root / "images" / (sample_id + ".png")).string());
    s.height = s.image.h();
    s.width = s.image.w();

    std::vector<uint8_t> seg8;
    int sh = 0, sw = 0;
    io::read_png_gray((root / "seg" / (sample_id + ".png")).string(), seg8, sh, sw);
    if (sh != s.height || sw != s.width)
        throw InvariantError("sample " + sample_id + ": segmentation size mismatch");
    s.seg_gt.assign(seg8.begin(), seg8.end());

    s.depth_gt = io::read_depth_raw((root / "depth" / (sample_id + ".raw")).string());
    if (s.depth_gt.h() != s.height || s.depth_gt.w() != s.width)
        throw InvariantError("sample " + sample_id + ": depth size mismatch");

    json ja;
    try {
        ja = json::parse(read_text_file((root / "ann" / (sample_id + ".json")).string()));
    } catch (const json::parse_error& e) {
        throw FormatError("annotation parse error for " + sample_id + ": " + e.what());
    }
    const size_t total = static_cast<size_t>(s.height) * s.width;
    for (const auto& ji : ja.at("instances")) {
        InstanceAnnotation a;
        a.class_id = ji.at("class_id").get<int>();
        a.box = ji.at("box").get<std::array<double, 4>>();
        a.median_depth = ji.at("median_depth").get<double>();
        a.mask = rle_decode(ji.at("mask_rle").get<std::vector<int>>(), total);
        s.instances.push_back(std::move(a));
    }

    validate_sample(s, manifest.spec);
    return s;
}

}  // namespace uninet::scenegen
