#include "uninet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uninet/errors.hpp"
#include "uninet/rng.hpp"

using json = nlohmann::json;

namespace uninet::model {

// ---------------------------------------------------------------- TaskSet

TaskSet TaskSet::parse(const std::string& csv) {
    TaskSet t;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(std::remove_if(tok.begin(), tok.end(), [](char c) { return c == ' '; }), tok.end());
        std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
        if (tok.empty()) continue;
        if (tok == "od")
            t.od = true;
        else if (tok == "ss")
            t.ss = true;
        else if (tok == "is")
            t.is = true;
        else if (tok == "d")
            t.d = true;
        else if (tok == "id")
            t.id = true;
        else
            throw ConfigError("unknown task '" + tok + "' (expected od,ss,is,d,id)");
    }
    return t;
}

std::string TaskSet::to_string() const {
    std::string s;
    auto app = [&](const char* n) {
        if (!s.empty()) s += ',';
        s += n;
    };
    if (od) app("od");
    if (ss) app("ss");
    if (is) app("is");
    if (d) app("d");
    if (id) app("id");
    return s;
}

bool TaskSet::contains(const TaskSet& o) const {
    return (!o.od || od) && (!o.ss || ss) && (!o.is || is) && (!o.d || d) && (!o.id || id);
}

void TaskSet::validate() const {
    if (empty()) throw ConfigError("task set must not be empty");
    if (is && !od) throw ConfigError("task 'is' cannot be selected without 'od'");
    if (id && !od) throw ConfigError("task 'id' cannot be selected without 'od'");
}

// ------------------------------------------------------------- ModelConfig

void ModelConfig::validate() const {
    if (num_stuff_classes < 1 || num_thing_classes < 1) throw ConfigError("model: class counts must be positive");
    for (int c : encoder_channels)
        if (c < 1) throw ConfigError("model: encoder channels must be positive");
    if (decoder_channels < 1 || fpn_channels < 1 || tower_channels < 1 || head_channels < 1 ||
        seg_reduce_channels < 1)
        throw ConfigError("model: channel widths must be positive");
    if (mask_code_dim < 1) throw ConfigError("model: mask code dimension must be >= 1");
    if (tower_depth < 1) throw ConfigError("model: tower depth must be >= 1");
    if (level_ranges[0].lo != 0.0) throw ConfigError("model: level ranges must start at 0");
    for (size_t i = 0; i + 1 < level_ranges.size(); ++i)
        if (level_ranges[i].hi != level_ranges[i + 1].lo)
            throw ConfigError("model: level ranges must partition (0, inf]");
    if (level_ranges.back().hi < 1e17) throw ConfigError("model: last level range must extend to inf");
}

// ----------------------------------------------------------------- UniNet

namespace {
double head_bias_for_prior(double p) { return -std::log((1.0 - p) / p); }
// softplus(b) == v
double softplus_inverse(double v) { return std::log(std::expm1(v)); }
}  // namespace

ad::Value UniNet::make_param(const std::string& name, std::vector<int> shape, double init_std,
                             double bias_fill) {
    Tensor t(shape);
    auto* rng = static_cast<Rng*>(rng_);
    if (shape.size() == 1) {
        t.fill(bias_fill);
    } else {
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng->normal(0.0, init_std);
    }
    ad::Value v = ad::leaf(std::move(t), true);
    params_.emplace_back(name, v);
    by_name_[name] = v;
    return v;
}

UniNet::UniNet(ModelConfig cfg, TaskSet tasks) : cfg_(std::move(cfg)), tasks_(tasks) {
    cfg_.validate();
    tasks_.validate();
    Rng rng(cfg_.seed);
    rng_ = &rng;

    auto he = [](int kh, int kw, int ic) { return std::sqrt(2.0 / (kh * kw * ic)); };
    auto conv = [&](const std::string& name, int oc, int k, int ic, double bias = 0.0,
                    double std_override = -1.0) {
        const double std = std_override > 0 ? std_override : he(k, k, ic);
        make_param(name + ".w", {oc, k, k, ic}, std);
        make_param(name + ".b", {oc}, 0.0, bias);
    };
    auto resblock = [&](const std::string& name, int ic, int oc) {
        conv(name + ".conv1", oc, 3, ic);
        conv(name + ".conv2", oc, 3, oc);
        if (ic != oc) conv(name + ".proj", oc, 1, ic);
    };

    const auto& ec = cfg_.encoder_channels;
    conv("enc.stem1", ec[0], 3, 3);
    conv("enc.stem2", ec[0], 3, ec[0]);
    resblock("enc.e2.res", ec[0], ec[0]);
    for (int l = 1; l < 6; ++l) {
        const std::string base = "enc.e" + std::to_string(l + 2);
        conv(base + ".down", ec[static_cast<size_t>(l)], 3, ec[static_cast<size_t>(l - 1)]);
        resblock(base + ".res", ec[static_cast<size_t>(l)], ec[static_cast<size_t>(l)]);
    }

    if (tasks_.ss || tasks_.d) {
        const int dc = cfg_.decoder_channels;
        resblock("dec.d6", ec[4] + ec[5], dc);
        resblock("dec.d5", ec[3] + dc, dc);
        resblock("dec.d4", ec[2] + dc, dc);
        resblock("dec.d3", ec[1] + dc, dc);
        resblock("dec.d2", ec[0] + dc, dc);
    }
    if (tasks_.ss) {
        for (int l = 2; l <= 6; ++l)
            conv("seg.reduce.d" + std::to_string(l), cfg_.seg_reduce_channels, 1, cfg_.decoder_channels);
        conv("seg.mix", cfg_.head_channels, 1, 5 * cfg_.seg_reduce_channels);
        conv("seg.out", cfg_.num_seg_classes(), 1, cfg_.head_channels, 0.0, 0.01);
    }
    if (tasks_.d) {
        for (int l = 2; l <= 6; ++l)
            conv("depth.reduce.d" + std::to_string(l), cfg_.seg_reduce_channels, 1, cfg_.decoder_channels);
        conv("depth.mix", cfg_.head_channels, 1, 5 * cfg_.seg_reduce_channels);
        conv("depth.out", 1, 1, cfg_.head_channels, softplus_inverse(8.0), 0.01);
    }
    if (tasks_.od) {
        conv("fpn.lat.e3", cfg_.fpn_channels, 1, ec[1]);
        conv("fpn.lat.e4", cfg_.fpn_channels, 1, ec[2]);
        conv("fpn.lat.e5", cfg_.fpn_channels, 1, ec[3]);
        for (const char* l : {"p3", "p4", "p5"})
            conv(std::string("fpn.smooth.") + l, cfg_.fpn_channels, 3, cfg_.fpn_channels);
        for (int i = 0; i < cfg_.tower_depth; ++i) {
            const int ic = i == 0 ? cfg_.fpn_channels : cfg_.tower_channels;
            conv("inst.cls_tower." + std::to_string(i), cfg_.tower_channels, 3, ic);
        }
        for (int i = 0; i < cfg_.tower_depth; ++i) {
            const int ic = i == 0 ? cfg_.fpn_channels : cfg_.tower_channels;
            conv("inst.reg_tower." + std::to_string(i), cfg_.tower_channels, 3, ic);
        }
        conv("inst.cls", cfg_.num_thing_classes, 3, cfg_.tower_channels, head_bias_for_prior(0.01), 0.01);
        conv("inst.cent", 1, 3, cfg_.tower_channels, 0.0, 0.01);
        conv("inst.box", 4, 3, cfg_.tower_channels, 0.0, 0.01);
        if (tasks_.is) conv("inst.mask", cfg_.mask_code_dim, 3, cfg_.tower_channels, 0.0, 0.01);
        if (tasks_.id)
            conv("inst.idepth", 1, 3, cfg_.tower_channels, softplus_inverse(8.0), 0.01);
    }
    rng_ = nullptr;
}

ad::Value UniNet::param(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

int64_t UniNet::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->val.size();
    return n;
}

uint64_t UniNet::parameter_checksum() const {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto feed = [&h](const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : params_) {
        feed(name.data(), name.size());
        feed(v->val.data(), static_cast<size_t>(v->val.size()) * sizeof(double));
    }
    return h;
}

void UniNet::zero_grad() const {
    for (const auto& [name, v] : params_) v->zero_grad();
}

void UniNet::freeze_params() const {
    std::lock_guard<std::mutex> lock(freeze_mu_);
    if (++freeze_count_ == 1)
        for (const auto& [name, v] : params_) v->requires_grad = false;
}

void UniNet::unfreeze_params() const {
    std::lock_guard<std::mutex> lock(freeze_mu_);
    if (--freeze_count_ == 0)
        for (const auto& [name, v] : params_) v->requires_grad = true;
}

ad::Value UniNet::conv_block(ad::Graph& g, const ad::Value& x, const std::string& name,
                             int stride) const {
    return ad::relu(g, ad::conv2d(g, x, param(name + ".w"), param(name + ".b"), stride, 1));
}

ad::Value UniNet::res_block(ad::Graph& g, const ad::Value& x, const std::string& name) const {
    ad::Value y = ad::relu(g, ad::conv2d(g, x, param(name + ".conv1.w"), param(name + ".conv1.b"), 1, 1));
    y = ad::conv2d(g, y, param(name + ".conv2.w"), param(name + ".conv2.b"), 1, 1);
    ad::Value skip = x;
    if (by_name_.count(name + ".proj.w"))
        skip = ad::conv2d(g, x, param(name + ".proj.w"), param(name + ".proj.b"), 1, 0);
    return ad::relu(g, ad::add(g, y, skip));
}

std::array<ad::Value, 6> UniNet::encode(ad::Graph& g, const ad::Value& image) const {
    const int h = image->val.h(), w = image->val.w();
    if (h % 128 != 0 || w % 128 != 0)
        throw std::invalid_argument("encode: image dimensions must be divisible by 128");
    if (image->val.c() != 3) throw std::invalid_argument("encode: image must have 3 channels");

    std::array<ad::Value, 6> e;
    ad::Value x = conv_block(g, image, "enc.stem1", 2);
    x = conv_block(g, x, "enc.stem2", 2);
    e[0] = res_block(g, x, "enc.e2.res");
    for (int l = 1; l < 6; ++l) {
        const std::string base = "enc.e" + std::to_string(l + 2);
        x = conv_block(g, e[static_cast<size_t>(l - 1)], base + ".down", 2);
        e[static_cast<size_t>(l)] = res_block(g, x, base + ".res");
    }
    return e;
}

std::array<ad::Value, 5> UniNet::decode(ad::Graph& g, const std::array<ad::Value, 6>& e) const {
    if (!(tasks_.ss || tasks_.d)) throw ConfigError("decode: decoder not built for this task set");
    std::array<ad::Value, 5> d;  // D2..D6
    ad::Value up = ad::resize_bilinear(g, e[5], e[4]->val.h(), e[4]->val.w());
    d[4] = res_block(g, ad::concat_c(g, {e[4], up}), "dec.d6");
    for (int l = 3; l >= 0; --l) {
        up = ad::resize_bilinear(g, d[static_cast<size_t>(l + 1)], e[static_cast<size_t>(l)]->val.h(),
                                 e[static_cast<size_t>(l)]->val.w());
        d[static_cast<size_t>(l)] = res_block(g, ad::concat_c(g, {e[static_cast<size_t>(l)], up}),
                                              "dec.d" + std::to_string(l + 2));
    }
    return d;
}

std::vector<LevelOutputs> UniNet::instance_head(ad::Graph& g, const std::array<ad::Value, 6>& e) const {
    if (!tasks_.od) throw ConfigError("instance_head: OD not in the task set");
    ad::Value lat5 = ad::conv2d(g, e[3], param("fpn.lat.e5.w"), param("fpn.lat.e5.b"), 1, 0);
    ad::Value lat4 = ad::conv2d(g, e[2], param("fpn.lat.e4.w"), param("fpn.lat.e4.b"), 1, 0);
    ad::Value lat3 = ad::conv2d(g, e[1], param("fpn.lat.e3.w"), param("fpn.lat.e3.b"), 1, 0);
    ad::Value m5 = lat5;
    ad::Value m4 = ad::add(g, lat4, ad::resize_bilinear(g, m5, lat4->val.h(), lat4->val.w()));
    ad::Value m3 = ad::add(g, lat3, ad::resize_bilinear(g, m4, lat3->val.h(), lat3->val.w()));
    const std::array<ad::Value, 3> m{m3, m4, m5};

    std::vector<LevelOutputs> out(3);
    for (int li = 0; li < 3; ++li) {
        const std::string pl = "p" + std::to_string(li + 3);
        ad::Value p = ad::conv2d(g, m[static_cast<size_t>(li)], param("fpn.smooth." + pl + ".w"),
                                 param("fpn.smooth." + pl + ".b"), 1, 1);
        ad::Value ct = p;
        for (int i = 0; i < cfg_.tower_depth; ++i)
            ct = conv_block(g, ct, "inst.cls_tower." + std::to_string(i), 1);
        ad::Value rt = p;
        for (int i = 0; i < cfg_.tower_depth; ++i)
            rt = conv_block(g, rt, "inst.reg_tower." + std::to_string(i), 1);

        LevelOutputs& lo = out[static_cast<size_t>(li)];
        lo.stride = kLevelStrides[static_cast<size_t>(li)];
        lo.cls_logits = ad::conv2d(g, ct, param("inst.cls.w"), param("inst.cls.b"), 1, 1);
        lo.centerness = ad::conv2d(g, ct, param("inst.cent.w"), param("inst.cent.b"), 1, 1);
        lo.box_dists = ad::exp_mul(
            g, ad::conv2d(g, rt, param("inst.box.w"), param("inst.box.b"), 1, 1),
            static_cast<double>(lo.stride));
        if (tasks_.is)
            lo.mask_codes = ad::conv2d(g, rt, param("inst.mask.w"), param("inst.mask.b"), 1, 1);
        if (tasks_.id)
            lo.inst_depth =
                ad::softplus(g, ad::conv2d(g, rt, param("inst.idepth.w"), param("inst.idepth.b"), 1, 1));
    }
    return out;
}

namespace {
ad::Value pixel_head(ad::Graph& g, const UniNet& net, const std::array<ad::Value, 5>& d,
                     const std::string& prefix, int image_h, int image_w) {
    const int qh = image_h / 4, qw = image_w / 4;
    std::vector<ad::Value> reduced;
    for (int l = 2; l <= 6; ++l) {
        ad::Value r = ad::relu(g, ad::conv2d(g, d[static_cast<size_t>(l - 2)],
                                             net.param(prefix + ".reduce.d" + std::to_string(l) + ".w"),
                                             net.param(prefix + ".reduce.d" + std::to_string(l) + ".b"),
                                             1, 0));
        reduced.push_back(ad::resize_bilinear(g, r, qh, qw));
    }
    ad::Value cat = ad::concat_c(g, reduced);
    ad::Value mix = ad::relu(
        g, ad::conv2d(g, cat, net.param(prefix + ".mix.w"), net.param(prefix + ".mix.b"), 1, 0));
    ad::Value up = ad::resize_bilinear(g, mix, image_h, image_w);
    return ad::conv2d(g, up, net.param(prefix + ".out.w"), net.param(prefix + ".out.b"), 1, 0);
}
}  // namespace

ad::Value UniNet::segmentation_head(ad::Graph& g, const std::array<ad::Value, 5>& d, int image_h,
                                    int image_w) const {
    if (!tasks_.ss) throw ConfigError("segmentation_head: SS not in the task set");
    return pixel_head(g, *this, d, "seg", image_h, image_w);
}

ad::Value UniNet::depth_head(ad::Graph& g, const std::array<ad::Value, 5>& d, int image_h,
                             int image_w) const {
    if (!tasks_.d) throw ConfigError("depth_head: D not in the task set");
    return ad::softplus(g, pixel_head(g, *this, d, "depth", image_h, image_w));
}

DenseOutputs UniNet::forward(ad::Graph& g, const ad::Value& image) const {
    return forward(g, image, tasks_);
}

DenseOutputs UniNet::forward(ad::Graph& g, const ad::Value& image, const TaskSet& task_mask) const {
    task_mask.validate();
    if (!tasks_.contains(task_mask))
        throw ConfigError("forward: task mask requests tasks the model was not built with");
    const int h = image->val.h(), w = image->val.w();

    DenseOutputs out;
    const auto e = encode(g, image);
    if (task_mask.ss || task_mask.d) {
        const auto d = decode(g, e);
        if (task_mask.ss) out.seg_logits = segmentation_head(g, d, h, w);
        if (task_mask.d) out.depth_map = depth_head(g, d, h, w);
    }
    if (task_mask.od) {
        out.levels = instance_head(g, e);
        if (!task_mask.is)
            for (auto& l : out.levels) l.mask_codes = nullptr;
        if (!task_mask.id)
            for (auto& l : out.levels) l.inst_depth = nullptr;
    }
    return out;
}

// ------------------------------------------------------------- detections

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ix0 = std::max(a[0], b[0]), iy0 = std::max(a[1], b[1]);
    const double ix1 = std::min(a[2], b[2]), iy1 = std::min(a[3], b[3]);
    const double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
    const double inter = iw * ih;
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    const double uni = area_a + area_b - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

std::vector<Detection> decode_detections(const DenseOutputs& dense, int image_h, int image_w,
                                         const maskcodec::PcaBasis* basis, double score_thresh,
                                         double nms_iou, int max_dets) {
    struct Candidate {
        int class_id;
        double score;
        std::array<double, 4> box;
        int64_t loc_index;
        const LevelOutputs* level;
        int y, x;
    };
    std::vector<Candidate> cands;
    int64_t loc_base = 0;
    for (const auto& lvl : dense.levels) {
        const Tensor& cls = lvl.cls_logits->val;
        const Tensor& cent = lvl.centerness->val;
        const Tensor& dists = lvl.box_dists->val;
        const int h = cls.h(), w = cls.w(), nc = cls.c();
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double pc = ad::sigmoid_val(cent.at3(y, x, 0));
                const double px = lvl.stride / 2.0 + x * static_cast<double>(lvl.stride);
                const double py = lvl.stride / 2.0 + y * static_cast<double>(lvl.stride);
                for (int c = 0; c < nc; ++c) {
                    const double p = ad::sigmoid_val(cls.at3(y, x, c));
                    const double score = std::sqrt(p * pc);
                    if (score < score_thresh) continue;
                    std::array<double, 4> box{
                        std::clamp(px - dists.at3(y, x, 0), 0.0, static_cast<double>(image_w)),
                        std::clamp(py - dists.at3(y, x, 1), 0.0, static_cast<double>(image_h)),
                        std::clamp(px + dists.at3(y, x, 2), 0.0, static_cast<double>(image_w)),
                        std::clamp(py + dists.at3(y, x, 3), 0.0, static_cast<double>(image_h))};
                    if (box[2] - box[0] <= 0.0 || box[3] - box[1] <= 0.0) continue;
                    cands.push_back({c, score, box, loc_base + static_cast<int64_t>(y) * w + x, &lvl, y, x});
                }
            }
        }
        loc_base += static_cast<int64_t>(h) * w;
    }

    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.loc_index < b.loc_index;
    });

    // greedy per-class NMS in score order
    std::vector<const Candidate*> kept;
    for (const auto& c : cands) {
        bool keep = true;
        for (const auto* k : kept) {
            if (k->class_id != c.class_id) continue;
            if (box_iou(k->box, c.box) >= nms_iou) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(&c);
        if (static_cast<int>(kept.size()) >= max_dets) break;
    }

    std::vector<Detection> dets;
    dets.reserve(kept.size());
    for (const auto* c : kept) {
        Detection d;
        d.class_id = c->class_id;
        d.score = c->score;
        d.box = c->box;
        if (c->level->inst_depth) d.median_depth = c->level->inst_depth->val.at3(c->y, c->x, 0);
        if (basis && c->level->mask_codes) {
            const Tensor& codes = c->level->mask_codes->val;
            std::vector<double> code(static_cast<size_t>(codes.c()));
            for (int i = 0; i < codes.c(); ++i) code[static_cast<size_t>(i)] = codes.at3(c->y, c->x, i);
            const int bx0 = std::clamp(static_cast<int>(std::floor(c->box[0])), 0, image_w - 1);
            const int by0 = std::clamp(static_cast<int>(std::floor(c->box[1])), 0, image_h - 1);
            const int bx1 = std::clamp(static_cast<int>(std::ceil(c->box[2])), bx0 + 1, image_w);
            const int by1 = std::clamp(static_cast<int>(std::ceil(c->box[3])), by0 + 1, image_h);
            const auto local = maskcodec::decode_mask(code, by1 - by0, bx1 - bx0, *basis);
            d.mask.assign(static_cast<size_t>(image_h) * image_w, 0);
            for (int y = by0; y < by1; ++y)
                for (int x = bx0; x < bx1; ++x)
                    d.mask[static_cast<size_t>(y) * image_w + x] =
                        local[static_cast<size_t>(y - by0) * (bx1 - bx0) + (x - bx0)];
        }
        dets.push_back(std::move(d));
    }
    return dets;
}

// ------------------------------------------------------------- checkpoint

namespace {

json level_ranges_to_json(const std::array<LevelRange, 3>& lr) {
    json a = json::array();
    for (const auto& r : lr) a.push_back(json::array({r.lo, r.hi}));
    return a;
}

json config_to_json_obj(const ModelConfig& c) {
    return json{{"num_stuff_classes", c.num_stuff_classes},
                {"num_thing_classes", c.num_thing_classes},
                {"encoder_channels", c.encoder_channels},
                {"decoder_channels", c.decoder_channels},
                {"fpn_channels", c.fpn_channels},
                {"tower_depth", c.tower_depth},
                {"tower_channels", c.tower_channels},
                {"head_channels", c.head_channels},
                {"seg_reduce_channels", c.seg_reduce_channels},
                {"mask_code_dim", c.mask_code_dim},
                {"level_ranges", level_ranges_to_json(c.level_ranges)},
                {"seed", c.seed}};
}

ModelConfig config_from_json_obj(const json& j) {
    ModelConfig c;
    c.num_stuff_classes = j.at("num_stuff_classes").get<int>();
    c.num_thing_classes = j.at("num_thing_classes").get<int>();
    c.encoder_channels = j.at("encoder_channels").get<std::array<int, 6>>();
    c.decoder_channels = j.at("decoder_channels").get<int>();
    c.fpn_channels = j.at("fpn_channels").get<int>();
    c.tower_depth = j.at("tower_depth").get<int>();
    c.tower_channels = j.at("tower_channels").get<int>();
    c.head_channels = j.at("head_channels").get<int>();
    c.seg_reduce_channels = j.at("seg_reduce_channels").get<int>();
    c.mask_code_dim = j.at("mask_code_dim").get<int>();
    const auto& lr = j.at("level_ranges");
    for (size_t i = 0; i < 3; ++i) {
        c.level_ranges[i].lo = lr.at(i).at(0).get<double>();
        c.level_ranges[i].hi = lr.at(i).at(1).get<double>();
    }
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
    return config_from_json_obj(json::parse(text));
}

Checkpoint snapshot(const UniNet& net) {
    Checkpoint c;
    c.config = net.config();
    c.tasks = net.tasks();
    for (const auto& [name, v] : net.parameters()) c.params.emplace_back(name, v->val);
    return c;
}

void load_into(UniNet& net, const Checkpoint& ckpt) {
    if (net.parameters().size() != ckpt.params.size())
        throw ConfigError("checkpoint: parameter set mismatch");
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
        const auto& [name, t] = ckpt.params[i];
        const auto& [pname, pv] = net.parameters()[i];
        if (pname != name) throw ConfigError("checkpoint: parameter order mismatch at " + name);
        if (!pv->val.same_shape(t)) throw ConfigError("checkpoint: shape mismatch for " + name);
        std::copy(t.data(), t.data() + t.size(), pv->val.data());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream basis_bytes;
    if (ckpt.basis) maskcodec::save_basis(basis_bytes, *ckpt.basis);
    const std::string basis_blob = basis_bytes.str();

    json params = json::array();
    for (const auto& [name, t] : ckpt.params) params.push_back(json{{"name", name}, {"shape", t.shape()}});
    json header{{"model_config", config_to_json_obj(ckpt.config)},
                {"tasks", ckpt.tasks.to_string()},
                {"params", params},
                {"basis_bytes", basis_blob.size()},
                {"seg_class_weights", ckpt.seg_class_weights}};
    const std::string head = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("UNCK", 4);
    const uint32_t ver = kCheckpointVersion;
    const uint64_t hlen = head.size();
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : ckpt.params)
        f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!basis_blob.empty()) f.write(basis_blob.data(), static_cast<std::streamsize>(basis_blob.size()));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "UNCK", 4) != 0) throw FormatError("checkpoint: bad magic in " + path);
    uint32_t ver = 0;
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&hlen), 8);
    if (!f) throw FormatError("checkpoint: truncated header");
    if (ver != static_cast<uint32_t>(kCheckpointVersion))
        throw FormatError("checkpoint: unsupported version " + std::to_string(ver));
    if (hlen > (1u << 24)) throw FormatError("checkpoint: implausible header length");
    std::string head(hlen, '\0');
    f.read(head.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw FormatError("checkpoint: truncated header payload");

    json j;
    try {
        j = json::parse(head);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint: header parse error: ") + e.what());
    }
    Checkpoint c;
    c.config = config_from_json_obj(j.at("model_config"));
    c.tasks = TaskSet::parse(j.at("tasks").get<std::string>());
    c.seg_class_weights = j.at("seg_class_weights").get<std::vector<double>>();
    for (const auto& p : j.at("params")) {
        Tensor t(p.at("shape").get<std::vector<int>>());
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
        if (!f) throw FormatError("checkpoint: truncated parameter payload");
        c.params.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
    const size_t basis_bytes = j.at("basis_bytes").get<size_t>();
    if (basis_bytes > 0) c.basis = maskcodec::load_basis(f);
    return c;
}

}  // namespace uninet::model
