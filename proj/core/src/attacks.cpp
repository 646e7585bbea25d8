#include "uninet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "uninet/errors.hpp"
#include "uninet/image_io.hpp"

namespace uninet::attacks {

LossSelector parse_selector(const std::string& name) {
    if (name == "mtl") return LossSelector::Mtl;
    if (name == "semantic") return LossSelector::Semantic;
    if (name == "geometric") return LossSelector::Geometric;
    if (name == "reg") return LossSelector::Reg;
    if (name == "cls") return LossSelector::Cls;
    if (name == "cent") return LossSelector::Cent;
    if (name == "seg") return LossSelector::Seg;
    if (name == "is") return LossSelector::Is;
    if (name == "depth") return LossSelector::Depth;
    if (name == "id") return LossSelector::Id;
    throw ConfigError("unknown attack loss selector: " + name);
}

std::string selector_name(LossSelector s) {
    switch (s) {
        case LossSelector::Mtl: return "mtl";
        case LossSelector::Semantic: return "semantic";
        case LossSelector::Geometric: return "geometric";
        case LossSelector::Reg: return "reg";
        case LossSelector::Cls: return "cls";
        case LossSelector::Cent: return "cent";
        case LossSelector::Seg: return "seg";
        case LossSelector::Is: return "is";
        case LossSelector::Depth: return "depth";
        case LossSelector::Id: return "id";
    }
    return "?";
}

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack: epsilon must be nonnegative");
    const int iters = iterations >= 0 ? iterations : pgd_iterations(epsilon);
    if (iters > 0 && !(alpha > 0.0)) throw ConfigError("attack: alpha must be positive");
}

int pgd_iterations(double epsilon) {
    if (epsilon < 0.0) throw ConfigError("pgd_iterations: negative epsilon");
    const double a = std::floor(epsilon) + 4.0;
    const double b = std::ceil(1.25 * epsilon);
    return static_cast<int>(std::min(a, b));
}

DenseSnapshot DenseSnapshot::of(const model::DenseOutputs& dense) {
    DenseSnapshot s;
    for (const auto& l : dense.levels) {
        Level lv;
        lv.stride = l.stride;
        lv.cls_logits = l.cls_logits->val;
        lv.centerness = l.centerness->val;
        lv.box_dists = l.box_dists->val;
        if (l.mask_codes) lv.mask_codes = l.mask_codes->val;
        if (l.inst_depth) lv.inst_depth = l.inst_depth->val;
        s.levels.push_back(std::move(lv));
    }
    if (dense.seg_logits) s.seg_logits = dense.seg_logits->val;
    if (dense.depth_map) s.depth_map = dense.depth_map->val;
    return s;
}

namespace {

// which loss terms a selector needs
struct Needed {
    bool reg = false, cls = false, cent = false, seg = false, is = false, depth = false, id = false;
};

Needed needed_terms(LossSelector s, const model::TaskSet& tasks) {
    Needed n;
    auto all_active = [&] {
        n.reg = n.cls = n.cent = tasks.od;
        n.seg = tasks.ss;
        n.is = tasks.is;
        n.depth = tasks.d;
        n.id = tasks.id;
    };
    switch (s) {
        case LossSelector::Mtl: all_active(); break;
        case LossSelector::Semantic:
            n.reg = n.cls = tasks.od;
            n.seg = tasks.ss;
            n.is = tasks.is;
            break;
        case LossSelector::Geometric:
            n.depth = tasks.d;
            n.id = tasks.id;
            break;
        case LossSelector::Reg: n.reg = tasks.od; break;
        case LossSelector::Cls: n.cls = tasks.od; break;
        case LossSelector::Cent: n.cent = tasks.od; break;
        case LossSelector::Seg: n.seg = tasks.ss; break;
        case LossSelector::Is: n.is = tasks.is; break;
        case LossSelector::Depth: n.depth = tasks.d; break;
        case LossSelector::Id: n.id = tasks.id; break;
    }
    if (!(n.reg || n.cls || n.cent || n.seg || n.is || n.depth || n.id))
        throw ConfigError("attack loss '" + selector_name(s) + "' is not valid for task set '" +
                          tasks.to_string() + "'");
    return n;
}

ad::Value build_objective(ad::Graph& g, const model::DenseOutputs& dense,
                          const losses::DenseTargets& targets, const AttackContext& ctx,
                          LossSelector selector, const model::TaskSet& tasks) {
    const Needed n = needed_terms(selector, tasks);
    losses::LossTerms terms;
    const auto& lc = ctx.loss_cfg;
    if (n.cls) terms.cls = losses::loss_cls(g, dense.levels, targets, lc.varifocal_alpha, lc.varifocal_gamma);
    if (n.reg) terms.reg = losses::loss_reg(g, dense.levels, targets);
    if (n.cent) terms.cent = losses::loss_cent(g, dense.levels, targets);
    if (n.seg) terms.seg = losses::loss_seg(g, dense.seg_logits, targets, lc.seg_class_weights);
    if (n.is) terms.is = losses::loss_is(g, dense.levels, targets);
    if (n.depth) terms.depth = losses::loss_depth(g, dense.depth_map, targets);
    if (n.id) terms.id = losses::loss_id(g, dense.levels, targets);

    if (selector == LossSelector::Mtl)
        return losses::mtl_loss(g, terms.active_weighted(lc.weights), lc.eps_floor);
    std::vector<ad::Value> parts;
    if (terms.reg) parts.push_back(terms.reg);
    if (terms.cls) parts.push_back(terms.cls);
    if (terms.cent) parts.push_back(terms.cent);
    if (terms.seg) parts.push_back(terms.seg);
    if (terms.is) parts.push_back(terms.is);
    if (terms.depth) parts.push_back(terms.depth);
    if (terms.id) parts.push_back(terms.id);
    return losses::sum_scalars(g, parts);
}

void project_ball(Tensor& x, const Tensor& clean, double eps255) {
    const double r = eps255 / 255.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double delta = std::clamp(x[i] - clean[i], -r, r);
        x[i] = std::clamp(clean[i] + delta, 0.0, 1.0);
    }
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

// shared signed-gradient loop for PGD (ascent) and hiding (descent)
template <typename ObjectiveFn>
AttackOutcome signed_gradient_attack(const model::UniNet& net, const Tensor& clean, double eps255,
                                     double alpha255, int iterations, bool maximize,
                                     ObjectiveFn&& objective) {
    model::ParamFreeze freeze(net);
    AttackOutcome out;
    out.epsilon = eps255;
    out.iterations = 0;

    Tensor x = clean;
    for (int it = 0; it < iterations; ++it) {
        ad::Graph g;
        ad::Value image = ad::leaf(x, true);
        model::DenseOutputs dense = net.forward(g, image);
        if (it == 0) out.before = DenseSnapshot::of(dense);
        ad::Value obj = objective(g, dense);
        out.objective_trace.push_back(obj->val[0]);
        g.backward(obj);
        if (!image->grad_ready()) break;
        const double step = (maximize ? 1.0 : -1.0) * alpha255 / 255.0;
        for (int64_t i = 0; i < x.size(); ++i) {
            const double gv = image->grad[i];
            if (gv > 0.0)
                x[i] += step;
            else if (gv < 0.0)
                x[i] -= step;
        }
        project_ball(x, clean, eps255);
        ++out.iterations;
    }
    // final evaluation (also the only one when iterations == 0)
    {
        ad::Graph g;
        ad::Value image = ad::leaf(x, false);
        model::DenseOutputs dense = net.forward(g, image);
        if (out.objective_trace.empty()) out.before = DenseSnapshot::of(dense);
        ad::Graph g2;  // objective needs no gradient here
        out.objective_trace.push_back(objective(g2, dense)->val[0]);
        out.after = DenseSnapshot::of(dense);
    }
    out.adv_image = std::move(x);
    out.perturbation = sub(out.adv_image, clean);
    return out;
}

}  // namespace

AttackOutcome pgd_attack(const model::UniNet& net, const scenegen::Sample& sample,
                         const AttackContext& ctx, const AttackConfig& cfg) {
    const losses::DenseTargets targets = losses::assign_targets(sample, net.config(), ctx.basis);
    return pgd_attack(net, sample, targets, ctx, cfg);
}

AttackOutcome pgd_attack(const model::UniNet& net, const scenegen::Sample& sample,
                         const losses::DenseTargets& targets, const AttackContext& ctx,
                         const AttackConfig& cfg) {
    cfg.validate();
    if (net.tasks().is && needed_terms(cfg.selector, net.tasks()).is && !ctx.basis)
        throw ConfigError("pgd_attack: instance-segmentation loss requires a PCA basis");
    const int iters = cfg.iterations >= 0 ? cfg.iterations : pgd_iterations(cfg.epsilon);
    const int effective_iters = cfg.epsilon == 0.0 ? 0 : iters;
    return signed_gradient_attack(net, sample.image, cfg.epsilon, cfg.alpha, effective_iters, true,
                                  [&](ad::Graph& g, const model::DenseOutputs& dense) {
                                      return build_objective(g, dense, targets, ctx, cfg.selector,
                                                             net.tasks());
                                  });
}

// ----------------------------------------------------------------- DAG swap

AttackOutcome dag_swap_attack(const model::UniNet& net, const scenegen::Sample& sample, int c1,
                              int c2, const DagConfig& cfg) {
    if (!net.tasks().od) throw ConfigError("dag_swap_attack: model lacks object detection");
    const int nthing = net.config().num_thing_classes;
    if (c1 == c2 || c1 < 0 || c2 < 0 || c1 >= nthing || c2 >= nthing)
        throw ConfigError("dag_swap_attack: invalid class pair");
    if (cfg.include_seg_pixels && !net.tasks().ss)
        throw ConfigError("dag_swap_attack: segmentation pixel set requires SS");

    model::ParamFreeze freeze(net);

    struct Member {
        int level;  // -1 for a segmentation pixel
        int64_t pixel;
        int orig_cls;  // thing class for detections, seg class for pixels
        bool flipped = false;
    };
    auto pi = [&](int c) { return c == c1 ? c2 : c1; };
    const int num_stuff = net.config().num_stuff_classes;
    const int seg_c1 = num_stuff + c1, seg_c2 = num_stuff + c2;
    auto pi_seg = [&](int c) { return c == seg_c1 ? seg_c2 : seg_c1; };

    AttackOutcome out;
    std::vector<Member> members;
    Tensor x = sample.image;

    auto detect_members = [&](const model::DenseOutputs& dense) {
        for (size_t li = 0; li < dense.levels.size(); ++li) {
            const Tensor& z = dense.levels[li].cls_logits->val;
            const int nc = z.c();
            for (int64_t p = 0; p < z.size() / nc; ++p) {
                int arg = 0;
                for (int c = 1; c < nc; ++c)
                    if (z[p * nc + c] > z[p * nc + arg]) arg = c;
                const double prob = ad::sigmoid_val(z[p * nc + arg]);
                if (prob < cfg.confidence || (arg != c1 && arg != c2)) continue;
                members.push_back({static_cast<int>(li), p, arg, false});
            }
        }
        if (cfg.include_seg_pixels) {
            const Tensor& z = dense.seg_logits->val;
            const int nc = z.c();
            for (int64_t p = 0; p < z.size() / nc; ++p) {
                int arg = 0;
                for (int c = 1; c < nc; ++c)
                    if (z[p * nc + c] > z[p * nc + arg]) arg = c;
                if (arg != seg_c1 && arg != seg_c2) continue;
                double m = z[p * nc + 0];
                for (int c = 1; c < nc; ++c) m = std::max(m, z[p * nc + c]);
                double lse = 0.0;
                for (int c = 0; c < nc; ++c) lse += std::exp(z[p * nc + c] - m);
                const double prob = std::exp(z[p * nc + arg] - m) / lse;
                if (prob < cfg.confidence) continue;
                members.push_back({-1, p, arg, false});
            }
        }
    };

    auto update_flips = [&](const model::DenseOutputs& dense) {
        for (auto& mb : members) {
            const Tensor& z = mb.level >= 0 ? dense.levels[static_cast<size_t>(mb.level)].cls_logits->val
                                            : dense.seg_logits->val;
            const int nc = z.c();
            int arg = 0;
            for (int c = 1; c < nc; ++c)
                if (z[mb.pixel * nc + c] > z[mb.pixel * nc + arg]) arg = c;
            const int want = mb.level >= 0 ? pi(mb.orig_cls) : pi_seg(mb.orig_cls);
            mb.flipped = arg == want;
        }
    };

    int iter = 0;
    bool first = true;
    while (iter < cfg.max_iters) {
        ad::Graph g;
        ad::Value image = ad::leaf(x, true);
        model::DenseOutputs dense = net.forward(g, image);
        if (first) {
            out.before = DenseSnapshot::of(dense);
            detect_members(dense);
            out.initial_targets = static_cast<int>(members.size());
            first = false;
            if (members.empty()) break;
        }
        update_flips(dense);
        bool any_active = false;
        for (const auto& mb : members) any_active = any_active || !mb.flipped;
        if (!any_active) break;

        // S = sum over active members of z[pi(c)] - z[c]
        double s_value = 0.0;
        ad::Graph* gp = &g;
        std::vector<ad::Value> parents;
        for (const auto& lvl : dense.levels) parents.push_back(lvl.cls_logits);
        if (cfg.include_seg_pixels) parents.push_back(dense.seg_logits);
        for (const auto& mb : members) {
            if (mb.flipped) continue;
            const Tensor& z = mb.level >= 0 ? dense.levels[static_cast<size_t>(mb.level)].cls_logits->val
                                            : dense.seg_logits->val;
            const int nc = z.c();
            const int want = mb.level >= 0 ? pi(mb.orig_cls) : pi_seg(mb.orig_cls);
            s_value += z[mb.pixel * nc + want] - z[mb.pixel * nc + mb.orig_cls];
        }
        const std::vector<Member> snapshot = members;
        ad::Value s = gp->track(
            Tensor::scalar(s_value), parents,
            [snapshot, pi, pi_seg](ad::Node& node) {
                const double gv = node.grad[0];
                for (const auto& mb : snapshot) {
                    if (mb.flipped) continue;
                    const ad::Value& zn = mb.level >= 0
                                              ? node.parents[static_cast<size_t>(mb.level)]
                                              : node.parents.back();
                    if (!zn->requires_grad) continue;
                    zn->ensure_grad();
                    const int nc = zn->val.c();
                    const int want = mb.level >= 0 ? pi(mb.orig_cls) : pi_seg(mb.orig_cls);
                    zn->grad[mb.pixel * nc + want] += gv;
                    zn->grad[mb.pixel * nc + mb.orig_cls] -= gv;
                }
            });
        out.objective_trace.push_back(s->val[0]);
        g.backward(s);
        if (!image->grad_ready()) break;
        const double rmax = max_abs(image->grad);
        if (rmax <= 0.0) break;
        for (int64_t i = 0; i < x.size(); ++i)
            x[i] = std::clamp(x[i] + cfg.gamma * image->grad[i] / rmax, 0.0, 1.0);
        ++iter;
    }

    out.iterations = iter;
    {
        ad::Graph g;
        ad::Value image = ad::leaf(x, false);
        model::DenseOutputs dense = net.forward(g, image);
        if (first) out.before = DenseSnapshot::of(dense);
        out.after = DenseSnapshot::of(dense);
        if (!members.empty()) {
            update_flips(dense);
            int flips = 0;
            for (const auto& mb : members) flips += mb.flipped ? 1 : 0;
            out.flipped_fraction = static_cast<double>(flips) / static_cast<double>(members.size());
        }
    }
    out.adv_image = x;
    out.perturbation = sub(out.adv_image, sample.image);
    out.epsilon = 255.0 * max_abs(out.perturbation);
    return out;
}

// ------------------------------------------------------------ hiding attack

namespace {

// exact nearest non-target pixel per pixel: a row pass (nearest source column
// within each row, ties to the left) then a column scan, so ties resolve to
// the smallest row-major index
std::vector<int> nearest_non_target(const std::vector<int>& seg, int h, int w, int target_class) {
    std::vector<int> row_col(static_cast<size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y) {
        int last = -1;
        for (int x = 0; x < w; ++x) {
            if (seg[static_cast<size_t>(y) * w + x] != target_class) last = x;
            row_col[static_cast<size_t>(y) * w + x] = last;
        }
        int next = -1;
        for (int x = w - 1; x >= 0; --x) {
            if (seg[static_cast<size_t>(y) * w + x] != target_class) next = x;
            const int left = row_col[static_cast<size_t>(y) * w + x];
            int chosen = left;
            if (next >= 0) {
                if (left < 0 || (next - x) < (x - left)) chosen = next;
                // tie (next-x == x-left) keeps the left source: smaller column
            }
            row_col[static_cast<size_t>(y) * w + x] = chosen;
        }
    }

    // column pass: minimize row_dist^2 + (y-r)^2, scanning rows upward so the
    // smallest row wins ties; overall tie-break is row-major (row, then col)
    std::vector<int> nearest(static_cast<size_t>(h) * w, -1);
    bool any_source = false;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            const size_t p = static_cast<size_t>(y) * w + x;
            if (seg[p] != target_class) {
                nearest[p] = static_cast<int>(p);
                any_source = true;
                continue;
            }
            int64_t best_d2 = std::numeric_limits<int64_t>::max();
            int best_src = -1;
            for (int r = 0; r < h; ++r) {
                const int c = row_col[static_cast<size_t>(r) * w + x];
                if (c < 0) continue;
                const int64_t dx = x - c;
                const int64_t dy = y - r;
                const int64_t d2 = dx * dx + dy * dy;
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best_src = static_cast<int>(static_cast<size_t>(r) * w + c);
                }
            }
            nearest[p] = best_src;
            if (best_src >= 0) any_source = true;
        }
    }
    if (!any_source) throw std::invalid_argument("hiding target: every pixel is the target class");
    for (int v : nearest)
        if (v < 0) throw std::invalid_argument("hiding target: no source pixel reachable");
    return nearest;
}

}  // namespace

std::vector<int> build_hiding_target_seg(const std::vector<int>& pred_seg, int h, int w,
                                         int target_class) {
    bool has_target = false;
    for (int v : pred_seg) has_target = has_target || v == target_class;
    if (!has_target) return pred_seg;
    const auto nearest = nearest_non_target(pred_seg, h, w, target_class);
    std::vector<int> out(pred_seg);
    for (size_t p = 0; p < out.size(); ++p)
        if (pred_seg[p] == target_class) out[p] = pred_seg[static_cast<size_t>(nearest[p])];
    return out;
}

Tensor build_hiding_target_depth(const std::vector<int>& pred_seg, const Tensor& pred_depth,
                                 int target_class) {
    const int h = pred_depth.h(), w = pred_depth.w();
    if (pred_seg.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("hiding target: seg/depth size mismatch");
    bool has_target = false;
    for (int v : pred_seg) has_target = has_target || v == target_class;
    if (!has_target) return pred_depth;
    const auto nearest = nearest_non_target(pred_seg, h, w, target_class);
    Tensor out = pred_depth;
    for (size_t p = 0; p < pred_seg.size(); ++p)
        if (pred_seg[p] == target_class)
            out[static_cast<int64_t>(p)] = pred_depth[static_cast<int64_t>(nearest[p])];
    return out;
}

namespace {

ad::Value ce_to_class_map(ad::Graph& g, const ad::Value& seg_logits, const std::vector<int>& target) {
    const Tensor& z = seg_logits->val;
    const int nc = z.c();
    if (target.size() != static_cast<size_t>(z.size() / nc))
        throw std::invalid_argument("hiding: target map size mismatch");
    double total = 0.0;
    const int64_t npx = static_cast<int64_t>(target.size());
    for (int64_t p = 0; p < npx; ++p) {
        const double* zp = z.data() + p * nc;
        double m = zp[0];
        for (int c = 1; c < nc; ++c) m = std::max(m, zp[c]);
        double lse = 0.0;
        for (int c = 0; c < nc; ++c) lse += std::exp(zp[c] - m);
        total += m + std::log(lse) - zp[target[static_cast<size_t>(p)]];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(npx));
    return g.track(std::move(out), {seg_logits}, [target, nc, npx](ad::Node& n) {
        const ad::Value& zn = n.parents[0];
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const double gv = n.grad[0] / static_cast<double>(npx);
        for (int64_t p = 0; p < npx; ++p) {
            const double* zp = zn->val.data() + p * nc;
            double m = zp[0];
            for (int c = 1; c < nc; ++c) m = std::max(m, zp[c]);
            double lse = 0.0;
            for (int c = 0; c < nc; ++c) lse += std::exp(zp[c] - m);
            for (int c = 0; c < nc; ++c) {
                const double soft = std::exp(zp[c] - m) / lse;
                zn->grad[p * nc + c] += gv * (soft - (c == target[static_cast<size_t>(p)] ? 1.0 : 0.0));
            }
        }
    });
}

ad::Value rmse_to_map(ad::Graph& g, const ad::Value& depth_map, const Tensor& target) {
    const Tensor& d = depth_map->val;
    if (d.size() != target.size()) throw std::invalid_argument("hiding: depth target size mismatch");
    double ss = 0.0;
    for (int64_t i = 0; i < d.size(); ++i) {
        const double e = d[i] - target[i];
        ss += e * e;
    }
    const double rmse = std::sqrt(ss / static_cast<double>(d.size()));
    Tensor out = Tensor::scalar(rmse);
    return g.track(std::move(out), {depth_map}, [target](ad::Node& n) {
        const ad::Value& dn = n.parents[0];
        if (!dn->requires_grad) return;
        dn->ensure_grad();
        const double rmse = n.val[0];
        if (rmse < 1e-12) return;
        const double gv = n.grad[0] / (static_cast<double>(dn->val.size()) * rmse);
        for (int64_t i = 0; i < dn->val.size(); ++i)
            dn->grad[i] += gv * (dn->val[i] - target[i]);
    });
}

}  // namespace

AttackOutcome hiding_attack(const model::UniNet& net, const scenegen::Sample& sample,
                            const HidingTarget& target, double epsilon, double alpha,
                            int iterations) {
    if (epsilon < 0.0) throw ConfigError("hiding_attack: negative epsilon");
    if (target.head == HidingHead::Seg && !net.tasks().ss)
        throw ConfigError("hiding_attack: segmentation head not in the task set");
    if (target.head == HidingHead::Depth && !net.tasks().d)
        throw ConfigError("hiding_attack: depth head not in the task set");
    const int iters = iterations >= 0 ? iterations : pgd_iterations(epsilon);
    const int effective_iters = epsilon == 0.0 ? 0 : iters;
    return signed_gradient_attack(
        net, sample.image, epsilon, alpha, effective_iters, false,
        [&](ad::Graph& g, const model::DenseOutputs& dense) {
            if (target.head == HidingHead::Seg) return ce_to_class_map(g, dense.seg_logits, target.seg_target);
            return rmse_to_map(g, dense.depth_map, target.depth_target);
        });
}

void save_outcome(const std::string& dir, const std::string& stem, const AttackOutcome& outcome) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    io::write_png_rgb((fs::path(dir) / (stem + "_adv.png")).string(), outcome.adv_image);
    // perturbation stored as a float grid with RGB interleaved along width
    Tensor flat({outcome.perturbation.h(), outcome.perturbation.w() * 3, 1});
    for (int64_t i = 0; i < outcome.perturbation.size(); ++i) flat[i] = outcome.perturbation[i];
    io::write_depth_raw((fs::path(dir) / (stem + "_delta.raw")).string(), flat);
    std::ofstream trace((fs::path(dir) / (stem + "_trace.csv")).string());
    if (!trace) throw IoError("cannot write attack trace");
    trace << "iteration,objective\n";
    for (size_t i = 0; i < outcome.objective_trace.size(); ++i) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", outcome.objective_trace[i]);
        trace << i << ',' << buf << "\n";
    }
}

}  // namespace uninet::attacks
