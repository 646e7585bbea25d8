#include "uninet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uninet/errors.hpp"

namespace uninet::losses {

void LossWeights::validate() const {
    for (double v : {reg, cls, cent, seg, is, depth, id})
        if (!(v > 0.0)) throw ConfigError("loss weights must be positive");
}

const std::vector<int>& DenseTargets::cls_at(int l) const {
    log_.cls = true;
    return levels_[static_cast<size_t>(l)].cls;
}
const std::vector<std::array<double, 4>>& DenseTargets::box_at(int l) const {
    log_.box = true;
    return levels_[static_cast<size_t>(l)].dists;
}
const std::vector<double>& DenseTargets::centerness_at(int l) const {
    log_.cent = true;
    return levels_[static_cast<size_t>(l)].centerness;
}
const std::vector<double>& DenseTargets::mask_codes_at(int l) const {
    log_.mask_codes = true;
    return levels_[static_cast<size_t>(l)].mask_codes;
}
const std::vector<double>& DenseTargets::inst_depth_at(int l) const {
    log_.inst_depth = true;
    return levels_[static_cast<size_t>(l)].median_depth;
}
const std::vector<int>& DenseTargets::seg() const {
    log_.seg = true;
    return seg_gt_;
}
const Tensor& DenseTargets::depth() const {
    log_.depth = true;
    return depth_gt_;
}
const std::vector<uint8_t>& DenseTargets::depth_valid() const {
    log_.depth = true;
    return depth_valid_;
}

DenseTargets assign_targets(const scenegen::Sample& sample, const model::ModelConfig& cfg,
                            const maskcodec::PcaBasis* basis) {
    const int H = sample.height, W = sample.width;
    const int k = basis ? basis->code_dim : cfg.mask_code_dim;
    DenseTargets t;
    t.code_dim_ = k;
    t.seg_gt_ = sample.seg_gt;
    t.depth_gt_ = sample.depth_gt;
    t.depth_valid_.assign(static_cast<size_t>(H) * W, 0);
    for (int64_t i = 0; i < sample.depth_gt.size(); ++i) {
        const double d = sample.depth_gt[i];
        t.depth_valid_[static_cast<size_t>(i)] = (d >= kDepthValidMin && d <= kDepthValidMax) ? 1 : 0;
    }

    // per-instance mask codes, shared by every positive location of the instance
    std::vector<std::vector<double>> codes(sample.instances.size());
    if (basis) {
        for (size_t i = 0; i < sample.instances.size(); ++i)
            codes[i] = maskcodec::encode_mask(sample.instances[i].mask, H, W,
                                              sample.instances[i].box, *basis);
    } else {
        for (auto& c : codes) c.assign(static_cast<size_t>(k), 0.0);
    }

    std::vector<uint8_t> instance_hit(sample.instances.size(), 0);
    for (size_t li = 0; li < model::kLevelStrides.size(); ++li) {
        const int stride = model::kLevelStrides[li];
        const model::LevelRange range = cfg.level_ranges[li];
        DenseTargets::Level lvl;
        lvl.stride = stride;
        lvl.h = H / stride;
        lvl.w = W / stride;
        const size_t n = static_cast<size_t>(lvl.h) * lvl.w;
        lvl.cls.assign(n, -1);
        lvl.dists.assign(n, {});
        lvl.centerness.assign(n, 0.0);
        lvl.mask_codes.assign(n * static_cast<size_t>(k), 0.0);
        lvl.median_depth.assign(n, 0.0);

        for (int y = 0; y < lvl.h; ++y) {
            for (int x = 0; x < lvl.w; ++x) {
                const double px = stride / 2.0 + x * static_cast<double>(stride);
                const double py = stride / 2.0 + y * static_cast<double>(stride);
                int best = -1;
                double best_area = 0.0;
                std::array<double, 4> best_d{};
                for (size_t gi = 0; gi < sample.instances.size(); ++gi) {
                    const auto& b = sample.instances[gi].box;
                    const double dl = px - b[0], dt = py - b[1], dr = b[2] - px, db = b[3] - py;
                    if (std::min(std::min(dl, dt), std::min(dr, db)) <= 0.0) continue;
                    const double m = std::max(std::max(dl, dt), std::max(dr, db));
                    if (!(m > range.lo && m <= range.hi)) continue;
                    const double area = (b[2] - b[0]) * (b[3] - b[1]);
                    if (best < 0 || area < best_area) {
                        best = static_cast<int>(gi);
                        best_area = area;
                        best_d = {dl, dt, dr, db};
                    }
                }
                if (best < 0) continue;
                const size_t p = static_cast<size_t>(y) * lvl.w + x;
                const auto& inst = sample.instances[static_cast<size_t>(best)];
                lvl.cls[p] = inst.class_id;
                lvl.dists[p] = best_d;
                const double lr = std::min(best_d[0], best_d[2]) / std::max(best_d[0], best_d[2]);
                const double tb = std::min(best_d[1], best_d[3]) / std::max(best_d[1], best_d[3]);
                lvl.centerness[p] = std::sqrt(lr * tb);
                std::copy(codes[static_cast<size_t>(best)].begin(),
                          codes[static_cast<size_t>(best)].end(),
                          lvl.mask_codes.begin() + static_cast<int64_t>(p) * k);
                lvl.median_depth[p] = inst.median_depth;
                instance_hit[static_cast<size_t>(best)] = 1;
                ++t.total_positives_;
            }
        }
        t.levels_.push_back(std::move(lvl));
    }
    for (uint8_t hit : instance_hit)
        if (!hit) ++t.dropped_instances_;
    return t;
}

// ------------------------------------------------------------------ losses

namespace {
double log_sigmoid(double z) { return -ad::softplus_val(-z); }           // log p
double log_one_minus_sigmoid(double z) { return -ad::softplus_val(z); }  // log(1-p)
}  // namespace

ad::Value loss_cls(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                   const DenseTargets& t, double alpha, double gamma, int class_filter) {
    std::vector<ad::Value> parents;
    for (const auto& l : levels) parents.push_back(l.cls_logits);

    int npos = 0;
    double total = 0.0;
    for (size_t li = 0; li < levels.size(); ++li) {
        const Tensor& z = levels[li].cls_logits->val;
        const auto& cls = t.cls_at(static_cast<int>(li));
        const auto& cent = t.centerness_at(static_cast<int>(li));
        const int nc = z.c();
        for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
            const int target_cls = cls[static_cast<size_t>(p)];
            if (target_cls >= 0 && (class_filter < 0 || target_cls == class_filter)) ++npos;
            for (int c = 0; c < nc; ++c) {
                if (class_filter >= 0 && c != class_filter) continue;
                const double zv = z[p * nc + c];
                if (target_cls == c) {
                    const double q = cent[static_cast<size_t>(p)];
                    total += -q * (q * log_sigmoid(zv) + (1.0 - q) * log_one_minus_sigmoid(zv));
                } else {
                    const double pr = ad::sigmoid_val(zv);
                    total += -alpha * std::pow(pr, gamma) * log_one_minus_sigmoid(zv);
                }
            }
        }
    }
    const double denom = std::max(1, npos);
    Tensor out = Tensor::scalar(total / denom);

    return g.track(std::move(out), parents, [&t, alpha, gamma, class_filter, denom](ad::Node& n) {
        const double gv = n.grad[0] / denom;
        for (size_t li = 0; li < n.parents.size(); ++li) {
            const ad::Value& zn = n.parents[li];
            if (!zn->requires_grad) continue;
            zn->ensure_grad();
            const Tensor& z = zn->val;
            const auto& cls = t.cls_at(static_cast<int>(li));
            const auto& cent = t.centerness_at(static_cast<int>(li));
            const int nc = z.c();
            for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
                const int target_cls = cls[static_cast<size_t>(p)];
                for (int c = 0; c < nc; ++c) {
                    if (class_filter >= 0 && c != class_filter) continue;
                    const double zv = z[p * nc + c];
                    const double pr = ad::sigmoid_val(zv);
                    double dz;
                    if (target_cls == c) {
                        const double q = cent[static_cast<size_t>(p)];
                        dz = q * (pr - q);
                    } else {
                        // d/dz of -alpha * p^gamma * log(1-p)
                        const double l1m = log_one_minus_sigmoid(zv);
                        dz = -alpha * (gamma * std::pow(pr, gamma) * (1.0 - pr) * l1m -
                                       std::pow(pr, gamma + 1.0));
                    }
                    zn->grad[p * nc + c] += gv * dz;
                }
            }
        }
    });
}

double giou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ix0 = std::max(a[0], b[0]), iy0 = std::max(a[1], b[1]);
    const double ix1 = std::min(a[2], b[2]), iy1 = std::min(a[3], b[3]);
    const double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
    const double inter = iw * ih;
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    const double uni = area_a + area_b - inter;
    const double cx0 = std::min(a[0], b[0]), cy0 = std::min(a[1], b[1]);
    const double cx1 = std::max(a[2], b[2]), cy1 = std::max(a[3], b[3]);
    const double carea = (cx1 - cx0) * (cy1 - cy0);
    if (carea <= 0.0) return 0.0;
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    return iou - (carea - uni) / carea;
}

namespace {

// giou of boxes sharing the anchor point, parameterized by the distance
// 4-vectors (l, t, r, b); fills d(giou)/d(pred dists)
double giou_dists_grad(const std::array<double, 4>& pd, const std::array<double, 4>& gd,
                       std::array<double, 4>& dpd) {
    const double pl = pd[0], pt = pd[1], pr = pd[2], pb = pd[3];
    const double gl = gd[0], gt = gd[1], gr = gd[2], gb = gd[3];
    const double area_p = (pl + pr) * (pt + pb);
    const double area_g = (gl + gr) * (gt + gb);
    const double iw = std::min(pl, gl) + std::min(pr, gr);
    const double ih = std::min(pt, gt) + std::min(pb, gb);
    const double inter = iw * ih;
    const double uni = std::max(area_p + area_g - inter, 1e-12);
    const double cw = std::max(pl, gl) + std::max(pr, gr);
    const double chh = std::max(pt, gt) + std::max(pb, gb);
    const double carea = std::max(cw * chh, 1e-12);
    const double value = inter / uni - (carea - uni) / carea;

    const double d_iw_pl = pl <= gl ? 1.0 : 0.0;
    const double d_iw_pr = pr <= gr ? 1.0 : 0.0;
    const double d_ih_pt = pt <= gt ? 1.0 : 0.0;
    const double d_ih_pb = pb <= gb ? 1.0 : 0.0;
    const double d_cw_pl = pl >= gl ? 1.0 : 0.0;
    const double d_cw_pr = pr >= gr ? 1.0 : 0.0;
    const double d_ch_pt = pt >= gt ? 1.0 : 0.0;
    const double d_ch_pb = pb >= gb ? 1.0 : 0.0;

    const std::array<double, 4> d_area{pt + pb, pl + pr, pt + pb, pl + pr};
    const std::array<double, 4> d_inter{d_iw_pl * ih, d_ih_pt * iw, d_iw_pr * ih, d_ih_pb * iw};
    const std::array<double, 4> d_carea{d_cw_pl * chh, d_ch_pt * cw, d_cw_pr * chh, d_ch_pb * cw};

    for (size_t i = 0; i < 4; ++i) {
        const double d_uni = d_area[i] - d_inter[i];
        double dv = (d_inter[i] * uni - inter * d_uni) / (uni * uni);  // d(inter/uni)
        dv += (d_uni * carea - uni * d_carea[i]) / (carea * carea);    // d(uni/carea)
        dpd[i] = dv;
    }
    return value;
}

}  // namespace

ad::Value loss_reg(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                   const DenseTargets& t, int class_filter) {
    std::vector<ad::Value> parents;
    for (const auto& l : levels) parents.push_back(l.box_dists);

    int npos = 0;
    double total = 0.0;
    for (size_t li = 0; li < levels.size(); ++li) {
        const Tensor& d = levels[li].box_dists->val;
        const auto& cls = t.cls_at(static_cast<int>(li));
        const auto& gtd = t.box_at(static_cast<int>(li));
        for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
            const int c = cls[static_cast<size_t>(p)];
            if (c < 0 || (class_filter >= 0 && c != class_filter)) continue;
            ++npos;
            std::array<double, 4> pd{d[p * 4 + 0], d[p * 4 + 1], d[p * 4 + 2], d[p * 4 + 3]};
            std::array<double, 4> dpd{};
            total += 1.0 - giou_dists_grad(pd, gtd[static_cast<size_t>(p)], dpd);
        }
    }
    if (npos == 0) return ad::constant(Tensor::scalar(0.0));
    Tensor out = Tensor::scalar(total / npos);

    return g.track(std::move(out), parents, [&t, class_filter, npos](ad::Node& n) {
        const double gv = n.grad[0] / npos;
        for (size_t li = 0; li < n.parents.size(); ++li) {
            const ad::Value& dn = n.parents[li];
            if (!dn->requires_grad) continue;
            dn->ensure_grad();
            const Tensor& d = dn->val;
            const auto& cls = t.cls_at(static_cast<int>(li));
            const auto& gtd = t.box_at(static_cast<int>(li));
            for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
                const int c = cls[static_cast<size_t>(p)];
                if (c < 0 || (class_filter >= 0 && c != class_filter)) continue;
                std::array<double, 4> pd{d[p * 4 + 0], d[p * 4 + 1], d[p * 4 + 2], d[p * 4 + 3]};
                std::array<double, 4> dpd{};
                giou_dists_grad(pd, gtd[static_cast<size_t>(p)], dpd);
                for (size_t i = 0; i < 4; ++i)
                    dn->grad[p * 4 + static_cast<int64_t>(i)] += gv * -dpd[i];
            }
        }
    });
}

ad::Value loss_cent(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                    const DenseTargets& t) {
    std::vector<ad::Value> parents;
    for (const auto& l : levels) parents.push_back(l.centerness);

    int npos = 0;
    double total = 0.0;
    for (size_t li = 0; li < levels.size(); ++li) {
        const Tensor& z = levels[li].centerness->val;
        const auto& cls = t.cls_at(static_cast<int>(li));
        const auto& cent = t.centerness_at(static_cast<int>(li));
        for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
            if (cls[static_cast<size_t>(p)] < 0) continue;
            ++npos;
            const double q = cent[static_cast<size_t>(p)];
            total += -q * log_sigmoid(z[p]) - (1.0 - q) * log_one_minus_sigmoid(z[p]);
        }
    }
    const double denom = std::max(1, npos);
    Tensor out = Tensor::scalar(total / denom);

    return g.track(std::move(out), parents, [&t, denom](ad::Node& n) {
        const double gv = n.grad[0] / denom;
        for (size_t li = 0; li < n.parents.size(); ++li) {
            const ad::Value& zn = n.parents[li];
            if (!zn->requires_grad) continue;
            zn->ensure_grad();
            const auto& cls = t.cls_at(static_cast<int>(li));
            const auto& cent = t.centerness_at(static_cast<int>(li));
            for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
                if (cls[static_cast<size_t>(p)] < 0) continue;
                zn->grad[p] += gv * (ad::sigmoid_val(zn->val[p]) - cent[static_cast<size_t>(p)]);
            }
        }
    });
}

ad::Value loss_seg(ad::Graph& g, const ad::Value& seg_logits, const DenseTargets& t,
                   const std::vector<double>& class_weights) {
    const Tensor& z = seg_logits->val;
    const int nc = z.c();
    const auto& gt = t.seg();
    std::vector<double> w(class_weights);
    if (w.empty()) w.assign(static_cast<size_t>(nc), 1.0);
    if (static_cast<int>(w.size()) != nc) throw std::invalid_argument("loss_seg: weight count mismatch");

    double total = 0.0, wsum = 0.0;
    for (int64_t p = 0; p < static_cast<int64_t>(gt.size()); ++p) {
        const double* zp = z.data() + p * nc;
        double m = zp[0];
        for (int c = 1; c < nc; ++c) m = std::max(m, zp[c]);
        double lse = 0.0;
        for (int c = 0; c < nc; ++c) lse += std::exp(zp[c] - m);
        lse = m + std::log(lse);
        const int y = gt[static_cast<size_t>(p)];
        const double wy = w[static_cast<size_t>(y)];
        total += wy * (lse - zp[y]);
        wsum += wy;
    }
    Tensor out = Tensor::scalar(total / wsum);

    return g.track(std::move(out), {seg_logits}, [&t, w, wsum, nc](ad::Node& n) {
        const ad::Value& zn = n.parents[0];
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const auto& gt = t.seg();
        const double gv = n.grad[0] / wsum;
        const Tensor& z = zn->val;
        for (int64_t p = 0; p < static_cast<int64_t>(gt.size()); ++p) {
            const double* zp = z.data() + p * nc;
            double m = zp[0];
            for (int c = 1; c < nc; ++c) m = std::max(m, zp[c]);
            double lse = 0.0;
            for (int c = 0; c < nc; ++c) lse += std::exp(zp[c] - m);
            const int y = gt[static_cast<size_t>(p)];
            const double wy = w[static_cast<size_t>(y)];
            for (int c = 0; c < nc; ++c) {
                const double soft = std::exp(zp[c] - m) / lse;
                zn->grad[p * nc + c] += gv * wy * (soft - (c == y ? 1.0 : 0.0));
            }
        }
    });
}

ad::Value loss_is(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                  const DenseTargets& t) {
    std::vector<ad::Value> parents;
    for (const auto& l : levels) parents.push_back(l.mask_codes);
    const int k = t.code_dim();

    int npos = 0;
    double total = 0.0;
    for (size_t li = 0; li < levels.size(); ++li) {
        const Tensor& c = levels[li].mask_codes->val;
        const auto& cls = t.cls_at(static_cast<int>(li));
        const auto& codes = t.mask_codes_at(static_cast<int>(li));
        for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
            if (cls[static_cast<size_t>(p)] < 0) continue;
            ++npos;
            double mse = 0.0;
            for (int i = 0; i < k; ++i) {
                const double d = c[p * k + i] - codes[static_cast<size_t>(p * k + i)];
                mse += d * d;
            }
            total += mse / k;
        }
    }
    if (npos == 0) return ad::constant(Tensor::scalar(0.0));
    Tensor out = Tensor::scalar(total / npos);

    return g.track(std::move(out), parents, [&t, npos, k](ad::Node& n) {
        const double gv = n.grad[0] / npos;
        for (size_t li = 0; li < n.parents.size(); ++li) {
            const ad::Value& cn = n.parents[li];
            if (!cn->requires_grad) continue;
            cn->ensure_grad();
            const auto& cls = t.cls_at(static_cast<int>(li));
            const auto& codes = t.mask_codes_at(static_cast<int>(li));
            for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
                if (cls[static_cast<size_t>(p)] < 0) continue;
                for (int i = 0; i < k; ++i)
                    cn->grad[p * k + i] +=
                        gv * 2.0 * (cn->val[p * k + i] - codes[static_cast<size_t>(p * k + i)]) / k;
            }
        }
    });
}

ad::Value loss_depth(ad::Graph& g, const ad::Value& depth_map, const DenseTargets& t) {
    const Tensor& d = depth_map->val;
    const Tensor& gt = t.depth();
    const auto& valid = t.depth_valid();
    int64_t nv = 0;
    double ss = 0.0;
    for (int64_t p = 0; p < d.size(); ++p) {
        if (!valid[static_cast<size_t>(p)]) continue;
        ++nv;
        const double e = d[p] - gt[p];
        ss += e * e;
    }
    if (nv == 0) return ad::constant(Tensor::scalar(0.0));
    Tensor out = Tensor::scalar(std::sqrt(ss / nv));

    return g.track(std::move(out), {depth_map}, [&t, nv](ad::Node& n) {
        const ad::Value& dn = n.parents[0];
        if (!dn->requires_grad) return;
        dn->ensure_grad();
        const double rmse = n.val[0];
        if (rmse < 1e-12) return;
        const Tensor& gt = t.depth();
        const auto& valid = t.depth_valid();
        const double gv = n.grad[0] / (static_cast<double>(nv) * rmse);
        for (int64_t p = 0; p < dn->val.size(); ++p) {
            if (!valid[static_cast<size_t>(p)]) continue;
            dn->grad[p] += gv * (dn->val[p] - gt[p]);
        }
    });
}

ad::Value loss_id(ad::Graph& g, const std::vector<model::LevelOutputs>& levels,
                  const DenseTargets& t) {
    std::vector<ad::Value> parents;
    for (const auto& l : levels) parents.push_back(l.inst_depth);

    int npos = 0;
    double total = 0.0;
    for (size_t li = 0; li < levels.size(); ++li) {
        const Tensor& d = levels[li].inst_depth->val;
        const auto& cls = t.cls_at(static_cast<int>(li));
        const auto& md = t.inst_depth_at(static_cast<int>(li));
        for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
            if (cls[static_cast<size_t>(p)] < 0) continue;
            ++npos;
            total += std::fabs(d[p] - md[static_cast<size_t>(p)]);
        }
    }
    if (npos == 0) return ad::constant(Tensor::scalar(0.0));
    Tensor out = Tensor::scalar(total / npos);

    return g.track(std::move(out), parents, [&t, npos](ad::Node& n) {
        const double gv = n.grad[0] / npos;
        for (size_t li = 0; li < n.parents.size(); ++li) {
            const ad::Value& dn = n.parents[li];
            if (!dn->requires_grad) continue;
            dn->ensure_grad();
            const auto& cls = t.cls_at(static_cast<int>(li));
            const auto& md = t.inst_depth_at(static_cast<int>(li));
            for (int64_t p = 0; p < static_cast<int64_t>(cls.size()); ++p) {
                if (cls[static_cast<size_t>(p)] < 0) continue;
                const double e = dn->val[p] - md[static_cast<size_t>(p)];
                dn->grad[p] += gv * (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0));
            }
        }
    });
}

std::vector<std::pair<ad::Value, double>> LossTerms::active_weighted(const LossWeights& w) const {
    std::vector<std::pair<ad::Value, double>> out;
    if (reg) out.emplace_back(reg, w.reg);
    if (cls) out.emplace_back(cls, w.cls);
    if (cent) out.emplace_back(cent, w.cent);
    if (seg) out.emplace_back(seg, w.seg);
    if (is) out.emplace_back(is, w.is);
    if (depth) out.emplace_back(depth, w.depth);
    if (id) out.emplace_back(id, w.id);
    return out;
}

LossTerms compute_losses(ad::Graph& g, const model::DenseOutputs& dense, const DenseTargets& t,
                         const LossConfig& cfg, const model::TaskSet& task_mask) {
    LossTerms terms;
    if (task_mask.od) {
        terms.cls = loss_cls(g, dense.levels, t, cfg.varifocal_alpha, cfg.varifocal_gamma);
        terms.reg = loss_reg(g, dense.levels, t);
        terms.cent = loss_cent(g, dense.levels, t);
    }
    if (task_mask.ss) terms.seg = loss_seg(g, dense.seg_logits, t, cfg.seg_class_weights);
    if (task_mask.is) terms.is = loss_is(g, dense.levels, t);
    if (task_mask.d) terms.depth = loss_depth(g, dense.depth_map, t);
    if (task_mask.id) terms.id = loss_id(g, dense.levels, t);
    return terms;
}

LossBundle bundle_from_terms(const LossTerms& terms, const LossWeights& weights, double eps_floor) {
    LossBundle b;
    auto take = [](const ad::Value& v) -> std::optional<double> {
        if (!v) return std::nullopt;
        return v->val[0];
    };
    b.reg = take(terms.reg);
    b.cls = take(terms.cls);
    b.cent = take(terms.cent);
    b.seg = take(terms.seg);
    b.is = take(terms.is);
    b.depth = take(terms.depth);
    b.id = take(terms.id);
    auto [sem, geo] = grouped_losses(b);
    b.semantic = sem;
    b.geometric = geo;
    std::vector<std::pair<double, double>> lw;
    if (b.reg) lw.emplace_back(*b.reg, weights.reg);
    if (b.cls) lw.emplace_back(*b.cls, weights.cls);
    if (b.cent) lw.emplace_back(*b.cent, weights.cent);
    if (b.seg) lw.emplace_back(*b.seg, weights.seg);
    if (b.is) lw.emplace_back(*b.is, weights.is);
    if (b.depth) lw.emplace_back(*b.depth, weights.depth);
    if (b.id) lw.emplace_back(*b.id, weights.id);
    b.mtl = lw.empty() ? 0.0 : mtl_loss_value(lw, eps_floor);
    return b;
}

std::pair<double, double> grouped_losses(const LossBundle& b) {
    const double semantic =
        b.reg.value_or(0.0) + b.cls.value_or(0.0) + b.seg.value_or(0.0) + b.is.value_or(0.0);
    const double geometric = b.depth.value_or(0.0) + b.id.value_or(0.0);
    return {semantic, geometric};
}

ad::Value sum_scalars(ad::Graph& g, const std::vector<ad::Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("sum_scalars: empty");
    ad::Value acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = ad::s_add(g, acc, xs[i]);
    return acc;
}

ad::Value mtl_loss(ad::Graph& g, const std::vector<std::pair<ad::Value, double>>& weighted_terms,
                   double eps_floor) {
    if (weighted_terms.empty()) throw std::invalid_argument("mtl_loss: no active losses");
    const int n = static_cast<int>(weighted_terms.size());
    std::vector<ad::Value> parents;
    double log_sum = 0.0;
    for (const auto& [v, lambda] : weighted_terms) {
        if (!(lambda > 0.0)) throw ConfigError("mtl_loss: weights must be positive");
        parents.push_back(v);
        log_sum += std::log(std::max(lambda * v->val[0], eps_floor));
    }
    const double value = std::exp(log_sum / n);
    Tensor out = Tensor::scalar(value);

    std::vector<double> lambdas;
    for (const auto& [v, lambda] : weighted_terms) lambdas.push_back(lambda);
    return g.track(std::move(out), parents, [lambdas, eps_floor, n](ad::Node& node) {
        const double value = node.val[0];
        const double gv = node.grad[0];
        for (size_t i = 0; i < node.parents.size(); ++i) {
            const ad::Value& p = node.parents[i];
            if (!p->requires_grad) continue;
            const double term = lambdas[i] * p->val[0];
            if (term <= eps_floor) continue;  // clamped terms carry no gradient
            p->ensure_grad();
            p->grad[0] += gv * value / (n * p->val[0]);
        }
    });
}

double mtl_loss_value(const std::vector<std::pair<double, double>>& loss_weight_pairs,
                      double eps_floor) {
    if (loss_weight_pairs.empty()) throw std::invalid_argument("mtl_loss_value: no active losses");
    double log_sum = 0.0;
    for (const auto& [loss, lambda] : loss_weight_pairs) {
        if (!(lambda > 0.0)) throw ConfigError("mtl_loss_value: weights must be positive");
        log_sum += std::log(std::max(lambda * loss, eps_floor));
    }
    return std::exp(log_sum / static_cast<double>(loss_weight_pairs.size()));
}

std::vector<double> class_balance_weights(const std::vector<double>& pixel_frequencies) {
    std::vector<double> w(pixel_frequencies.size());
    for (size_t i = 0; i < w.size(); ++i) {
        const double f = std::max(0.0, pixel_frequencies[i]);
        w[i] = 1.0 / std::log(1.02 + f);
    }
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    for (double& v : w) v /= mean;
    return w;
}

}  // namespace uninet::losses
