#include "uninet/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "uninet/errors.hpp"
#include "uninet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace uninet::runner {

void RunConfig::validate() const {
    tasks.validate();
    weights.validate();
    model_cfg.validate();
    if (epochs < 1) throw ConfigError("run config: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("run config: learning rate must be positive");
    if (batch_size < 1) throw ConfigError("run config: batch size must be >= 1");
    if (train_dir.empty()) throw ConfigError("run config: training dataset directory required");
}

std::string RunConfig::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["tasks"] = tasks.to_string();
    j["train_dir"] = train_dir;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["lr_decay_factor"] = lr_decay_factor;
    j["decay_fracs"] = decay_fracs;
    j["batch_size"] = batch_size;
    j["weights"] = {{"reg", weights.reg}, {"cls", weights.cls}, {"cent", weights.cent},
                    {"seg", weights.seg}, {"is", weights.is},   {"depth", weights.depth},
                    {"id", weights.id}};
    j["seed"] = seed;
    j["model"] = json::parse(model::model_config_to_json(model_cfg));
    j["pca_fit_masks"] = pca_fit_masks;
    j["varifocal_alpha"] = varifocal_alpha;
    j["varifocal_gamma"] = varifocal_gamma;
    j["eps_floor"] = eps_floor;
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    const int ver = j.at("schema_version").get<int>();
    if (ver != 1) throw FormatError("run config: unsupported schema version " + std::to_string(ver));
    RunConfig c;
    c.tasks = model::TaskSet::parse(j.at("tasks").get<std::string>());
    c.train_dir = j.at("train_dir").get<std::string>();
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    c.decay_fracs = j.at("decay_fracs").get<std::array<double, 2>>();
    c.batch_size = j.at("batch_size").get<int>();
    const auto& w = j.at("weights");
    c.weights = {w.at("reg").get<double>(),   w.at("cls").get<double>(), w.at("cent").get<double>(),
                 w.at("seg").get<double>(),   w.at("is").get<double>(),  w.at("depth").get<double>(),
                 w.at("id").get<double>()};
    c.seed = j.at("seed").get<uint64_t>();
    c.model_cfg = model::model_config_from_json(j.at("model").dump());
    c.pca_fit_masks = j.at("pca_fit_masks").get<int>();
    c.varifocal_alpha = j.at("varifocal_alpha").get<double>();
    c.varifocal_gamma = j.at("varifocal_gamma").get<double>();
    c.eps_floor = j.at("eps_floor").get<double>();
    return c;
}

// --------------------------------------------------------------- training

namespace {

struct Adam {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<std::pair<std::string, ad::Value>>& params) {
        for (const auto& [name, p] : params) {
            m.emplace_back(p->val.shape());
            v.emplace_back(p->val.shape());
        }
    }
    void step(const std::vector<std::pair<std::string, ad::Value>>& params, double lr_now) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            ad::Value p = params[i].second;
            if (!p->grad_ready()) continue;
            Tensor& mi = m[i];
            Tensor& vi = v[i];
            for (int64_t j = 0; j < p->val.size(); ++j) {
                const double g = p->grad[j];
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * g;
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * g * g;
                const double mhat = mi[j] / bc1;
                const double vhat = vi[j] / bc2;
                p->val[j] -= lr_now * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

void check_finite(const char* term, const ad::Value& v, const std::string& sample_id, int epoch) {
    if (v && !std::isfinite(v->val[0]))
        throw TrainError(std::string("loss '") + term + "' is non-finite at sample " + sample_id +
                         " (epoch " + std::to_string(epoch) + ")");
}

void accumulate_bundle(losses::LossBundle& acc, const losses::LossBundle& b) {
    auto add = [](std::optional<double>& a, const std::optional<double>& x) {
        if (x) a = a.value_or(0.0) + *x;
    };
    add(acc.reg, b.reg);
    add(acc.cls, b.cls);
    add(acc.cent, b.cent);
    add(acc.seg, b.seg);
    add(acc.is, b.is);
    add(acc.depth, b.depth);
    add(acc.id, b.id);
    acc.semantic += b.semantic;
    acc.geometric += b.geometric;
    acc.mtl += b.mtl;
}

void scale_bundle(losses::LossBundle& b, double s) {
    auto mul = [s](std::optional<double>& a) {
        if (a) *a *= s;
    };
    mul(b.reg);
    mul(b.cls);
    mul(b.cent);
    mul(b.seg);
    mul(b.is);
    mul(b.depth);
    mul(b.id);
    b.semantic *= s;
    b.geometric *= s;
    b.mtl *= s;
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    const auto manifest = scenegen::load_manifest(cfg.train_dir);
    if (manifest.sample_ids.empty()) throw ConfigError("train: dataset is empty");
    const int n = static_cast<int>(manifest.sample_ids.size());

    // PCA basis from training masks, in manifest order
    std::optional<maskcodec::PcaBasis> basis;
    if (cfg.tasks.is) {
        std::vector<scenegen::Sample> holder;
        std::vector<maskcodec::MaskExample> examples;
        for (int i = 0; i < n && static_cast<int>(examples.size()) < cfg.pca_fit_masks; ++i) {
            holder.push_back(scenegen::load_sample(manifest, manifest.sample_ids[static_cast<size_t>(i)]));
            const auto& s = holder.back();
            for (const auto& inst : s.instances) {
                if (static_cast<int>(examples.size()) >= cfg.pca_fit_masks) break;
                examples.push_back({&inst.mask, s.height, s.width, inst.box});
            }
        }
        basis = maskcodec::fit_pca(examples, 16, cfg.model_cfg.mask_code_dim);
        if (log) *log << "pca: fit on " << examples.size() << " masks\n";
    }

    // class-balance weights from training pixel frequencies
    std::vector<double> seg_weights;
    if (cfg.tasks.ss) {
        std::vector<int64_t> counts(static_cast<size_t>(cfg.model_cfg.num_seg_classes()), 0);
        int64_t total = 0;
        for (int i = 0; i < n; ++i) {
            const auto s = scenegen::load_sample(manifest, manifest.sample_ids[static_cast<size_t>(i)]);
            for (int v : s.seg_gt) {
                ++counts[static_cast<size_t>(v)];
                ++total;
            }
        }
        std::vector<double> freqs(counts.size());
        for (size_t c = 0; c < counts.size(); ++c)
            freqs[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
        seg_weights = losses::class_balance_weights(freqs);
    }

    model::UniNet net(cfg.model_cfg, cfg.tasks);
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(net.parameters());

    losses::LossConfig loss_cfg;
    loss_cfg.varifocal_alpha = cfg.varifocal_alpha;
    loss_cfg.varifocal_gamma = cfg.varifocal_gamma;
    loss_cfg.seg_class_weights = seg_weights;
    loss_cfg.weights = cfg.weights;
    loss_cfg.eps_floor = cfg.eps_floor;

    const int drop1 = static_cast<int>(std::ceil(cfg.decay_fracs[0] * cfg.epochs));
    const int drop2 = static_cast<int>(std::ceil(cfg.decay_fracs[1] * cfg.epochs));

    TrainResult result;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr_now = cfg.lr;
        if (epoch >= drop1) lr_now *= cfg.lr_decay_factor;
        if (epoch >= drop2) lr_now *= cfg.lr_decay_factor;

        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch) + 1));
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.uniform_int(0, i));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        losses::LossBundle epoch_acc;
        int samples_seen = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n - start);
            net.zero_grad();
            for (int bi = 0; bi < bs; ++bi) {
                const std::string& sid = manifest.sample_ids[static_cast<size_t>(order[static_cast<size_t>(start + bi)])];
                const scenegen::Sample sample = scenegen::load_sample(manifest, sid);
                const losses::DenseTargets targets =
                    losses::assign_targets(sample, cfg.model_cfg, basis ? &*basis : nullptr);

                ad::Graph g;
                ad::Value image = ad::leaf(sample.image, false);
                model::DenseOutputs dense = net.forward(g, image);
                losses::LossTerms terms = losses::compute_losses(g, dense, targets, loss_cfg, cfg.tasks);
                check_finite("reg", terms.reg, sid, epoch);
                check_finite("cls", terms.cls, sid, epoch);
                check_finite("cent", terms.cent, sid, epoch);
                check_finite("seg", terms.seg, sid, epoch);
                check_finite("is", terms.is, sid, epoch);
                check_finite("depth", terms.depth, sid, epoch);
                check_finite("id", terms.id, sid, epoch);
                ad::Value mtl = losses::mtl_loss(g, terms.active_weighted(cfg.weights), cfg.eps_floor);
                check_finite("mtl", mtl, sid, epoch);
                ad::Value scaled = ad::s_scale(g, mtl, 1.0 / bs);
                g.backward(scaled);

                accumulate_bundle(epoch_acc, losses::bundle_from_terms(terms, cfg.weights, cfg.eps_floor));
                ++samples_seen;
            }
            adam.step(net.parameters(), lr_now);
        }

        scale_bundle(epoch_acc, 1.0 / samples_seen);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr_now;
        stats.mean = epoch_acc;
        result.curve.push_back(stats);
        if (log) {
            *log << "epoch " << epoch << " lr " << lr_now << " mtl " << epoch_acc.mtl << " sem "
                 << epoch_acc.semantic << " geo " << epoch_acc.geometric << "\n";
            log->flush();
        }
    }

    result.checkpoint = model::snapshot(net);
    result.checkpoint.basis = basis;
    result.checkpoint.seg_class_weights = seg_weights;
    return result;
}

void write_loss_curve_csv(const std::string& path, const std::vector<EpochStats>& curve) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write loss curve: " + path);
    f << "epoch,lr,reg,cls,cent,seg,is,depth,id,semantic,geometric,mtl\n";
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("absent");
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", *v);
        return std::string(buf);
    };
    for (const auto& e : curve) {
        char lrbuf[40];
        std::snprintf(lrbuf, sizeof(lrbuf), "%.17g", e.lr);
        f << e.epoch << ',' << lrbuf << ',' << cell(e.mean.reg) << ',' << cell(e.mean.cls) << ','
          << cell(e.mean.cent) << ',' << cell(e.mean.seg) << ',' << cell(e.mean.is) << ','
          << cell(e.mean.depth) << ',' << cell(e.mean.id) << ',' << cell(e.mean.semantic) << ','
          << cell(e.mean.geometric) << ',' << cell(e.mean.mtl) << "\n";
    }
}

// -------------------------------------------------------------- evaluation

LoadedModel::LoadedModel(const model::Checkpoint& ckpt)
    : net(ckpt.config, ckpt.tasks), basis(ckpt.basis), seg_class_weights(ckpt.seg_class_weights) {
    model::UniNet& mutable_net = net;
    model::load_into(mutable_net, ckpt);
}

namespace {

struct ImagePredictions {
    std::vector<model::Detection> dets;
    std::vector<int> seg_argmax;
    Tensor depth;
};

ImagePredictions predict(const model::UniNet& net, const maskcodec::PcaBasis* basis,
                         const Tensor& image, const EvalOptions& opts) {
    ad::Graph g;
    ad::Value img = ad::leaf(image, false);
    model::DenseOutputs dense = net.forward(g, img);
    ImagePredictions out;
    if (net.tasks().od)
        out.dets = model::decode_detections(dense, image.h(), image.w(), basis, opts.score_thresh,
                                            opts.nms_iou, opts.max_dets);
    if (net.tasks().ss) {
        const Tensor& z = dense.seg_logits->val;
        const int nc = z.c();
        out.seg_argmax.resize(static_cast<size_t>(z.h()) * z.w());
        for (int64_t p = 0; p < static_cast<int64_t>(out.seg_argmax.size()); ++p) {
            int arg = 0;
            for (int c = 1; c < nc; ++c)
                if (z[p * nc + c] > z[p * nc + arg]) arg = c;
            out.seg_argmax[static_cast<size_t>(p)] = arg;
        }
    }
    if (net.tasks().d) out.depth = dense.depth_map->val;
    return out;
}

// runs fn(i) over [0, n) with opts-controlled sharding; results must be
// written into per-index slots for determinism
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

metrics::MetricReport report_from_predictions(const model::TaskSet& tasks, int num_thing,
                                              int num_seg_classes,
                                              const std::vector<scenegen::Sample>& samples,
                                              const std::vector<ImagePredictions>& preds) {
    metrics::MetricReport rep;
    rep.num_samples = static_cast<int>(samples.size());
    if (tasks.od) {
        std::vector<metrics::ApImage> ap;
        for (size_t i = 0; i < samples.size(); ++i)
            ap.push_back({&preds[i].dets, &samples[i].instances, samples[i].height, samples[i].width});
        const auto box = metrics::average_precision(ap, metrics::ApKind::Box, num_thing);
        rep.map_box = box.map;
        rep.per_class_ap_box = box.per_class;
        if (tasks.is) {
            const auto mask = metrics::average_precision(ap, metrics::ApKind::Mask, num_thing);
            rep.map_mask = mask.map;
            rep.per_class_ap_mask = mask.per_class;
        }
    }
    if (tasks.ss) {
        metrics::MiouAccumulator acc(num_seg_classes);
        for (size_t i = 0; i < samples.size(); ++i) acc.add(preds[i].seg_argmax, samples[i].seg_gt);
        const auto r = acc.result();
        rep.miou = r.miou;
        rep.per_class_iou = r.per_class;
    }
    if (tasks.d) {
        metrics::DepthAccumulator acc;
        for (size_t i = 0; i < samples.size(); ++i) acc.add(preds[i].depth, samples[i].depth_gt);
        const auto r = acc.result();
        rep.depth_rmse = r.rmse;
        rep.depth_abs_rel = r.abs_rel;
    }
    if (tasks.id) {
        metrics::InstanceDepthAccumulator acc;
        for (size_t i = 0; i < samples.size(); ++i) acc.add(preds[i].dets, samples[i].instances);
        const auto r = acc.result();
        rep.id_l1 = r.l1;
        rep.id_abs_rel = r.abs_rel;
    }
    return rep;
}

}  // namespace

metrics::MetricReport evaluate(const LoadedModel& lm, const scenegen::DatasetManifest& manifest,
                               const EvalOptions& opts) {
    const int total = static_cast<int>(manifest.sample_ids.size());
    const int n = opts.limit > 0 ? std::min(opts.limit, total) : total;
    std::vector<scenegen::Sample> samples(static_cast<size_t>(n));
    std::vector<ImagePredictions> preds(static_cast<size_t>(n));
    parallel_for(n, opts.jobs, [&](int i) {
        samples[static_cast<size_t>(i)] =
            scenegen::load_sample(manifest, manifest.sample_ids[static_cast<size_t>(i)]);
        preds[static_cast<size_t>(i)] =
            predict(lm.net, lm.basis_ptr(), samples[static_cast<size_t>(i)].image, opts);
    });
    return report_from_predictions(lm.net.tasks(), lm.net.config().num_thing_classes,
                                   lm.net.config().num_seg_classes(), samples, preds);
}

metrics::MetricReport evaluate(const model::Checkpoint& ckpt, const std::string& dataset_dir,
                               const EvalOptions& opts) {
    LoadedModel lm(ckpt);
    const auto manifest = scenegen::load_manifest(dataset_dir);
    return evaluate(lm, manifest, opts);
}

// --------------------------------------------------------------- campaigns

std::string CampaignCell::display_name(const scenegen::SceneSpec& spec) const {
    if (!name.empty()) return name;
    char buf[96];
    switch (kind) {
        case Kind::Pgd:
            std::snprintf(buf, sizeof(buf), "pgd_%s_eps%g", attacks::selector_name(pgd.selector).c_str(),
                          pgd.epsilon);
            break;
        case Kind::Dag: {
            const auto& t1 = spec.thing_classes[static_cast<size_t>(dag_c1)].name;
            const auto& t2 = spec.thing_classes[static_cast<size_t>(dag_c2)].name;
            std::snprintf(buf, sizeof(buf), "dag_%s_%s", t1.c_str(), t2.c_str());
            break;
        }
        case Kind::Hide: {
            const auto& t = spec.thing_classes[static_cast<size_t>(hide_class)].name;
            std::snprintf(buf, sizeof(buf), "hide_%s_%s_eps%g", t.c_str(),
                          hide_head == attacks::HidingHead::Seg ? "seg" : "depth", hide_eps);
            break;
        }
    }
    return buf;
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

using Extras = std::map<std::string, std::optional<double>>;

// per-class detection losses and aspect ratios for the DAG analysis panels
void dag_extras(const model::UniNet& net, const std::vector<scenegen::Sample>& samples,
                const std::vector<Tensor>& images, const std::vector<ImagePredictions>& preds,
                const scenegen::SceneSpec& spec, int c1, int c2, double score_thresh, Extras& out) {
    for (int cls : {c1, c2}) {
        const std::string& cname = spec.thing_classes[static_cast<size_t>(cls)].name;
        double cls_sum = 0.0, reg_sum = 0.0;
        int loss_n = 0;
        double aspect_sum = 0.0;
        int aspect_n = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            const losses::DenseTargets targets =
                losses::assign_targets(samples[i], net.config(), nullptr);
            ad::Graph g;
            ad::Value img = ad::leaf(images[i], false);
            model::DenseOutputs dense = net.forward(g, img);
            cls_sum += losses::loss_cls(g, dense.levels, targets, 0.75, 2.0, cls)->val[0];
            reg_sum += losses::loss_reg(g, dense.levels, targets, cls)->val[0];
            ++loss_n;
            if (auto ar = metrics::mean_aspect_ratio(preds[i].dets, cls, score_thresh)) {
                aspect_sum += *ar;
                ++aspect_n;
            }
        }
        out["loss_cls." + cname] = loss_n ? std::optional<double>(cls_sum / loss_n) : std::nullopt;
        out["loss_reg." + cname] = loss_n ? std::optional<double>(reg_sum / loss_n) : std::nullopt;
        out["aspect_ratio." + cname] =
            aspect_n ? std::optional<double>(aspect_sum / aspect_n) : std::nullopt;
    }
}

void hide_extras(const std::vector<scenegen::Sample>& samples,
                 const std::vector<ImagePredictions>& preds, const scenegen::SceneSpec& spec,
                 int thing_class, Extras& out) {
    const int seg_class = static_cast<int>(spec.stuff_classes.size()) + thing_class;
    const std::string& cname = spec.thing_classes[static_cast<size_t>(thing_class)].name;
    metrics::ClassRegionAccumulator acc(seg_class);
    for (size_t i = 0; i < samples.size(); ++i)
        acc.add(preds[i].seg_argmax, preds[i].depth, samples[i].seg_gt, samples[i].depth_gt);
    const auto r = acc.result();
    out["class_iou." + cname] = r.class_iou;
    out["region_rmse." + cname] = r.region_rmse;
}

void write_metrics_csv(const std::string& path, const metrics::MetricReport& clean,
                       const metrics::MetricReport& attacked, const Extras& clean_extras,
                       const Extras& attacked_extras) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "metric,clean,attacked,ratio,direction\n";
    auto row = [&](const std::string& name, const std::optional<double>& cv,
                   const std::optional<double>& av) {
        const metrics::Direction dir = metrics::metric_direction(name);
        std::optional<double> ratio;
        if (cv && av) ratio = metrics::metric_ratio(*cv, *av, dir);
        f << name << ',' << (cv ? fmt17(*cv) : "absent") << ',' << (av ? fmt17(*av) : "absent")
          << ',' << (ratio ? fmt17(*ratio) : "absent") << ','
          << (dir == metrics::Direction::HigherBetter ? "higher" : "lower") << "\n";
    };
    row("map_box", clean.map_box, attacked.map_box);
    row("map_mask", clean.map_mask, attacked.map_mask);
    row("miou", clean.miou, attacked.miou);
    row("depth_rmse", clean.depth_rmse, attacked.depth_rmse);
    row("depth_abs_rel", clean.depth_abs_rel, attacked.depth_abs_rel);
    row("id_l1", clean.id_l1, attacked.id_l1);
    row("id_abs_rel", clean.id_abs_rel, attacked.id_abs_rel);
    for (size_t c = 0; c < clean.per_class_ap_box.size(); ++c)
        row("ap_box." + std::to_string(c), clean.per_class_ap_box[c],
            c < attacked.per_class_ap_box.size() ? attacked.per_class_ap_box[c] : std::nullopt);
    std::vector<std::string> keys;
    for (const auto& [k, v] : clean_extras) keys.push_back(k);
    for (const auto& [k, v] : attacked_extras)
        if (!clean_extras.count(k)) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) {
        auto ci = clean_extras.find(k);
        auto ai = attacked_extras.find(k);
        row(k, ci != clean_extras.end() ? ci->second : std::nullopt,
            ai != attacked_extras.end() ? ai->second : std::nullopt);
    }
}

}  // namespace

CampaignResult run_campaign(const Campaign& campaign, std::ostream* log) {
    const auto ckpt = model::load_checkpoint(campaign.checkpoint_path);
    LoadedModel lm(ckpt);
    const auto manifest = scenegen::load_manifest(campaign.dataset_dir);
    const int total = static_cast<int>(manifest.sample_ids.size());
    const int n = campaign.image_limit > 0 ? std::min(campaign.image_limit, total) : total;
    if (n == 0) throw ConfigError("campaign: dataset is empty");
    fs::create_directories(campaign.out_dir);

    // clean baseline, shared by every cell
    std::vector<scenegen::Sample> samples(static_cast<size_t>(n));
    std::vector<ImagePredictions> clean_preds(static_cast<size_t>(n));
    parallel_for(n, campaign.jobs, [&](int i) {
        samples[static_cast<size_t>(i)] =
            scenegen::load_sample(manifest, manifest.sample_ids[static_cast<size_t>(i)]);
        clean_preds[static_cast<size_t>(i)] =
            predict(lm.net, lm.basis_ptr(), samples[static_cast<size_t>(i)].image, campaign.eval);
    });

    CampaignResult result;
    result.baseline =
        report_from_predictions(lm.net.tasks(), lm.net.config().num_thing_classes,
                                lm.net.config().num_seg_classes(), samples, clean_preds);
    {
        std::ofstream f(fs::path(campaign.out_dir) / "baseline.csv");
        if (!f) throw IoError("cannot write baseline report");
        f << result.baseline.to_csv();
    }
    if (log) *log << "baseline evaluated on " << n << " images\n";

    std::vector<Tensor> clean_images;
    clean_images.reserve(static_cast<size_t>(n));
    for (const auto& s : samples) clean_images.push_back(s.image);

    losses::LossConfig loss_cfg;
    loss_cfg.seg_class_weights = lm.seg_class_weights;
    attacks::AttackContext actx{lm.basis_ptr(), loss_cfg};

    for (const auto& cell : campaign.cells) {
        CellResult cr;
        cr.name = cell.display_name(manifest.spec);
        try {
            model::ParamFreeze freeze(lm.net);
            std::vector<Tensor> adv(static_cast<size_t>(n));
            std::vector<std::optional<double>> flips(static_cast<size_t>(n));
            parallel_for(n, campaign.jobs, [&](int i) {
                const auto& sample = samples[static_cast<size_t>(i)];
                attacks::AttackOutcome out;
                switch (cell.kind) {
                    case CampaignCell::Kind::Pgd:
                        out = attacks::pgd_attack(lm.net, sample, actx, cell.pgd);
                        break;
                    case CampaignCell::Kind::Dag:
                        out = attacks::dag_swap_attack(lm.net, sample, cell.dag_c1, cell.dag_c2, cell.dag);
                        flips[static_cast<size_t>(i)] = out.flipped_fraction;
                        break;
                    case CampaignCell::Kind::Hide: {
                        attacks::HidingTarget target;
                        target.head = cell.hide_head;
                        const int seg_class =
                            static_cast<int>(manifest.spec.stuff_classes.size()) + cell.hide_class;
                        const auto& cp = clean_preds[static_cast<size_t>(i)];
                        if (cell.hide_head == attacks::HidingHead::Seg)
                            target.seg_target = attacks::build_hiding_target_seg(
                                cp.seg_argmax, sample.height, sample.width, seg_class);
                        else
                            target.depth_target =
                                attacks::build_hiding_target_depth(cp.seg_argmax, cp.depth, seg_class);
                        out = attacks::hiding_attack(lm.net, sample, target, cell.hide_eps,
                                                     cell.hide_alpha, cell.hide_iters);
                        break;
                    }
                }
                adv[static_cast<size_t>(i)] = std::move(out.adv_image);
            });

            std::vector<ImagePredictions> adv_preds(static_cast<size_t>(n));
            parallel_for(n, campaign.jobs, [&](int i) {
                adv_preds[static_cast<size_t>(i)] =
                    predict(lm.net, lm.basis_ptr(), adv[static_cast<size_t>(i)], campaign.eval);
            });
            cr.report = report_from_predictions(lm.net.tasks(), lm.net.config().num_thing_classes,
                                                lm.net.config().num_seg_classes(), samples, adv_preds);

            Extras clean_extras;
            if (cell.kind == CampaignCell::Kind::Dag) {
                dag_extras(lm.net, samples, clean_images, clean_preds, manifest.spec, cell.dag_c1,
                           cell.dag_c2, campaign.eval.score_thresh, clean_extras);
                dag_extras(lm.net, samples, adv, adv_preds, manifest.spec, cell.dag_c1, cell.dag_c2,
                           campaign.eval.score_thresh, cr.extras);
                for (int cls : {cell.dag_c1, cell.dag_c2}) {
                    const std::string key =
                        "ap_box." + manifest.spec.thing_classes[static_cast<size_t>(cls)].name;
                    clean_extras[key] = result.baseline.per_class_ap_box[static_cast<size_t>(cls)];
                    cr.extras[key] = cr.report.per_class_ap_box[static_cast<size_t>(cls)];
                }
                double fsum = 0.0;
                int fn = 0;
                for (const auto& f : flips)
                    if (f) {
                        fsum += *f;
                        ++fn;
                    }
                cr.extras["flipped_fraction"] = fn ? std::optional<double>(fsum / fn) : std::nullopt;
            } else if (cell.kind == CampaignCell::Kind::Hide) {
                hide_extras(samples, clean_preds, manifest.spec, cell.hide_class, clean_extras);
                hide_extras(samples, adv_preds, manifest.spec, cell.hide_class, cr.extras);
            }
            result.baseline_extras.insert(clean_extras.begin(), clean_extras.end());

            const fs::path cell_dir = fs::path(campaign.out_dir) / cr.name;
            fs::create_directories(cell_dir);
            write_metrics_csv((cell_dir / "metrics.csv").string(), result.baseline, cr.report,
                              clean_extras, cr.extras);
            if (log) *log << "cell " << cr.name << " done\n";
        } catch (const std::exception& e) {
            cr.error = e.what();
            if (log) *log << "cell " << cr.name << " failed: " << e.what() << "\n";
        }
        result.cells.push_back(std::move(cr));
    }

    // combined summary
    {
        std::ofstream f(fs::path(campaign.out_dir) / "summary.csv");
        if (!f) throw IoError("cannot write campaign summary");
        f << "cell,metric,clean,attacked,ratio,direction\n";
        auto row = [&](const std::string& cell, const std::string& metric,
                       const std::optional<double>& cv, const std::optional<double>& av) {
            const metrics::Direction dir = metrics::metric_direction(metric);
            std::optional<double> ratio;
            if (cv && av) ratio = metrics::metric_ratio(*cv, *av, dir);
            f << cell << ',' << metric << ',' << (cv ? fmt17(*cv) : "absent") << ','
              << (av ? fmt17(*av) : "absent") << ',' << (ratio ? fmt17(*ratio) : "absent") << ','
              << (dir == metrics::Direction::HigherBetter ? "higher" : "lower") << "\n";
        };
        for (const auto& cr : result.cells) {
            if (!cr.error.empty()) {
                f << cr.name << ",error,absent,absent,absent,higher\n";
                continue;
            }
            row(cr.name, "map_box", result.baseline.map_box, cr.report.map_box);
            row(cr.name, "map_mask", result.baseline.map_mask, cr.report.map_mask);
            row(cr.name, "miou", result.baseline.miou, cr.report.miou);
            row(cr.name, "depth_rmse", result.baseline.depth_rmse, cr.report.depth_rmse);
            row(cr.name, "depth_abs_rel", result.baseline.depth_abs_rel, cr.report.depth_abs_rel);
            row(cr.name, "id_l1", result.baseline.id_l1, cr.report.id_l1);
            row(cr.name, "id_abs_rel", result.baseline.id_abs_rel, cr.report.id_abs_rel);
            for (const auto& [k, av] : cr.extras) {
                auto ci = result.baseline_extras.find(k);
                row(cr.name, k, ci != result.baseline_extras.end() ? ci->second : std::nullopt, av);
            }
        }
    }
    return result;
}

double timing_probe(const model::UniNet& net, int n, int image_h, int image_w) {
    if (n <= 0) throw std::invalid_argument("timing_probe: n must be positive");
    Rng rng(0xbadcafeULL);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor img({image_h, image_w, 3});
        for (int64_t j = 0; j < img.size(); ++j) img[j] = rng.uniform();
        const auto t0 = std::chrono::steady_clock::now();
        ad::Graph g;
        ad::Value image = ad::leaf(std::move(img), false);
        net.forward(g, image);
        const auto t1 = std::chrono::steady_clock::now();
        total += std::chrono::duration<double>(t1 - t0).count();
    }
    return total / n;
}

}  // namespace uninet::runner
