#ifndef UNINET_RUNNER_HPP
#define UNINET_RUNNER_HPP

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uninet/attacks.hpp"
#include "uninet/losses.hpp"
#include "uninet/metrics.hpp"
#include "uninet/model.hpp"
#include "uninet/scenegen.hpp"

namespace uninet::runner {

struct RunConfig {
    model::TaskSet tasks = model::TaskSet::all();
    std::string train_dir;
    int epochs = 12;
    double lr = 1e-4;  // dropped by lr_decay_factor at the decay fractions
    double lr_decay_factor = 0.1;
    std::array<double, 2> decay_fracs{0.7, 0.9};
    int batch_size = 8;
    losses::LossWeights weights;
    uint64_t seed = 123;
    model::ModelConfig model_cfg;
    int pca_fit_masks = 512;
    double varifocal_alpha = 0.75;
    double varifocal_gamma = 2.0;
    double eps_floor = 1e-8;

    void validate() const;
    std::string to_json() const;  // schema-versioned
    static RunConfig from_json(const std::string& text);
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    losses::LossBundle mean;
};

struct TrainResult {
    model::Checkpoint checkpoint;
    std::vector<EpochStats> curve;
};

TrainResult train(const RunConfig& cfg, std::ostream* log = nullptr);
void write_loss_curve_csv(const std::string& path, const std::vector<EpochStats>& curve);

struct EvalOptions {
    double score_thresh = 0.30;
    double nms_iou = 0.5;
    int max_dets = 64;
    int limit = 0;  // 0 = whole split
    int jobs = 1;
};

// checkpoint rebuilt into a runnable model
struct LoadedModel {
    model::UniNet net;
    std::optional<maskcodec::PcaBasis> basis;
    std::vector<double> seg_class_weights;

    explicit LoadedModel(const model::Checkpoint& ckpt);
    const maskcodec::PcaBasis* basis_ptr() const { return basis ? &*basis : nullptr; }
};

metrics::MetricReport evaluate(const model::Checkpoint& ckpt, const std::string& dataset_dir,
                               const EvalOptions& opts = {});
metrics::MetricReport evaluate(const LoadedModel& lm, const scenegen::DatasetManifest& manifest,
                               const EvalOptions& opts = {});

// ---------------------------------------------------------------- campaigns

struct CampaignCell {
    enum class Kind { Pgd, Dag, Hide };
    std::string name;  // derived from the parameters when empty
    Kind kind = Kind::Pgd;
    attacks::AttackConfig pgd;
    attacks::DagConfig dag;
    int dag_c1 = 0, dag_c2 = 1;
    attacks::HidingHead hide_head = attacks::HidingHead::Seg;
    int hide_class = 0;  // thing class index
    double hide_eps = 2.0, hide_alpha = 1.0;
    int hide_iters = -1;

    std::string display_name(const scenegen::SceneSpec& spec) const;
};

struct Campaign {
    std::string checkpoint_path;
    std::string dataset_dir;
    int image_limit = 20;
    std::vector<CampaignCell> cells;
    std::string out_dir;
    int jobs = 1;
    EvalOptions eval;
};

struct CellResult {
    std::string name;
    metrics::MetricReport report;
    std::map<std::string, std::optional<double>> extras;
    std::string error;  // nonempty when the cell failed; other cells still run
};

struct CampaignResult {
    metrics::MetricReport baseline;
    std::map<std::string, std::optional<double>> baseline_extras;
    std::vector<CellResult> cells;
};

CampaignResult run_campaign(const Campaign& campaign, std::ostream* log = nullptr);

// mean wall-clock seconds for n single-image forward passes on random inputs
double timing_probe(const model::UniNet& net, int n, int image_h = 128, int image_w = 128);

}  // namespace uninet::runner

#endif
