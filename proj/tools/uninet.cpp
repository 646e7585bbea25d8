#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uninet/attacks.hpp"
#include "uninet/errors.hpp"
#include "uninet/report.hpp"
#include "uninet/runner.hpp"
#include "uninet/scenegen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace uninet;

namespace {

// UNINET_LAB_DIR anchors relative paths when set
std::string resolve_path(const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    const char* root = std::getenv("UNINET_LAB_DIR");
    if (!root || !*root) return p;
    return (fs::path(root) / p).string();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

int thing_class_index(const scenegen::SceneSpec& spec, const std::string& name) {
    for (size_t i = 0; i < spec.thing_classes.size(); ++i)
        if (spec.thing_classes[i].name == name) return static_cast<int>(i);
    throw ConfigError("unknown thing class '" + name + "'");
}

int run_cli(std::vector<std::string> args);

// ------------------------------------------------------------- subcommands

struct GenOpts {
    std::string spec_file, out_dir;
    int count = -1;
    int64_t seed = -1;
};

void cmd_gen(const GenOpts& o) {
    scenegen::SceneSpec spec = scenegen::SceneSpec::reference();
    if (!o.spec_file.empty()) spec = scenegen::spec_from_json(read_file(resolve_path(o.spec_file)));
    if (o.seed >= 0) spec.seed = static_cast<uint64_t>(o.seed);
    const std::string out = resolve_path(o.out_dir);
    scenegen::render_dataset(spec, o.count, out);
    std::cout << "wrote " << o.count << " samples to " << out << "\n";
}

struct TrainOpts {
    std::string config_file, data_dir, out_ckpt, curve_csv, tasks = "od,ss,is,d,id";
    int epochs = -1, batch = -1;
    double lr = -1.0;
    int64_t seed = -1;
};

void cmd_train(const TrainOpts& o) {
    runner::RunConfig cfg;
    if (!o.config_file.empty()) cfg = runner::RunConfig::from_json(read_file(resolve_path(o.config_file)));
    if (!o.data_dir.empty()) cfg.train_dir = resolve_path(o.data_dir);
    cfg.tasks = model::TaskSet::parse(o.tasks);
    if (o.epochs > 0) cfg.epochs = o.epochs;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.lr > 0) cfg.lr = o.lr;
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    cfg.validate();

    runner::TrainResult result = runner::train(cfg, &std::cout);
    const std::string out = resolve_path(o.out_ckpt);
    if (const auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
    model::save_checkpoint(out, result.checkpoint);
    if (!o.curve_csv.empty()) runner::write_loss_curve_csv(resolve_path(o.curve_csv), result.curve);
    std::cout << "checkpoint: " << out << "\n";
}

struct EvalOpts {
    std::string ckpt, data_dir, out_csv;
    int limit = 0, jobs = 1;
    double score_thresh = 0.30, nms_iou = 0.5;
};

void cmd_eval(const EvalOpts& o) {
    const auto ckpt = model::load_checkpoint(resolve_path(o.ckpt));
    runner::EvalOptions opts;
    opts.limit = o.limit;
    opts.jobs = o.jobs;
    opts.score_thresh = o.score_thresh;
    opts.nms_iou = o.nms_iou;
    const auto report = runner::evaluate(ckpt, resolve_path(o.data_dir), opts);
    const std::string csv = report.to_csv();
    if (!o.out_csv.empty()) {
        const std::string out = resolve_path(o.out_csv);
        if (const auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
        std::ofstream f(out);
        if (!f) throw IoError("cannot write " + out);
        f << csv;
    }
    std::cout << csv;
}

struct AttackOpts {
    std::string ckpt, data_dir, out_dir;
    std::string attack = "pgd";
    std::string loss = "mtl";
    std::string eps = "1";
    double alpha = 1.0;
    int iters = -1;
    std::string swap;          // "person:car"
    double gamma = 0.5 / 255.0;
    int max_iters = 60;
    double conf = 0.3;
    std::string hide_class, head = "seg";
    int count = 20, jobs = 1;
    double score_thresh = 0.30;
};

void cmd_attack(const AttackOpts& o) {
    runner::Campaign camp;
    camp.checkpoint_path = resolve_path(o.ckpt);
    camp.dataset_dir = resolve_path(o.data_dir);
    camp.out_dir = resolve_path(o.out_dir);
    camp.image_limit = o.count;
    camp.jobs = o.jobs;
    camp.eval.score_thresh = o.score_thresh;
    camp.eval.jobs = o.jobs;

    const auto manifest = scenegen::load_manifest(camp.dataset_dir);

    if (o.attack == "pgd") {
        for (const std::string& loss : split(o.loss, ',')) {
            for (const std::string& eps : split(o.eps, ',')) {
                runner::CampaignCell cell;
                cell.kind = runner::CampaignCell::Kind::Pgd;
                cell.pgd.selector = attacks::parse_selector(loss);
                cell.pgd.epsilon = std::stod(eps);
                cell.pgd.alpha = o.alpha;
                cell.pgd.iterations = o.iters;
                camp.cells.push_back(cell);
            }
        }
    } else if (o.attack == "dag") {
        const auto parts = split(o.swap, ':');
        if (parts.size() != 2) throw ConfigError("dag attack needs --swap c1:c2");
        runner::CampaignCell cell;
        cell.kind = runner::CampaignCell::Kind::Dag;
        cell.dag_c1 = thing_class_index(manifest.spec, parts[0]);
        cell.dag_c2 = thing_class_index(manifest.spec, parts[1]);
        cell.dag.gamma = o.gamma;
        cell.dag.max_iters = o.max_iters;
        cell.dag.confidence = o.conf;
        camp.cells.push_back(cell);
    } else if (o.attack == "hide") {
        if (o.hide_class.empty()) throw ConfigError("hide attack needs --class");
        for (const std::string& head : split(o.head, ',')) {
            runner::CampaignCell cell;
            cell.kind = runner::CampaignCell::Kind::Hide;
            cell.hide_class = thing_class_index(manifest.spec, o.hide_class);
            if (head == "seg")
                cell.hide_head = attacks::HidingHead::Seg;
            else if (head == "depth")
                cell.hide_head = attacks::HidingHead::Depth;
            else
                throw ConfigError("--head must be seg or depth");
            cell.hide_eps = std::stod(o.eps);
            cell.hide_alpha = o.alpha;
            cell.hide_iters = o.iters;
            camp.cells.push_back(cell);
        }
    } else {
        throw ConfigError("--attack must be pgd, dag, or hide");
    }

    const auto result = runner::run_campaign(camp, &std::cout);
    for (const auto& cell : result.cells)
        if (!cell.error.empty()) std::cout << "cell " << cell.name << " failed: " << cell.error << "\n";
    std::cout << "summary: " << (fs::path(camp.out_dir) / "summary.csv").string() << "\n";
}

struct ReportOpts {
    std::string campaign_dir, out_dir;
};

void cmd_report(const ReportOpts& o) {
    const std::string campaign = resolve_path(o.campaign_dir);
    const std::string out = o.out_dir.empty() ? campaign : resolve_path(o.out_dir);
    fs::create_directories(out);
    const auto rows = report::read_summary_csv((fs::path(campaign) / "summary.csv").string());
    report::write_ratio_bars_svg((fs::path(out) / "ratio_bars.svg").string(), rows);
    report::write_ratio_table_csv((fs::path(out) / "ratio_table.csv").string(), rows);
    bool has_swap = false;
    for (const auto& r : rows) has_swap = has_swap || r.metric.rfind("aspect_ratio.", 0) == 0;
    if (has_swap) report::write_swap_panels_svg((fs::path(out) / "swap_panels.svg").string(), rows);
    std::cout << "report written to " << out << "\n";
}

void cmd_recipe(const std::string& file) {
    json j = json::parse(read_file(resolve_path(file)));
    for (const auto& stage : j.at("stages")) {
        const std::string cmd = stage.at("cmd").get<std::string>();
        std::vector<std::string> args{cmd};
        for (const auto& [key, value] : stage.at("args").items()) {
            args.push_back("--" + key);
            if (value.is_boolean()) {
                if (!value.get<bool>()) args.pop_back();
            } else if (value.is_string()) {
                args.push_back(value.get<std::string>());
            } else {
                args.push_back(value.dump());
            }
        }
        std::cout << "== stage: " << cmd << "\n";
        const int rc = run_cli(args);
        if (rc != 0) throw std::runtime_error("recipe stage '" + cmd + "' failed with code " + std::to_string(rc));
    }
}

int run_cli(std::vector<std::string> args) {
    CLI::App app{"uninet: synthetic multi-task scene understanding lab"};
    app.require_subcommand(1);

    GenOpts gen;
    auto* cgen = app.add_subcommand("gen", "generate a synthetic dataset");
    cgen->add_option("--spec", gen.spec_file, "scene spec json (defaults to the reference spec)");
    cgen->add_option("--count", gen.count, "number of samples")->required();
    cgen->add_option("--out", gen.out_dir, "output dataset directory")->required();
    cgen->add_option("--seed", gen.seed, "seed override");

    TrainOpts train;
    auto* ctrain = app.add_subcommand("train", "train a model");
    ctrain->add_option("--config", train.config_file, "run config json");
    ctrain->add_option("--data", train.data_dir, "training dataset directory");
    ctrain->add_option("--out", train.out_ckpt, "output checkpoint path")->required();
    ctrain->add_option("--tasks", train.tasks, "task subset, e.g. od,ss,is,d,id");
    ctrain->add_option("--epochs", train.epochs, "epoch count");
    ctrain->add_option("--batch", train.batch, "batch size");
    ctrain->add_option("--lr", train.lr, "learning rate");
    ctrain->add_option("--seed", train.seed, "training seed");
    ctrain->add_option("--curve", train.curve_csv, "loss curve csv path");

    EvalOpts eval;
    auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint");
    ceval->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
    ceval->add_option("--data", eval.data_dir, "dataset directory")->required();
    ceval->add_option("--out", eval.out_csv, "metric report csv path");
    ceval->add_option("--limit", eval.limit, "evaluate at most N samples");
    ceval->add_option("--jobs", eval.jobs, "worker threads");
    ceval->add_option("--score-thresh", eval.score_thresh, "detection score threshold");
    ceval->add_option("--nms", eval.nms_iou, "NMS IoU threshold");

    AttackOpts attack;
    auto* cattack = app.add_subcommand("attack", "run an attack campaign");
    cattack->add_option("--ckpt", attack.ckpt, "checkpoint path")->required();
    cattack->add_option("--data", attack.data_dir, "dataset directory")->required();
    cattack->add_option("--out", attack.out_dir, "campaign output directory")->required();
    cattack->add_option("--attack", attack.attack, "pgd | dag | hide");
    cattack->add_option("--loss", attack.loss, "pgd loss selector(s), comma separated");
    cattack->add_option("--eps", attack.eps, "epsilon value(s) on the 0-255 scale");
    cattack->add_option("--alpha", attack.alpha, "step size");
    cattack->add_option("--iters", attack.iters, "iteration override (-1: schedule)");
    cattack->add_option("--swap", attack.swap, "dag: class pair c1:c2");
    cattack->add_option("--gamma", attack.gamma, "dag: step magnitude on [0,1] images");
    cattack->add_option("--max-iters", attack.max_iters, "dag: iteration cap");
    cattack->add_option("--conf", attack.conf, "dag: confidence gate");
    cattack->add_option("--class", attack.hide_class, "hide: thing class name");
    cattack->add_option("--head", attack.head, "hide: seg | depth (comma separated for both)");
    cattack->add_option("--count", attack.count, "number of images");
    cattack->add_option("--jobs", attack.jobs, "worker threads");
    cattack->add_option("--score-thresh", attack.score_thresh, "detection score threshold");

    ReportOpts rep;
    auto* crep = app.add_subcommand("report", "render plots and tables from a campaign");
    crep->add_option("--campaign", rep.campaign_dir, "campaign output directory")->required();
    crep->add_option("--out", rep.out_dir, "report output directory");

    std::string recipe_file;
    auto* crecipe = app.add_subcommand("recipe", "run an ordered stage pipeline");
    crecipe->add_option("--file", recipe_file, "recipe json")->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (cgen->parsed()) cmd_gen(gen);
        if (ctrain->parsed()) cmd_train(train);
        if (ceval->parsed()) cmd_eval(eval);
        if (cattack->parsed()) cmd_attack(attack);
        if (crep->parsed()) cmd_report(rep);
        if (crecipe->parsed()) cmd_recipe(recipe_file);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(std::move(args));
}
