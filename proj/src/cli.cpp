#include "ugss/cli.hpp"

#include <openssl/opensslv.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ugss/autoclean.hpp"
#include "ugss/config.hpp"
#include "ugss/container.hpp"
#include "ugss/impute.hpp"
#include "ugss/metrics.hpp"
#include "ugss/phantom.hpp"
#include "ugss/pipeline.hpp"
#include "ugss/plot.hpp"
#include "ugss/preprocess.hpp"
#include "ugss/train.hpp"

#ifndef UGSS_VERSION
#define UGSS_VERSION "0.0.0"
#endif

namespace ugss {

namespace fs = std::filesystem;

namespace {

struct Context {
    std::string command;
    std::optional<fs::path> config_path;
    Json config = Json::object();
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::uint64_t> seed_used;
    std::optional<fs::path> out_dir;
    int parallel_folds = 1;
    fs::path results_dir;
    Json outputs = Json::object();
    std::ostream* out = nullptr;
};

fs::path require_out(const Context& c) {
    if (!c.out_dir) throw ValidationError("--out", "output directory is required");
    return *c.out_dir;
}

const Json& require_config(const Context& c) {
    if (!c.config_path) throw ValidationError("--config", "config file is required");
    return c.config;
}

// Paths in a config are relative to the config file.
fs::path config_path(const Context& c, const std::string& key) {
    const Json& j = c.config;
    if (!j.contains(key)) throw ValidationError(key, "required");
    if (!j.at(key).is_string()) throw ValidationError(key, "must be a path string");
    fs::path p = j.at(key).get<std::string>();
    if (p.is_relative() && c.config_path) p = c.config_path->parent_path() / p;
    return p;
}

// Rejects keys outside `allowed`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ValidationError("config", "must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ValidationError(it.key(), "unknown key");
    }
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void cmd_generate(Context& c) {
    const Json& j = require_config(c);
    check_keys(j, {"n", "phantom"});
    PhantomConfig pc = j.contains("phantom") ? parse_phantom(j.at("phantom")) : PhantomConfig{};
    int n = 8;
    if (j.contains("n")) {
        if (!j.at("n").is_number_integer()) throw ValidationError("n", "must be an integer");
        n = j.at("n").get<int>();
    }
    if (n < 1) throw ValidationError("n", "must be >= 1");
    if (c.seed_flag) pc.seed = *c.seed_flag;
    c.seed_used = pc.seed;
    const fs::path out = require_out(c);
    generate_dataset(pc, n, out);

    std::array<int, kNumOrgans> available{};
    int chest = 0, overannotated = 0, full = 0;
    for (const auto& r : load_records(out / "manifest.json")) {
        for (OrganId o : kAllOrgans) available[slot(o)] += r.labels.is_available(o) ? 1 : 0;
        const PhantomTruth t = ground_truth(r);
        chest += t.chest_slices > 0;
        overannotated += t.overannotation_slices > 0;
        full += r.labels.fully_annotated();
    }
    *c.out << "generated " << n << " records\n";
    *c.out << "fully annotated " << full << "\n";
    for (OrganId o : kAllOrgans) *c.out << "available " << organ_name(o) << " " << available[slot(o)] << "\n";
    *c.out << "with chest slices " << chest << "\n";
    *c.out << "with over-annotated bowel bag " << overannotated << "\n";
    c.outputs["manifest"] = (out / "manifest.json").string();
    c.outputs["records"] = n;
}

void cmd_preprocess(Context& c) {
    const Json& j = require_config(c);
    check_keys(j, {"manifest", "preprocess"});
    const PreprocessOptions opt = j.contains("preprocess") ? parse_preprocess(j.at("preprocess")) : PreprocessOptions{};
    const fs::path manifest = config_path(c, "manifest");
    const fs::path out = require_out(c);
    std::vector<ScanRecord> records;
    for (auto& r : load_records(manifest)) records.push_back(preprocess_record(std::move(r), opt));
    write_dataset(records, out);
    *c.out << "preprocessed " << records.size() << " records\n";
    c.outputs["manifest"] = (out / "manifest.json").string();
}

void cmd_clean(Context& c) {
    const Json& j = require_config(c);
    check_keys(j, {"manifest", "thresholds", "phantom", "histogram_bin_mm"});
    CleaningThresholds th = CleaningThresholds::disabled();
    if (j.contains("thresholds")) {
        const Json& t = j.at("thresholds");
        if (t.is_string()) {
            if (t.get<std::string>() != "auto") throw ValidationError("thresholds", "must be an object or \"auto\"");
            const PhantomConfig pc = j.contains("phantom") ? parse_phantom(j.at("phantom")) : PhantomConfig{};
            th = phantom_cleaning_thresholds(pc);
        } else {
            th = parse_thresholds(t);
        }
    }
    double bin = 5.0;
    if (j.contains("histogram_bin_mm")) {
        if (!j.at("histogram_bin_mm").is_number()) throw ValidationError("histogram_bin_mm", "must be a number");
        bin = j.at("histogram_bin_mm").get<double>();
        if (!(bin > 0)) throw ValidationError("histogram_bin_mm", "must be positive");
    }
    const fs::path manifest = config_path(c, "manifest");
    const fs::path out = require_out(c);
    const auto records = load_records(manifest);
    // Histograms need the hip landmark; cleaning reports those records as failures.
    std::vector<ScanRecord> with_hips;
    for (const auto& r : records) {
        if (r.labels.is_available(OrganId::Hips) && count_nonzero(r.labels.mask(OrganId::Hips)) > 0) with_hips.push_back(r);
    }
    if (with_hips.empty()) throw ValidationError("manifest", "no record carries a hips annotation");
    const ExtentHistograms h = compute_extent_histograms(with_hips, bin);
    const CleanedDataset cleaned = clean_records(records, th);
    write_dataset(cleaned.records, out);
    write_text_atomic(out / "cleaning_report.json", cleaned.report.to_json());
    write_text_atomic(out / "histogram_scan_extent.csv", h.scan_extent.to_csv());
    write_text_atomic(out / "histogram_bowel_extent.csv", h.bowel_extent.to_csv());
    write_text_atomic(out / "thresholds.json", to_json(th).dump(2) + "\n");
    *c.out << "kept " << cleaned.report.kept << " discarded " << cleaned.report.discarded << " modified "
           << cleaned.report.modified << "\n";
    c.outputs["manifest"] = (out / "manifest.json").string();
    c.outputs["report"] = (out / "cleaning_report.json").string();
    c.outputs["histogram_records"] = with_hips.size();
}

void cmd_train(Context& c, TrainRole role) {
    const Json& j = require_config(c);
    check_keys(j, {"train_manifest", "val_manifest", "train"});
    const TrainConfig base = role == TrainRole::Teacher ? TrainConfig::teacher_defaults() : TrainConfig::student_defaults();
    TrainConfig cfg = j.contains("train") ? parse_train(j.at("train"), base, "train") : base;
    cfg.role = role;
    if (c.seed_flag) cfg.seed = *c.seed_flag;
    c.seed_used = cfg.seed;
    const auto train = load_records(config_path(c, "train_manifest"));
    std::vector<ScanRecord> val;
    if (j.contains("val_manifest")) val = load_records(config_path(c, "val_manifest"));
    const fs::path out = require_out(c);
    const TrainResult r = train_model(train, val, cfg);
    fs::create_directories(out);
    save_checkpoint(out / "best.ckpt", r.best, r.best_step, to_string(role));
    save_checkpoint(out / "last.ckpt", r.last, r.steps, to_string(role));
    write_text_atomic(out / "curves.csv", r.curves_csv());
    Json summary{{"steps", r.steps}, {"best_step", r.best_step}, {"config", to_json(cfg)}};
    summary["best_val_dice"] = r.best_val_dice ? Json(*r.best_val_dice) : Json(nullptr);
    write_text_atomic(out / "summary.json", summary.dump(2) + "\n");
    *c.out << "trained " << r.steps << " steps, best step " << r.best_step << "\n";
    c.outputs["checkpoint"] = (out / "best.ckpt").string();
}

void cmd_impute(Context& c) {
    const Json& j = require_config(c);
    check_keys(j, {"checkpoint", "manifest", "inference"});
    const InferenceOptions inf = j.contains("inference") ? parse_inference(j.at("inference")) : InferenceOptions{};
    const Checkpoint ck = load_checkpoint(config_path(c, "checkpoint"));
    const fs::path out = require_out(c);
    const auto [manifest, report] = impute_dataset(ck.model, config_path(c, "manifest"), inf, out);
    *c.out << "imputed " << report.records << " records, " << report.passthrough << " fully annotated\n";
    c.outputs["manifest"] = (out / "manifest.json").string();
}

void cmd_evaluate(Context& c) {
    const Json& j = require_config(c);
    check_keys(j, {"checkpoint", "manifest", "inference", "surface_tolerance_mm", "use_phantom_truth"});
    const InferenceOptions inf = j.contains("inference") ? parse_inference(j.at("inference")) : InferenceOptions{};
    double tol = kDefaultSurfaceTolMm;
    if (j.contains("surface_tolerance_mm")) {
        if (!j.at("surface_tolerance_mm").is_number()) throw ValidationError("surface_tolerance_mm", "must be a number");
        tol = j.at("surface_tolerance_mm").get<double>();
    }
    bool truth = false;
    if (j.contains("use_phantom_truth")) {
        if (!j.at("use_phantom_truth").is_boolean()) throw ValidationError("use_phantom_truth", "must be a boolean");
        truth = j.at("use_phantom_truth").get<bool>();
    }
    const Checkpoint ck = load_checkpoint(config_path(c, "checkpoint"));
    auto records = load_records(config_path(c, "manifest"));
    if (truth)
        for (auto& r : records) r = with_truth_labels(r);
    const fs::path out = require_out(c);
    const MetricsTable t =
        evaluate_dataset([&](const ScanRecord& r) { return predict_classes(ck.model, r, inf); }, records, tol);
    fs::create_directories(out);
    write_text_atomic(out / "metrics.csv", t.to_csv());
    write_text_atomic(out / "aggregates.json", t.aggregates_json());
    const Aggregate d = t.per_scan(Metric::Dice);
    *c.out << "mean Dice " << d.mean << " over " << d.n << " scans\n";
    c.outputs["metrics"] = (out / "metrics.csv").string();
}

void cmd_ablation(Context& c) {
    ExperimentConfig cfg = parse_experiment(require_config(c));
    if (c.seed_flag) cfg.seed = *c.seed_flag;
    c.seed_used = cfg.seed;
    if (c.parallel_folds < 1) throw ValidationError("--parallel-folds", "must be >= 1");
    const fs::path out = require_out(c);
    AblationOptions opt;
    opt.parallel_folds = c.parallel_folds;
    opt.verbose = true;
    if (const char* env = std::getenv("UGSS_CACHE_DIR"); env && *env) opt.cache_dir = fs::path(env);
    else opt.cache_dir = out / "cache";
    const AblationResult res = run_ablation(cfg, opt);
    write_ablation_outputs(res, cfg, out);
    *c.out << table1_csv(res.arms);
    c.outputs["table1"] = (out / "table1.csv").string();
    c.outputs["cache_dir"] = opt.cache_dir->string();
    Json failed = Json::array();
    for (const auto& a : res.arms)
        if (!a.ok) failed.push_back({{"arm", a.arm}, {"error", a.error}});
    c.outputs["failed_arms"] = failed;
    if (failed.size() == res.arms.size()) throw Error("every arm failed");
}

void cmd_plot(Context& c) {
    if (c.results_dir.empty()) throw ValidationError("results", "results directory is required");
    const fs::path out = c.out_dir ? *c.out_dir : c.results_dir / "plots";
    if (!c.out_dir) c.out_dir = out;
    Json files = Json::array();
    for (const auto& f : plot_results(c.results_dir, out)) files.push_back(f.string());
    *c.out << "wrote " << files.size() << " plots\n";
    c.outputs["plots"] = files;
}

void write_run_json(const Context& c, int code, const std::string& error, double wall) {
    if (!c.out_dir) return;
    Json j;
    j["command"] = c.command;
    j["config_path"] = c.config_path ? Json(c.config_path->string()) : Json(nullptr);
    j["config"] = c.config;
    j["config_sha256"] = sha256_hex(c.config.dump());
    j["seed"] = c.seed_used ? Json(*c.seed_used) : (c.seed_flag ? Json(*c.seed_flag) : Json(nullptr));
    j["versions"] = {{"ugss", UGSS_VERSION},
                     {"compiler", __VERSION__},
                     {"cxx_standard", __cplusplus},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"cli11", CLI11_VERSION},
                     {"openssl", OPENSSL_VERSION_TEXT}};
    j["started_utc"] = utc_now();
    j["wall_time_s"] = wall;
    j["exit_code"] = code;
    j["status"] = code == kExitOk ? "ok" : "error";
    if (!error.empty()) j["error"] = error;
    j["outputs"] = c.outputs;
    try {
        fs::create_directories(*c.out_dir);
        write_text_atomic(*c.out_dir / "run.json", j.dump(2) + "\n");
    } catch (const std::exception&) {
        // Provenance is best effort once the command itself has failed.
        if (code == kExitOk) throw;
    }
}

}  // namespace

std::string version_string() { return UGSS_VERSION; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Uncertainty-guided semi-supervised organ segmentation on synthetic phantoms", "ugss"};
    app.require_subcommand(1);
    app.set_version_flag("--version", UGSS_VERSION);

    Context c;
    c.out = &out;
    std::string config_file, out_dir, results_dir;
    std::uint64_t seed = 0;
    int parallel = 1;

    struct Spec {
        const char* name;
        const char* help;
    };
    const Spec specs[] = {{"generate", "Generate a phantom dataset"},
                          {"preprocess", "Resample and window a dataset"},
                          {"clean", "Crop, delete and discard noisy annotations"},
                          {"train-teacher", "Train a K-head teacher"},
                          {"impute", "Impute missing organ annotations with a trained model"},
                          {"train-student", "Train a student with the uncertainty-guided loss"},
                          {"evaluate", "Score a model on a dataset"},
                          {"ablation", "Run the arm ablation over cross-validation folds"},
                          {"plot", "Render SVG plots from a results directory"}};
    std::vector<CLI::App*> subs;
    for (const Spec& s : specs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", config_file, "JSON config file");
        sub->add_option("--seed", seed, "Seed override");
        sub->add_option("--out", out_dir, "Output directory");
        if (std::string(s.name) == "ablation") {
            sub->add_option("--parallel-folds", parallel, "Folds run concurrently")->check(CLI::PositiveNumber);
        }
        if (std::string(s.name) == "plot") sub->add_option("results", results_dir, "Results directory")->required();
        subs.push_back(sub);
    }

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    for (CLI::App* s : subs)
        if (s->parsed()) c.command = s->get_name();
    CLI::App* sub = app.get_subcommand(c.command);
    if (sub->count("--seed")) c.seed_flag = seed;
    if (!out_dir.empty()) c.out_dir = fs::path(out_dir);
    if (!results_dir.empty()) c.results_dir = results_dir;
    c.parallel_folds = parallel;

    const auto t0 = std::chrono::steady_clock::now();
    int code = kExitOk;
    std::string error;
    try {
        if (!config_file.empty()) {
            c.config_path = fs::path(config_file);
            c.config = load_json_file(*c.config_path);
        }
        if (c.command == "generate") cmd_generate(c);
        else if (c.command == "preprocess") cmd_preprocess(c);
        else if (c.command == "clean") cmd_clean(c);
        else if (c.command == "train-teacher") cmd_train(c, TrainRole::Teacher);
        else if (c.command == "impute") cmd_impute(c);
        else if (c.command == "train-student") cmd_train(c, TrainRole::Student);
        else if (c.command == "evaluate") cmd_evaluate(c);
        else if (c.command == "ablation") cmd_ablation(c);
        else if (c.command == "plot") cmd_plot(c);
    } catch (const ValidationError& e) {
        code = kExitConfig;
        error = e.what();
    } catch (const Json::exception& e) {
        code = kExitConfig;
        error = std::string("config: ") + e.what();
    } catch (const std::exception& e) {
        code = kExitRuntime;
        error = e.what();
    }
    if (!error.empty()) err << "error: " << error << "\n";
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
        write_run_json(c, code, error, wall);
    } catch (const std::exception& e) {
        err << "error: cannot write run.json: " << e.what() << "\n";
        return kExitRuntime;
    }
    return code;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace ugss
