#include "ugss/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ugss/container.hpp"
#include "ugss/impute.hpp"
#include "ugss/phantom.hpp"
#include "ugss/preprocess.hpp"

namespace ugss {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::mutex log_mutex;

void log_line(bool verbose, const std::string& msg) {
    if (!verbose) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << msg << "\n";
}

// Value computed once on first use; a failure is remembered and rethrown.
template <class T>
class Lazy {
public:
    template <class F>
    const T& get(F&& make) {
        if (error_) std::rethrow_exception(error_);
        if (!value_) {
            try {
                value_.emplace(make());
            } catch (...) {
                error_ = std::current_exception();
                throw;
            }
        }
        return *value_;
    }

private:
    std::optional<T> value_;
    std::exception_ptr error_;
};

Fold restrict_fold(const Fold& f, const std::vector<ScanRecord>& records) {
    std::set<std::string> present;
    for (const auto& r : records) present.insert(r.id);
    Fold out;
    for (const auto& id : f.train_ids)
        if (present.count(id)) out.train_ids.push_back(id);
    for (const auto& id : f.val_ids)
        if (present.count(id)) out.val_ids.push_back(id);
    if (out.train_ids.empty()) throw ValidationError("folds", "no training records left after cleaning");
    return out;
}

// Experiment settings that change trained models; arm selection does not.
std::string model_config_hash(const ExperimentConfig& c) {
    Json j = to_json(c);
    j.erase("arms");
    j.erase("wilcoxon_reference");
    return sha256_hex(j.dump()).substr(0, 16);
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    Rng rng = make_rng(seed, {stream::kFolds, static_cast<std::uint64_t>(fold) + 1});
    return rng();
}

int iterations_needed(const std::vector<std::string>& arms) {
    int n = 0;
    for (const auto& a : arms) {
        if (a == "robust_teacher+robust_student") n = std::max(n, 1);
        if (a == "iteration_2") n = std::max(n, 2);
        if (a == "iteration_3") n = std::max(n, 3);
    }
    return n;
}

struct FoldOutput {
    std::map<std::string, MetricsTable> tables;
    std::map<std::string, std::string> errors;
};

class FoldRunner {
public:
    FoldRunner(const ExperimentConfig& cfg, const ExperimentData& data, const Fold& fold, int index,
               const AblationOptions& opt)
        : cfg_(cfg), data_(data), fold_(fold), index_(index), opt_(opt), seed_(fold_seed(cfg.seed, index)) {
        if (opt.cache_dir) {
            dir_ = *opt.cache_dir / model_config_hash(cfg) / ("fold" + std::to_string(index));
        }
    }

    FoldOutput run() {
        FoldOutput out;
        for (const auto& arm : cfg_.arms) {
            try {
                log_line(opt_.verbose, "[fold " + std::to_string(index_) + "] " + arm);
                out.tables[arm] = evaluate(arm_model(arm), arm_patch_depth(arm));
            } catch (const std::exception& e) {
                out.errors[arm] = e.what();
                log_line(opt_.verbose, "[fold " + std::to_string(index_) + "] " + arm + " failed: " + e.what());
            }
        }
        return out;
    }

private:
    TrainConfig teacher_cfg(AugmentTier tier, bool single_head) const {
        TrainConfig t = cfg_.teacher;
        t.role = TrainRole::Teacher;
        t.seed = seed_;
        t.augment.tier = tier;
        if (single_head) t.model.heads = 1;
        return t;
    }

    TrainConfig student_cfg(AugmentTier tier) const {
        TrainConfig s = cfg_.student;
        s.role = TrainRole::Student;
        s.seed = seed_;
        s.augment.tier = tier;
        return s;
    }

    const std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>>& clean_split() {
        return clean_split_.get([&] { return split_fold(data_.full_clean, restrict_fold(fold_, data_.full_clean)); });
    }

    // Loads `key` from the cache when present; otherwise trains and stores it.
    KHeadModel cached(const std::string& key, const std::function<TrainResult()>& train) {
        std::optional<std::filesystem::path> file;
        if (dir_) {
            file = *dir_ / (key + ".ckpt");
            if (std::filesystem::exists(*file)) {
                try {
                    return load_checkpoint(*file).model;
                } catch (const Error&) {
                    // Unreadable cache entries are retrained and overwritten.
                }
            }
        }
        TrainResult r = train();
        if (file) {
            std::filesystem::create_directories(file->parent_path());
            save_checkpoint(*file, r.best, r.best_step, key);
            write_text_atomic(*dir_ / (key + "_curves.csv"), r.curves_csv());
        }
        return std::move(r.best);
    }

    const KHeadModel& teacher(AugmentTier tier) {
        auto& slot = tier == AugmentTier::Basic ? basic_teacher_ : robust_teacher_;
        return slot.get([&] {
            const std::string key = tier == AugmentTier::Basic ? "basic_teacher" : "robust_teacher";
            return cached(key, [&] {
                const auto& [tr, va] = clean_split();
                return train_teacher(tr, va, teacher_cfg(tier, false));
            });
        });
    }

    std::vector<KHeadModel> students(AugmentTier teacher_tier, AugmentTier student_tier, int n_iters) {
        const auto& [tr, va] = clean_split();
        TrainResult t;
        t.best = teacher(teacher_tier);
        SelfTrainingInput in{tr, va, data_.partial};
        std::optional<std::filesystem::path> snap;
        const std::string chain = std::string(teacher_tier == AugmentTier::Basic ? "basic" : "robust") + "_teacher+" +
                                  (student_tier == AugmentTier::Basic ? "basic" : "robust") + "_student";
        if (dir_) snap = *dir_ / chain;
        const auto iters = iterate_teacher_student(n_iters, teacher_cfg(teacher_tier, false), student_cfg(student_tier), in,
                                                   t, snap);
        std::vector<KHeadModel> out;
        for (const auto& it : iters) out.push_back(it.student.best);
        return out;
    }

    KHeadModel arm_model(const std::string& arm) {
        if (arm == "baseline_full") {
            return cached("baseline_full", [&] {
                const auto [tr, va] = split_fold(data_.full, fold_);
                return train_teacher(tr, va, teacher_cfg(AugmentTier::Basic, true));
            });
        }
        if (arm == "baseline_clean") {
            return cached("baseline_clean", [&] {
                const auto& [tr, va] = clean_split();
                return train_teacher(tr, va, teacher_cfg(AugmentTier::Basic, true));
            });
        }
        if (arm == "basic_teacher") return teacher(AugmentTier::Basic);
        if (arm == "robust_teacher") return teacher(AugmentTier::Additional);
        if (arm == "basic_student") {
            return basic_student_.get([&] { return students(AugmentTier::Basic, AugmentTier::Basic, 1); })[0];
        }
        if (arm == "basic_teacher+robust_student") {
            return basic_robust_.get([&] { return students(AugmentTier::Basic, AugmentTier::Additional, 1); })[0];
        }
        const int n = iterations_needed(cfg_.arms);
        const auto& chain = robust_chain_.get([&] { return students(AugmentTier::Additional, AugmentTier::Additional, n); });
        if (arm == "robust_teacher+robust_student") return chain.at(0);
        if (arm == "iteration_2") return chain.at(1);
        if (arm == "iteration_3") return chain.at(2);
        throw ValidationError("arms", "unknown arm \"" + arm + "\"");
    }

    int arm_patch_depth(const std::string& arm) const {
        const bool teacher_arm = arm == "baseline_full" || arm == "baseline_clean" || arm == "basic_teacher" ||
                                 arm == "robust_teacher";
        return teacher_arm ? cfg_.teacher.patch_depth : cfg_.student.patch_depth;
    }

    MetricsTable evaluate(const KHeadModel& model, int patch_depth) const {
        InferenceOptions inf = cfg_.teacher.inference;
        inf.patch_depth = patch_depth;
        return evaluate_dataset([&](const ScanRecord& r) { return predict_classes(model, r, inf); }, data_.test,
                                cfg_.surface_tolerance_mm);
    }

    const ExperimentConfig& cfg_;
    const ExperimentData& data_;
    Fold fold_;
    int index_;
    AblationOptions opt_;
    std::uint64_t seed_;
    std::optional<std::filesystem::path> dir_;
    Lazy<std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>>> clean_split_;
    Lazy<KHeadModel> basic_teacher_;
    Lazy<KHeadModel> robust_teacher_;
    Lazy<std::vector<KHeadModel>> basic_student_;
    Lazy<std::vector<KHeadModel>> basic_robust_;
    Lazy<std::vector<KHeadModel>> robust_chain_;
};

std::string na_or(const Aggregate& a, bool mean) {
    if (a.n == 0) return "NA";
    return fmt(mean ? a.mean : a.std);
}

std::string status_of(const ArmResult& a) {
    if (a.ok) return "ok";
    return a.per_fold.empty() ? "failed" : "partial";
}

}  // namespace

ScanRecord with_truth_labels(const ScanRecord& record) {
    ScanRecord r = record;
    r.labels = ground_truth(record).labels;
    r.uncertainty.reset();
    return r;
}

ExperimentData build_experiment_data(const ExperimentConfig& config) {
    config.validate();
    ExperimentData d;
    PhantomConfig base = config.phantom;
    base.seed = config.seed;

    PhantomConfig full_cfg = base;
    full_cfg.availability_probs.fill(1.0);
    for (int i = 0; i < config.n_full; ++i) {
        d.full.push_back(preprocess_record(generate_phantom(full_cfg, static_cast<std::uint64_t>(i)), config.preprocess));
    }

    const std::uint64_t max_attempts = 100ULL * static_cast<std::uint64_t>(config.n_partial) + 1000;
    for (std::uint64_t i = 0; static_cast<int>(d.partial.size()) < config.n_partial; ++i) {
        if (i >= max_attempts) {
            throw ValidationError("phantom.availability_probs", "cannot draw partially annotated scans");
        }
        ScanRecord r = generate_phantom(base, kPartialIndexBase + i);
        if (r.labels.fully_annotated()) continue;
        d.partial.push_back(preprocess_record(std::move(r), config.preprocess));
    }

    for (int i = 0; i < config.n_test; ++i) {
        const ScanRecord r = generate_phantom(base, kTestIndexBase + static_cast<std::uint64_t>(i));
        d.test.push_back(preprocess_record(with_truth_labels(r), config.preprocess));
    }

    d.thresholds = config.thresholds ? *config.thresholds : phantom_cleaning_thresholds(config.phantom);
    d.histograms = compute_extent_histograms(d.full, config.histogram_bin_mm);
    CleanedDataset cleaned = clean_records(d.full, d.thresholds);
    d.full_clean = std::move(cleaned.records);
    d.cleaning = std::move(cleaned.report);
    return d;
}

const ArmResult* AblationResult::find(const std::string& arm) const {
    for (const auto& a : arms)
        if (a.arm == arm) return &a;
    return nullptr;
}

MetricsTable average_folds(const std::vector<MetricsTable>& folds) {
    if (folds.empty()) return {};
    MetricsTable out;
    const std::size_t n = folds.front().rows.size();
    for (const auto& f : folds)
        if (f.rows.size() != n) throw ShapeError("fold metric tables differ in size");
    for (std::size_t i = 0; i < n; ++i) {
        MetricsRow row = folds.front().rows[i];
        double dsum = 0, ssum = 0, hsum = 0;
        int hn = 0;
        for (const auto& f : folds) {
            const MetricsRow& r = f.rows[i];
            if (r.scan_id != row.scan_id || r.organ != row.organ) throw ShapeError("fold metric tables differ in rows");
            dsum += r.dice;
            ssum += r.surface_dice;
            if (r.hd95_mm) {
                hsum += *r.hd95_mm;
                ++hn;
            }
        }
        row.dice = dsum / static_cast<double>(folds.size());
        row.surface_dice = ssum / static_cast<double>(folds.size());
        row.hd95_mm = hn > 0 ? std::optional<double>(hsum / hn) : std::nullopt;
        out.rows.push_back(std::move(row));
    }
    return out;
}

AblationResult run_ablation(const ExperimentConfig& config, const AblationOptions& options) {
    config.validate();
    if (options.parallel_folds < 1) throw ValidationError("parallel_folds", "must be >= 1");
    AblationResult res;
    log_line(options.verbose, "building data");
    res.data = build_experiment_data(config);
    std::vector<std::string> ids;
    for (const auto& r : res.data.full) ids.push_back(r.id);
    res.folds = make_folds(ids, config.folds, config.seed);

    std::vector<FoldOutput> outputs(res.folds.folds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < outputs.size(); i = next++) {
            FoldRunner runner(config, res.data, res.folds.folds[i], static_cast<int>(i), options);
            outputs[i] = runner.run();
        }
    };
    const int n_threads = std::min<int>(options.parallel_folds, static_cast<int>(outputs.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& arm : config.arms) {
        ArmResult a;
        a.arm = arm;
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            auto err = outputs[i].errors.find(arm);
            if (err != outputs[i].errors.end()) {
                if (a.ok) a.error = "fold " + std::to_string(i) + ": " + err->second;
                a.ok = false;
                continue;
            }
            a.per_fold.push_back(outputs[i].tables.at(arm));
        }
        a.table = average_folds(a.per_fold);
        res.arms.push_back(std::move(a));
    }
    return res;
}

std::string table1_csv(const std::vector<ArmResult>& arms) {
    std::ostringstream os;
    os << "arm,status,n_scans,dice_mean,dice_std,sd_mean,sd_std,hd95_mean,hd95_std\n";
    for (const auto& a : arms) {
        const Aggregate d = a.table.per_scan(Metric::Dice);
        const Aggregate s = a.table.per_scan(Metric::SurfaceDice);
        const Aggregate h = a.table.per_scan(Metric::Hd95);
        os << a.arm << "," << status_of(a) << "," << d.n << "," << na_or(d, true) << "," << na_or(d, false) << ","
           << na_or(s, true) << "," << na_or(s, false) << "," << na_or(h, true) << "," << na_or(h, false) << "\n";
    }
    return os.str();
}

std::string appendix_csv(const std::vector<ArmResult>& arms, Metric metric) {
    std::ostringstream os;
    os << "arm,status";
    for (OrganId o : kAllOrgans) os << "," << organ_name(o) << "_mean," << organ_name(o) << "_std";
    os << "\n";
    for (const auto& a : arms) {
        os << a.arm << "," << status_of(a);
        for (OrganId o : kAllOrgans) {
            const Aggregate g = a.table.per_organ(o, metric);
            os << "," << na_or(g, true) << "," << na_or(g, false);
        }
        os << "\n";
    }
    return os.str();
}

std::string wilcoxon_csv(const std::vector<ArmResult>& arms, const std::string& reference) {
    std::ostringstream os;
    os << "reference,arm,metric,n,statistic,w_plus,w_minus,p_value,method\n";
    const ArmResult* ref = nullptr;
    for (const auto& a : arms)
        if (a.arm == reference) ref = &a;
    if (!ref) return os.str();
    for (const auto& a : arms) {
        if (&a == ref) continue;
        for (Metric m : {Metric::Dice, Metric::SurfaceDice, Metric::Hd95}) {
            std::map<std::string, double> other;
            for (const auto& [id, v] : a.table.per_scan_means(m)) other[id] = v;
            std::vector<double> x, y;
            for (const auto& [id, v] : ref->table.per_scan_means(m)) {
                auto it = other.find(id);
                if (it == other.end()) continue;
                x.push_back(it->second);
                y.push_back(v);
            }
            os << reference << "," << a.arm << "," << metric_name(m) << ",";
            try {
                const WilcoxonResult w = wilcoxon_signed_rank(x, y);
                os << w.n << "," << fmt_g(w.statistic) << "," << fmt_g(w.w_plus) << "," << fmt_g(w.w_minus) << ","
                   << fmt_g(w.p_value) << "," << w.method << "\n";
            } catch (const ValidationError&) {
                os << x.size() << ",NA,NA,NA,NA,insufficient\n";
            }
        }
    }
    return os.str();
}

void write_ablation_outputs(const AblationResult& result, const ExperimentConfig& config,
                            const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text_atomic(out_dir / "table1.csv", table1_csv(result.arms));
    write_text_atomic(out_dir / "appendix_dice.csv", appendix_csv(result.arms, Metric::Dice));
    write_text_atomic(out_dir / "appendix_sd.csv", appendix_csv(result.arms, Metric::SurfaceDice));
    write_text_atomic(out_dir / "appendix_hd.csv", appendix_csv(result.arms, Metric::Hd95));
    const std::string reference = config.wilcoxon_reference.empty() ? config.arms.front() : config.wilcoxon_reference;
    write_text_atomic(out_dir / "wilcoxon.csv", wilcoxon_csv(result.arms, reference));
    write_text_atomic(out_dir / "folds.json", result.folds.to_json());
    write_text_atomic(out_dir / "cleaning_report.json", result.data.cleaning.to_json());
    write_text_atomic(out_dir / "histogram_scan_extent.csv", result.data.histograms.scan_extent.to_csv());
    write_text_atomic(out_dir / "histogram_bowel_extent.csv", result.data.histograms.bowel_extent.to_csv());
    Json status = Json::array();
    for (const auto& a : result.arms) {
        const auto dir = out_dir / "arms" / a.arm;
        std::filesystem::create_directories(dir);
        write_text_atomic(dir / "metrics.csv", a.table.to_csv());
        write_text_atomic(dir / "aggregates.json", a.table.aggregates_json());
        status.push_back({{"arm", a.arm}, {"status", status_of(a)}, {"error", a.error},
                          {"folds_ok", a.per_fold.size()}});
    }
    write_text_atomic(out_dir / "arms.json", status.dump(2) + "\n");
}

}  // namespace ugss
