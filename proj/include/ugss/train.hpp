#ifndef UGSS_TRAIN_HPP
#define UGSS_TRAIN_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ugss/augment.hpp"
#include "ugss/core_data.hpp"
#include "ugss/impute.hpp"
#include "ugss/kh_model.hpp"
#include "ugss/rng.hpp"

namespace ugss {

enum class TrainRole { Teacher, Student };

std::string to_string(TrainRole r);
TrainRole train_role_from_string(const std::string& s);  // "TEACHER" | "STUDENT"

struct TrainConfig {
    TrainRole role = TrainRole::Teacher;
    ModelConfig model;
    int epochs = 30;
    nn::AdamOptions adam;          // lr 1e-3, weight decay 1e-4
    double lr_gamma = 0.1;
    int batch_size = 1;
    int patch_depth = 32;
    int patch_inplane = 0;         // 0: full in-plane extent
    AugmentConfig augment;
    std::uint64_t seed = 0;
    int validate_every = 1;        // epochs between validations; 0: after the last epoch only
    InferenceOptions inference;    // validation inference; patch depth follows patch_depth

    void validate() const;

    static TrainConfig teacher_defaults();
    static TrainConfig student_defaults();
};

// base_lr * gamma^floor(step / floor(total / 3)).
double lr_at(long step, long total_steps, double base_lr = 1e-3, double gamma = 0.1);

struct Patch {
    FloatGrid image;
    ClassMap target;
    FloatGrid u;  // empty when the record has no uncertainty
    int z0 = 0;   // offset of the patch in record coordinates (negative when padded)
    int y0 = 0;
    int x0 = 0;
};

// Uniform random offsets along z, y, x (drawn in that order). Axes shorter
// than the patch are zero-padded symmetrically with background target and u = 0.
Patch sample_patch(const ScanRecord& record, Shape3 patch_shape, Rng& rng);
Patch sample_patch(const ScanRecord& record, int patch_depth, Rng& rng);

struct CurveRow {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    int head = 0;
    std::optional<std::array<double, kNumOrgans>> val_dice;  // per organ slot, after validation
};

struct TrainResult {
    KHeadModel best;
    long best_step = 0;
    std::optional<double> best_val_dice;  // mean over organs and validation records
    KHeadModel last;
    long steps = 0;
    std::vector<CurveRow> curve;

    std::string curves_csv() const;  // step,lr,loss,head,val_bowel_bag,...
};

struct StepInfo {
    long step = 0;  // 1-based count of completed optimizer steps
    int head = 0;
    double loss = 0.0;
    double lr = 0.0;
};

using StepObserver = std::function<void(const StepInfo&, const KHeadModel&)>;

// Shared loop. Each epoch visits every training record once in a seeded
// order; per (epoch, record) streams drive augmentation and patch sampling,
// and a separate stream picks the head. Only the picked head and the trunk
// are forwarded, back-propagated and updated.
TrainResult train_model(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                        const TrainConfig& config, const StepObserver& observer = {});

// Plain cross-entropy; every record must be fully annotated.
TrainResult train_teacher(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                          const TrainConfig& config, const StepObserver& observer = {});

// Uncertainty-guided cross-entropy; every record must be fully labelled and
// carry an uncertainty map.
TrainResult train_student(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                          const TrainConfig& config, const StepObserver& observer = {});

// Mean Dice per organ over `records`, predicted with full-volume inference.
std::array<double, kNumOrgans> validation_dice(const KHeadModel& model, const std::vector<ScanRecord>& records,
                                               const InferenceOptions& opt);

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

struct FoldPlan {
    int k = 5;
    std::uint64_t seed = 0;
    std::vector<Fold> folds;

    std::string to_json() const;
};

// Seeded shuffle then contiguous partition; fold i validates on part i.
FoldPlan make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// Splits records by the fold's id lists, preserving record order.
std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_fold(const std::vector<ScanRecord>& records,
                                                                       const Fold& fold);

struct Iteration {
    int index = 1;
    std::optional<TrainResult> teacher;  // iteration 1 only
    TrainResult student;
    ImputeReport imputation;
    std::optional<std::filesystem::path> snapshot;  // imputed manifest, when a snapshot dir is given
    std::string snapshot_digest;                    // sha256 over the imputed labels and u
};

struct SelfTrainingInput {
    std::vector<ScanRecord> train_full;  // fully annotated, cleaned
    std::vector<ScanRecord> val_full;
    std::vector<ScanRecord> partial;     // partially annotated
};

// Iteration 1: teacher -> impute -> student. Iteration j > 1: the previous
// student re-imputes the partial set and a fresh student is trained.
// A supplied teacher skips teacher training in iteration 1.
std::vector<Iteration> iterate_teacher_student(int n_iters, const TrainConfig& teacher, const TrainConfig& student,
                                               const SelfTrainingInput& data,
                                               const std::optional<TrainResult>& trained_teacher = std::nullopt,
                                               const std::optional<std::filesystem::path>& snapshot_dir = std::nullopt);

}  // namespace ugss

#endif  // UGSS_TRAIN_HPP
