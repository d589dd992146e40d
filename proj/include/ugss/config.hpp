#ifndef UGSS_CONFIG_HPP
#define UGSS_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ugss/augment.hpp"
#include "ugss/autoclean.hpp"
#include "ugss/impute.hpp"
#include "ugss/kh_model.hpp"
#include "ugss/phantom.hpp"
#include "ugss/preprocess.hpp"
#include "ugss/train.hpp"

// JSON config sections. Every reader rejects unknown keys and wrong types
// with a ValidationError naming the dotted field path.
namespace ugss {

using Json = nlohmann::json;

Json load_json_file(const std::filesystem::path& file);

PhantomConfig parse_phantom(const Json& j, const std::string& path = "phantom");
ModelConfig parse_model(const Json& j, const std::string& path = "model");
AugmentConfig parse_augment(const Json& j, const std::string& path = "augment");
InferenceOptions parse_inference(const Json& j, const std::string& path = "inference");
// `base` supplies defaults for keys the section leaves out.
TrainConfig parse_train(const Json& j, const TrainConfig& base, const std::string& path);
// null or missing values mean "disabled" for that threshold.
CleaningThresholds parse_thresholds(const Json& j, const std::string& path = "thresholds");
PreprocessOptions parse_preprocess(const Json& j, const std::string& path = "preprocess");

Json to_json(const PhantomConfig& c);
Json to_json(const ModelConfig& c);
Json to_json(const AugmentConfig& c);
Json to_json(const InferenceOptions& c);
Json to_json(const TrainConfig& c);
Json to_json(const CleaningThresholds& c);

inline const std::vector<std::string> kAllArms{"baseline_full",
                                               "baseline_clean",
                                               "basic_teacher",
                                               "basic_student",
                                               "robust_teacher",
                                               "basic_teacher+robust_student",
                                               "robust_teacher+robust_student",
                                               "iteration_2",
                                               "iteration_3"};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    PhantomConfig phantom;
    int n_full = 20;      // fully annotated training scans
    int n_partial = 100;  // partially annotated scans
    int n_test = 10;      // held-out scans scored against phantom ground truth
    std::optional<CleaningThresholds> thresholds;  // unset: derived from the phantom geometry
    double histogram_bin_mm = 5.0;
    PreprocessOptions preprocess;
    TrainConfig teacher = TrainConfig::teacher_defaults();
    TrainConfig student = TrainConfig::student_defaults();
    int folds = 5;
    std::vector<std::string> arms = kAllArms;
    double surface_tolerance_mm = 2.5;
    std::string wilcoxon_reference;  // empty: first arm

    void validate() const;
};

// Top-level keys: seed, phantom, data{n_full,n_partial,n_test}, thresholds,
// histogram_bin_mm, preprocess, model, augment, inference, teacher, student,
// folds, arms, surface_tolerance_mm, wilcoxon_reference. model, augment and
// inference are shared defaults that teacher/student sections may override.
ExperimentConfig parse_experiment(const Json& j);
Json to_json(const ExperimentConfig& c);

}  // namespace ugss

#endif  // UGSS_CONFIG_HPP
