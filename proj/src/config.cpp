#include "ugss/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ugss/errors.hpp"

namespace ugss {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed access to one JSON object; finish() rejects keys nobody asked for.
class Section {
public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_.empty() ? "config" : path_, "must be a JSON object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string field(const std::string& key) const { return join(path_, key); }

    void get(const std::string& key, int& out) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_number_integer()) throw ValidationError(field(key), "must be an integer");
        const auto n = v.get<long long>();
        if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
            throw ValidationError(field(key), "out of range");
        }
        out = static_cast<int>(n);
    }

    void get(const std::string& key, std::uint64_t& out) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            throw ValidationError(field(key), "must be a non-negative integer");
        }
        out = v.get<std::uint64_t>();
    }

    void get(const std::string& key, double& out) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_number()) throw ValidationError(field(key), "must be a number");
        out = v.get<double>();
    }

    void get(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_string()) throw ValidationError(field(key), "must be a string");
        out = v.get<std::string>();
    }

    // Three numbers in z, y, x order.
    void get3(const std::string& key, double& z, double& y, double& x) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_array() || v.size() != 3) throw ValidationError(field(key), "must be an array [z, y, x]");
        for (const auto& e : v)
            if (!e.is_number()) throw ValidationError(field(key), "must contain numbers");
        z = v[0].get<double>();
        y = v[1].get<double>();
        x = v[2].get<double>();
    }

    void get3(const std::string& key, int& z, int& y, int& x) {
        if (!has(key)) return;
        const Json& v = j_.at(key);
        if (!v.is_array() || v.size() != 3) throw ValidationError(field(key), "must be an array [z, y, x]");
        for (const auto& e : v)
            if (!e.is_number_integer()) throw ValidationError(field(key), "must contain integers");
        z = v[0].get<int>();
        y = v[1].get<int>();
        x = v[2].get<int>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ValidationError(field(it.key()), "unknown key");
        }
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// Validators name fields relative to their own section ("train.epochs");
// re-root them at the config path actually parsed ("teacher.epochs").
[[noreturn]] void rethrow_at(const std::string& path, const ValidationError& e) {
    const std::string& f = e.field();
    const auto dot = f.find('.');
    const std::string rest = dot == std::string::npos ? std::string() : f.substr(dot + 1);
    std::string msg = e.what();
    if (msg.rfind(f + ": ", 0) == 0) msg = msg.substr(f.size() + 2);
    throw ValidationError(rest.empty() ? (path.empty() ? f : path) : join(path, rest), msg);
}

}  // namespace

Json load_json_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ValidationError("config", "cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw ValidationError("config", std::string("invalid JSON: ") + e.what());
    }
}

PhantomConfig parse_phantom(const Json& j, const std::string& path) {
    PhantomConfig c;
    Section s(j, path);
    s.get3("shape", c.shape.z, c.shape.y, c.shape.x);
    s.get3("spacing", c.spacing.z, c.spacing.y, c.spacing.x);
    s.get("seed", c.seed);
    if (s.has("availability_probs")) {
        const Json& v = s.raw("availability_probs");
        if (!v.is_object()) throw ValidationError(s.field("availability_probs"), "must map organ names to numbers");
        Section a(v, s.field("availability_probs"));
        for (OrganId o : kAllOrgans) a.get(organ_name(o), c.availability_probs[slot(o)]);
        a.finish();
    }
    s.get("chest_prob", c.chest_prob);
    s.get("cranial_extent_jitter", c.cranial_extent_jitter);
    s.get("bowel_overannotation_prob", c.bowel_overannotation_prob);
    s.get("overannotation_max_slices", c.overannotation_max_slices);
    s.get("noise_sigma", c.noise_sigma);
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

ModelConfig parse_model(const Json& j, const std::string& path) {
    ModelConfig c;
    Section s(j, path);
    s.get("heads", c.heads);
    s.get("levels", c.levels);
    s.get("base_channels", c.base_channels);
    s.get("head_depth", c.head_depth);
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

namespace {

void read_augment(Section& s, AugmentConfig& c) {
    if (s.has("tier")) {
        const Json& v = s.raw("tier");
        if (!v.is_string()) throw ValidationError(s.field("tier"), "must be \"BASIC\" or \"ADDITIONAL\"");
        try {
            c.tier = augment_tier_from_string(v.get<std::string>());
        } catch (const Error&) {
            throw ValidationError(s.field("tier"), "must be \"BASIC\" or \"ADDITIONAL\"");
        }
    }
    s.get("p_brightness_contrast", c.p_brightness_contrast);
    s.get("p_rotate", c.p_rotate);
    s.get("p_flip", c.p_flip);
    s.get("p_organ_intensity", c.p_organ_intensity);
    s.get("p_elastic_global", c.p_elastic_global);
    s.get("p_elastic_organ", c.p_elastic_organ);
    s.get("brightness_range", c.brightness_range);
    s.get("contrast_range", c.contrast_range);
    s.get("max_rotation_deg", c.max_rotation_deg);
    s.get("elastic_control_spacing_mm", c.elastic.control_spacing_mm);
    s.get("elastic_max_displacement_mm", c.elastic.max_displacement_mm);
    s.get("elastic_envelope_sigma_mm", c.elastic.envelope_sigma_mm);
    s.get("organ_value_min", c.organ_value_min);
    s.get("organ_value_max", c.organ_value_max);
}

AugmentConfig parse_augment_over(const Json& j, AugmentConfig c, const std::string& path) {
    Section s(j, path);
    read_augment(s, c);
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

InferenceOptions parse_inference_over(const Json& j, InferenceOptions c, const std::string& path) {
    Section s(j, path);
    s.get("patch_depth", c.patch_depth);
    s.get("overlap", c.overlap);
    s.finish();
    if (c.patch_depth < 1) throw ValidationError(s.field("patch_depth"), "must be >= 1");
    if (!(c.overlap >= 0.0 && c.overlap < 1.0)) throw ValidationError(s.field("overlap"), "must lie in [0, 1)");
    return c;
}

ModelConfig parse_model_over(const Json& j, ModelConfig c, const std::string& path) {
    Section s(j, path);
    s.get("heads", c.heads);
    s.get("levels", c.levels);
    s.get("base_channels", c.base_channels);
    s.get("head_depth", c.head_depth);
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

}  // namespace

AugmentConfig parse_augment(const Json& j, const std::string& path) { return parse_augment_over(j, {}, path); }

InferenceOptions parse_inference(const Json& j, const std::string& path) {
    return parse_inference_over(j, {}, path);
}

TrainConfig parse_train(const Json& j, const TrainConfig& base, const std::string& path) {
    TrainConfig c = base;
    Section s(j, path);
    if (s.has("role")) {
        const Json& v = s.raw("role");
        if (!v.is_string()) throw ValidationError(s.field("role"), "must be \"TEACHER\" or \"STUDENT\"");
        try {
            c.role = train_role_from_string(v.get<std::string>());
        } catch (const Error&) {
            throw ValidationError(s.field("role"), "must be \"TEACHER\" or \"STUDENT\"");
        }
    }
    if (s.has("model")) c.model = parse_model_over(s.raw("model"), c.model, s.field("model"));
    s.get("epochs", c.epochs);
    s.get("lr", c.adam.lr);
    s.get("weight_decay", c.adam.weight_decay);
    s.get("lr_gamma", c.lr_gamma);
    s.get("batch_size", c.batch_size);
    s.get("patch_depth", c.patch_depth);
    s.get("patch_inplane", c.patch_inplane);
    if (s.has("augment")) c.augment = parse_augment_over(s.raw("augment"), c.augment, s.field("augment"));
    s.get("seed", c.seed);
    s.get("validate_every", c.validate_every);
    if (s.has("inference")) c.inference = parse_inference_over(s.raw("inference"), c.inference, s.field("inference"));
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

CleaningThresholds parse_thresholds(const Json& j, const std::string& path) {
    CleaningThresholds c;
    Section s(j, path);
    auto read = [&](const char* key, double& out) {
        if (!s.has(key)) return;
        const Json& v = s.raw(key);
        if (v.is_null()) return;
        if (!v.is_number()) throw ValidationError(s.field(key), "must be a number or null");
        out = v.get<double>();
    };
    read("crop_above_mm", c.crop_above_mm);
    read("delete_bowel_above_mm", c.delete_bowel_above_mm);
    read("discard_below_mm", c.discard_below_mm);
    s.finish();
    try {
        c.validate();
    } catch (const ValidationError& e) {
        rethrow_at(path, e);
    }
    return c;
}

PreprocessOptions parse_preprocess(const Json& j, const std::string& path) {
    PreprocessOptions c;
    Section s(j, path);
    s.get3("target_spacing", c.target_spacing.z, c.target_spacing.y, c.target_spacing.x);
    s.get("window_level", c.window_level);
    s.get("window_width", c.window_width);
    s.finish();
    if (!c.target_spacing.valid()) throw ValidationError(s.field("target_spacing"), "must be positive and finite");
    if (!(c.window_width > 0.0) || !std::isfinite(c.window_width)) {
        throw ValidationError(s.field("window_width"), "must be positive");
    }
    if (!std::isfinite(c.window_level)) throw ValidationError(s.field("window_level"), "must be finite");
    return c;
}

Json to_json(const PhantomConfig& c) {
    Json j;
    j["shape"] = {c.shape.z, c.shape.y, c.shape.x};
    j["spacing"] = {c.spacing.z, c.spacing.y, c.spacing.x};
    j["seed"] = c.seed;
    for (OrganId o : kAllOrgans) j["availability_probs"][organ_name(o)] = c.availability_probs[slot(o)];
    j["chest_prob"] = c.chest_prob;
    j["cranial_extent_jitter"] = c.cranial_extent_jitter;
    j["bowel_overannotation_prob"] = c.bowel_overannotation_prob;
    j["overannotation_max_slices"] = c.overannotation_max_slices;
    j["noise_sigma"] = c.noise_sigma;
    return j;
}

Json to_json(const ModelConfig& c) {
    return {{"heads", c.heads}, {"levels", c.levels}, {"base_channels", c.base_channels}, {"head_depth", c.head_depth}};
}

Json to_json(const AugmentConfig& c) {
    return {{"tier", to_string(c.tier)},
            {"p_brightness_contrast", c.p_brightness_contrast},
            {"p_rotate", c.p_rotate},
            {"p_flip", c.p_flip},
            {"p_organ_intensity", c.p_organ_intensity},
            {"p_elastic_global", c.p_elastic_global},
            {"p_elastic_organ", c.p_elastic_organ},
            {"brightness_range", c.brightness_range},
            {"contrast_range", c.contrast_range},
            {"max_rotation_deg", c.max_rotation_deg},
            {"elastic_control_spacing_mm", c.elastic.control_spacing_mm},
            {"elastic_max_displacement_mm", c.elastic.max_displacement_mm},
            {"elastic_envelope_sigma_mm", c.elastic.envelope_sigma_mm},
            {"organ_value_min", c.organ_value_min},
            {"organ_value_max", c.organ_value_max}};
}

Json to_json(const InferenceOptions& c) { return {{"patch_depth", c.patch_depth}, {"overlap", c.overlap}}; }

Json to_json(const TrainConfig& c) {
    return {{"role", to_string(c.role)},
            {"model", to_json(c.model)},
            {"epochs", c.epochs},
            {"lr", c.adam.lr},
            {"weight_decay", c.adam.weight_decay},
            {"lr_gamma", c.lr_gamma},
            {"batch_size", c.batch_size},
            {"patch_depth", c.patch_depth},
            {"patch_inplane", c.patch_inplane},
            {"augment", to_json(c.augment)},
            {"seed", c.seed},
            {"validate_every", c.validate_every},
            {"inference", to_json(c.inference)}};
}

Json to_json(const CleaningThresholds& c) {
    return {{"crop_above_mm", finite_or_null(c.crop_above_mm)},
            {"delete_bowel_above_mm", finite_or_null(c.delete_bowel_above_mm)},
            {"discard_below_mm", finite_or_null(c.discard_below_mm)}};
}

void ExperimentConfig::validate() const {
    phantom.validate();
    if (n_full < 2) throw ValidationError("data.n_full", "must be >= 2");
    if (n_partial < 0) throw ValidationError("data.n_partial", "must be >= 0");
    if (n_test < 1) throw ValidationError("data.n_test", "must be >= 1");
    if (thresholds) thresholds->validate();
    if (!(histogram_bin_mm > 0.0)) throw ValidationError("histogram_bin_mm", "must be positive");
    teacher.validate();
    student.validate();
    if (folds < 2) throw ValidationError("folds", "must be >= 2");
    if (folds > n_full) throw ValidationError("folds", "must not exceed data.n_full");
    if (arms.empty()) throw ValidationError("arms", "must not be empty");
    std::set<std::string> seen;
    for (const auto& a : arms) {
        if (std::find(kAllArms.begin(), kAllArms.end(), a) == kAllArms.end()) {
            throw ValidationError("arms", "unknown arm \"" + a + "\"");
        }
        if (!seen.insert(a).second) throw ValidationError("arms", "duplicate arm \"" + a + "\"");
    }
    if (!(surface_tolerance_mm >= 0.0)) throw ValidationError("surface_tolerance_mm", "must be >= 0");
    if (!wilcoxon_reference.empty() && !seen.count(wilcoxon_reference)) {
        throw ValidationError("wilcoxon_reference", "must name one of the configured arms");
    }
}

ExperimentConfig parse_experiment(const Json& j) {
    ExperimentConfig c;
    Section s(j, "");
    s.get("seed", c.seed);
    if (s.has("phantom")) c.phantom = parse_phantom(s.raw("phantom"), "phantom");
    if (s.has("data")) {
        Section d(s.raw("data"), "data");
        d.get("n_full", c.n_full);
        d.get("n_partial", c.n_partial);
        d.get("n_test", c.n_test);
        d.finish();
    }
    if (s.has("thresholds")) {
        const Json& v = s.raw("thresholds");
        if (v.is_string()) {
            if (v.get<std::string>() != "auto") throw ValidationError("thresholds", "must be an object or \"auto\"");
        } else {
            c.thresholds = parse_thresholds(v, "thresholds");
        }
    }
    s.get("histogram_bin_mm", c.histogram_bin_mm);
    if (s.has("preprocess")) c.preprocess = parse_preprocess(s.raw("preprocess"), "preprocess");

    // Shared sections feed both roles before role-specific overrides.
    ModelConfig model;
    AugmentConfig augment;
    InferenceOptions inference;
    if (s.has("model")) model = parse_model(s.raw("model"), "model");
    if (s.has("augment")) augment = parse_augment(s.raw("augment"), "augment");
    if (s.has("inference")) inference = parse_inference(s.raw("inference"), "inference");
    c.teacher.model = c.student.model = model;
    c.teacher.augment = c.student.augment = augment;
    c.teacher.inference = c.student.inference = inference;
    if (s.has("teacher")) c.teacher = parse_train(s.raw("teacher"), c.teacher, "teacher");
    if (s.has("student")) c.student = parse_train(s.raw("student"), c.student, "student");
    c.teacher.role = TrainRole::Teacher;
    c.student.role = TrainRole::Student;

    s.get("folds", c.folds);
    if (s.has("arms")) {
        const Json& v = s.raw("arms");
        if (!v.is_array()) throw ValidationError("arms", "must be an array of arm names");
        c.arms.clear();
        for (const auto& e : v) {
            if (!e.is_string()) throw ValidationError("arms", "must be an array of arm names");
            c.arms.push_back(e.get<std::string>());
        }
    }
    s.get("surface_tolerance_mm", c.surface_tolerance_mm);
    s.get("wilcoxon_reference", c.wilcoxon_reference);
    s.finish();
    c.validate();
    return c;
}

Json to_json(const ExperimentConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["phantom"] = to_json(c.phantom);
    j["data"] = {{"n_full", c.n_full}, {"n_partial", c.n_partial}, {"n_test", c.n_test}};
    j["thresholds"] = c.thresholds ? to_json(*c.thresholds) : Json("auto");
    j["histogram_bin_mm"] = c.histogram_bin_mm;
    j["preprocess"] = {{"target_spacing", {c.preprocess.target_spacing.z, c.preprocess.target_spacing.y,
                                           c.preprocess.target_spacing.x}},
                       {"window_level", c.preprocess.window_level},
                       {"window_width", c.preprocess.window_width}};
    j["teacher"] = to_json(c.teacher);
    j["student"] = to_json(c.student);
    j["folds"] = c.folds;
    j["arms"] = c.arms;
    j["surface_tolerance_mm"] = c.surface_tolerance_mm;
    j["wilcoxon_reference"] = c.wilcoxon_reference;
    return j;
}

}  // namespace ugss
