#include "ugss/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ugss/container.hpp"
#include "ugss/losses.hpp"
#include "ugss/metrics.hpp"

namespace ugss {

namespace {

std::vector<nn::Param*> step_params(KHeadModel& model, int head) {
    auto p = model.trunk_params();
    auto h = model.head_params(head);
    p.insert(p.end(), h.begin(), h.end());
    return p;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

Shape3 train_patch_shape(const TrainConfig& cfg, const ScanRecord& r) {
    const int div = cfg.model.divisor();
    auto round_up = [div](int n) { return (n + div - 1) / div * div; };
    if (cfg.patch_inplane > 0) return {cfg.patch_depth, cfg.patch_inplane, cfg.patch_inplane};
    return {cfg.patch_depth, round_up(r.shape().y), round_up(r.shape().x)};
}

void require_fully_annotated(const std::vector<ScanRecord>& records, const char* set) {
    for (const auto& r : records) {
        if (!r.labels.fully_annotated()) {
            throw ValidationError(std::string(set), "record " + r.id + " is not fully annotated");
        }
    }
}

std::string labels_digest(const std::vector<ScanRecord>& records) {
    std::vector<unsigned char> bytes;
    for (const auto& r : records) {
        bytes.insert(bytes.end(), r.id.begin(), r.id.end());
        for (const auto& m : r.labels.masks) bytes.insert(bytes.end(), m.values().begin(), m.values().end());
        if (r.uncertainty) {
            const auto* p = reinterpret_cast<const unsigned char*>(r.uncertainty->values().data());
            bytes.insert(bytes.end(), p, p + r.uncertainty->size() * sizeof(float));
        }
    }
    return sha256_hex(bytes);
}

}  // namespace

std::string to_string(TrainRole r) { return r == TrainRole::Teacher ? "TEACHER" : "STUDENT"; }

TrainRole train_role_from_string(const std::string& s) {
    if (s == "TEACHER") return TrainRole::Teacher;
    if (s == "STUDENT") return TrainRole::Student;
    throw ValidationError("train.role", "expected TEACHER or STUDENT, got '" + s + "'");
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs < 1) throw ValidationError("train.epochs", "must be >= 1");
    if (batch_size != 1) throw ValidationError("train.batch_size", "only batch size 1 is supported");
    if (!(adam.lr > 0.0)) throw ValidationError("train.lr", "must be > 0");
    if (!(adam.weight_decay >= 0.0)) throw ValidationError("train.weight_decay", "must be >= 0");
    if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ValidationError("train.lr_gamma", "must lie in (0, 1]");
    if (patch_depth < 1 || patch_depth % model.divisor() != 0) {
        throw ValidationError("train.patch_depth", "must be a positive multiple of " + std::to_string(model.divisor()));
    }
    if (patch_inplane < 0 || patch_inplane % model.divisor() != 0) {
        throw ValidationError("train.patch_inplane", "must be 0 or a positive multiple of " + std::to_string(model.divisor()));
    }
    if (validate_every < 0) throw ValidationError("train.validate_every", "must be >= 0");
    augment.validate();
    inference.validate();
}

TrainConfig TrainConfig::teacher_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::student_defaults() {
    TrainConfig c;
    c.role = TrainRole::Student;
    c.epochs = 15;
    return c;
}

double lr_at(long step, long total_steps, double base_lr, double gamma) {
    if (total_steps < 1 || step < 0 || step >= total_steps) {
        throw ValidationError("step", "must lie in [0, total_steps)");
    }
    const long size = total_steps / 3;
    if (size == 0) return base_lr;
    return base_lr * std::pow(gamma, static_cast<double>(step / size));
}

Patch sample_patch(const ScanRecord& record, Shape3 ps, Rng& rng) {
    if (!ps.valid()) throw ValidationError("patch_shape", "patch extents must be >= 1");
    const Shape3 s = record.shape();
    const int ext[3] = {s.z, s.y, s.x}, size[3] = {ps.z, ps.y, ps.x};
    int off[3];
    for (int a = 0; a < 3; ++a) off[a] = ext[a] >= size[a] ? uniform_int(rng, 0, ext[a] - size[a]) : -((size[a] - ext[a]) / 2);

    Patch p;
    p.z0 = off[0];
    p.y0 = off[1];
    p.x0 = off[2];
    p.image = FloatGrid(ps, 0.0f);
    p.target = ClassMap(ps, 0);
    const ClassMap classes = collapse_labels(record.labels);
    if (record.uncertainty) p.u = FloatGrid(ps, 0.0f);
    for (int z = 0; z < ps.z; ++z) {
        const int sz = z + off[0];
        if (sz < 0 || sz >= s.z) continue;
        for (int y = 0; y < ps.y; ++y) {
            const int sy = y + off[1];
            if (sy < 0 || sy >= s.y) continue;
            for (int x = 0; x < ps.x; ++x) {
                const int sx = x + off[2];
                if (sx < 0 || sx >= s.x) continue;
                p.image(z, y, x) = record.image.data(sz, sy, sx);
                p.target(z, y, x) = classes(sz, sy, sx);
                if (record.uncertainty) p.u(z, y, x) = (*record.uncertainty)(sz, sy, sx);
            }
        }
    }
    return p;
}

Patch sample_patch(const ScanRecord& record, int patch_depth, Rng& rng) {
    return sample_patch(record, Shape3{patch_depth, record.shape().y, record.shape().x}, rng);
}

std::string TrainResult::curves_csv() const {
    std::ostringstream os;
    os << "step,lr,loss,head";
    for (OrganId o : kAllOrgans) os << ",val_" << organ_name(o);
    os << "\n";
    for (const auto& r : curve) {
        os << r.step << "," << fmt(r.lr) << "," << fmt(r.loss) << "," << r.head;
        for (std::size_t k = 0; k < kNumOrgans; ++k) os << "," << (r.val_dice ? fmt((*r.val_dice)[k]) : "");
        os << "\n";
    }
    return os.str();
}

std::array<double, kNumOrgans> validation_dice(const KHeadModel& model, const std::vector<ScanRecord>& records,
                                               const InferenceOptions& opt) {
    std::array<double, kNumOrgans> acc{};
    if (records.empty()) return acc;
    for (const auto& r : records) {
        const ClassMap pred = predict_classes(model, r, opt);
        for (OrganId o : kAllOrgans) {
            Mask pm(pred.shape(), 0);
            const auto c = static_cast<std::uint8_t>(class_index(o));
            for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = pred[i] == c;
            acc[slot(o)] += dice(pm, r.labels.mask(o));
        }
    }
    for (auto& v : acc) v /= static_cast<double>(records.size());
    return acc;
}

TrainResult train_model(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                        const TrainConfig& cfg, const StepObserver& observer) {
    cfg.validate();
    if (train.empty()) throw ValidationError("train", "training set is empty");
    require_fully_annotated(train, "train");
    require_fully_annotated(val, "validation");
    const bool student = cfg.role == TrainRole::Student;
    if (student) {
        for (const auto& r : train)
            if (!r.uncertainty) throw ValidationError("uncertainty", "student record " + r.id + " has no uncertainty map");
    }

    TrainResult res;
    KHeadModel model = KHeadModel::build(cfg.model, cfg.seed);
    const int K = cfg.model.heads;
    const int C = cfg.model.num_classes;
    const long total = static_cast<long>(cfg.epochs) * static_cast<long>(train.size());
    InferenceOptions inf = cfg.inference;
    inf.patch_depth = cfg.patch_depth;
    Rng head_rng = make_rng(cfg.seed, {stream::kHeadPick});

    std::optional<double> best;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng = make_rng(cfg.seed, {stream::kOrder, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), order_rng);

        for (std::size_t idx : order) {
            const ScanRecord& rec = train[idx];
            Rng rng = make_rng(cfg.seed, {stream::kSample, static_cast<std::uint64_t>(epoch), idx});
            const ScanRecord aug = sample_augmentation(rec, cfg.augment, rng);
            const Patch patch = sample_patch(aug, train_patch_shape(cfg, aug), rng);
            const int head = uniform_int(head_rng, 0, K - 1);

            KHeadModel::TrainCache cache;
            const nn::Tensor logits = model.forward_head(volume_to_tensor(patch.image), head, cache);
            const nn::Tensor probs = nn::softmax_channels(logits);
            nn::Tensor grad(logits.c, logits.d, logits.h, logits.w);
            std::span<const float> u;
            if (student) u = patch.u.span();
            const double loss = uce_with_grad<float, float>(probs.v, C, patch.target.span(), u, grad.v);

            auto params = step_params(model, head);
            for (auto* p : params) p->zero_grad();
            model.backward_head(cache, grad);
            nn::AdamOptions adam = cfg.adam;
            adam.lr = lr_at(step, total, cfg.adam.lr, cfg.lr_gamma);
            for (auto* p : params) nn::adam_step(*p, adam);
            ++step;

            res.curve.push_back({step, adam.lr, loss, head, std::nullopt});
            if (observer) observer(StepInfo{step, head, loss, adam.lr}, model);
        }

        const bool last_epoch = epoch + 1 == cfg.epochs;
        const bool due = cfg.validate_every > 0 ? ((epoch + 1) % cfg.validate_every == 0 || last_epoch) : last_epoch;
        if (!val.empty() && due) {
            const auto per_organ = validation_dice(model, val, inf);
            res.curve.back().val_dice = per_organ;
            const double mean = std::accumulate(per_organ.begin(), per_organ.end(), 0.0) / kNumOrgans;
            if (!best || mean > *best) {
                best = mean;
                res.best = model;
                res.best_step = step;
            }
        }
    }
    res.steps = step;
    res.last = model;
    res.best_val_dice = best;
    if (!best) {
        res.best = model;
        res.best_step = step;
    }
    return res;
}

TrainResult train_teacher(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                          const TrainConfig& config, const StepObserver& observer) {
    TrainConfig c = config;
    c.role = TrainRole::Teacher;
    return train_model(train, val, c, observer);
}

TrainResult train_student(const std::vector<ScanRecord>& train, const std::vector<ScanRecord>& val,
                          const TrainConfig& config, const StepObserver& observer) {
    TrainConfig c = config;
    c.role = TrainRole::Student;
    return train_model(train, val, c, observer);
}

std::string FoldPlan::to_json() const {
    nlohmann::json j;
    j["k"] = k;
    j["seed"] = seed;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) j["folds"].push_back({{"train", f.train_ids}, {"validation", f.val_ids}});
    return j.dump(2) + "\n";
}

FoldPlan make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("folds.k", "must be >= 2");
    if (ids.size() < static_cast<std::size_t>(k)) {
        throw ValidationError("folds.k", "need at least " + std::to_string(k) + " records, got " + std::to_string(ids.size()));
    }
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw ValidationError("folds.ids", "duplicate record ids");
    std::vector<std::string> shuffled = ids;
    Rng rng = make_rng(seed, {stream::kFolds});
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    const std::size_t n = shuffled.size(), base = n / k, extra = n % k;
    std::vector<std::size_t> bounds{0};
    for (int i = 0; i < k; ++i) bounds.push_back(bounds.back() + base + (static_cast<std::size_t>(i) < extra ? 1 : 0));
    for (int i = 0; i < k; ++i) {
        Fold f;
        for (std::size_t j = 0; j < n; ++j) {
            if (j >= bounds[i] && j < bounds[i + 1]) f.val_ids.push_back(shuffled[j]);
            else f.train_ids.push_back(shuffled[j]);
        }
        plan.folds.push_back(std::move(f));
    }
    return plan;
}

std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_fold(const std::vector<ScanRecord>& records,
                                                                       const Fold& fold) {
    const std::set<std::string> tr(fold.train_ids.begin(), fold.train_ids.end());
    const std::set<std::string> va(fold.val_ids.begin(), fold.val_ids.end());
    std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> out;
    for (const auto& r : records) {
        if (tr.count(r.id)) out.first.push_back(r);
        else if (va.count(r.id)) out.second.push_back(r);
    }
    if (out.first.size() != tr.size() || out.second.size() != va.size()) {
        throw ValidationError("folds", "fold references ids missing from the record set");
    }
    return out;
}

std::vector<Iteration> iterate_teacher_student(int n_iters, const TrainConfig& teacher, const TrainConfig& student,
                                               const SelfTrainingInput& data,
                                               const std::optional<TrainResult>& trained_teacher,
                                               const std::optional<std::filesystem::path>& snapshot_dir) {
    if (n_iters < 1) throw ValidationError("iterations", "must be >= 1");
    std::vector<Iteration> out;
    out.reserve(static_cast<std::size_t>(n_iters));
    const KHeadModel* imputer = nullptr;
    for (int it = 1; it <= n_iters; ++it) {
        Iteration iter;
        iter.index = it;
        if (it == 1) {
            iter.teacher = trained_teacher ? *trained_teacher : train_teacher(data.train_full, data.val_full, teacher);
            imputer = &iter.teacher->best;
        }
        InferenceOptions inf = student.inference;
        inf.patch_depth = it == 1 ? teacher.patch_depth : student.patch_depth;
        std::vector<ScanRecord> pool = data.train_full;
        pool.insert(pool.end(), data.partial.begin(), data.partial.end());
        std::vector<ScanRecord> imputed = impute_records(*imputer, pool, inf, &iter.imputation);
        iter.snapshot_digest = labels_digest(imputed);
        if (snapshot_dir) {
            const auto dir = *snapshot_dir / ("iter" + std::to_string(it));
            write_dataset(imputed, dir);
            write_text_atomic(dir / "impute_report.json", iter.imputation.to_json());
            iter.snapshot = dir / "manifest.json";
        }
        iter.student = train_student(imputed, data.val_full, student);
        out.push_back(std::move(iter));
        imputer = &out.back().student.best;
    }
    return out;
}

}  // namespace ugss
