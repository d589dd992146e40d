#include "ugss/impute.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "ugss/container.hpp"

namespace ugss {

void InferenceOptions::validate() const {
    if (patch_depth < 1) throw ValidationError("inference.patch_depth", "must be >= 1");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("inference.overlap", "must lie in [0, 1)");
}

std::vector<int> window_starts(int depth, int patch, double overlap) {
    if (depth <= patch) return {0};
    const int stride = std::max(1, patch - static_cast<int>(std::lround(patch * overlap)));
    std::vector<int> s;
    for (int z = 0; z + patch < depth; z += stride) s.push_back(z);
    s.push_back(depth - patch);
    return s;
}

FullPrediction predict_full_volume(const KHeadModel& model, const ScanRecord& record, const InferenceOptions& opt) {
    opt.validate();
    const int div = model.config().divisor();
    if (opt.patch_depth % div != 0) {
        throw ValidationError("inference.patch_depth", "must be divisible by " + std::to_string(div));
    }
    const Shape3 s = record.shape();
    const int P = opt.patch_depth;
    auto round_up = [div](int n) { return (n + div - 1) / div * div; };
    const Shape3 ps{std::max(s.z, P), round_up(s.y), round_up(s.x)};
    const int oz = (ps.z - s.z) / 2, oy = (ps.y - s.y) / 2, ox = (ps.x - s.x) / 2;

    FloatGrid padded(ps, 0.0f);
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) padded(z + oz, y + oy, x + ox) = record.image.data(z, y, x);

    const int C = model.config().num_classes;
    const std::size_t plane = static_cast<std::size_t>(ps.y) * ps.x;
    std::vector<double> sum(static_cast<std::size_t>(C) * ps.size(), 0.0);
    std::vector<int> count(static_cast<std::size_t>(ps.z), 0);
    for (int z0 : window_starts(ps.z, P, opt.overlap)) {
        const nn::Tensor mean = mean_prediction(model.forward(volume_to_tensor(padded.slab(z0, z0 + P))));
        const std::size_t n = mean.spatial();
        for (int c = 0; c < C; ++c) {
            const float* src = mean.channel(c);
            double* dst = sum.data() + static_cast<std::size_t>(c) * ps.size() + static_cast<std::size_t>(z0) * plane;
            for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
        }
        for (int z = z0; z < z0 + P; ++z) ++count[z];
    }

    FullPrediction out;
    out.mean_probs = nn::Tensor(C, s.z, s.y, s.x);
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y)
                for (int x = 0; x < s.x; ++x) {
                    const std::size_t src = static_cast<std::size_t>(c) * ps.size() + (z + oz) * plane +
                                            static_cast<std::size_t>(y + oy) * ps.x + (x + ox);
                    out.mean_probs.channel(c)[(static_cast<std::size_t>(z) * s.y + y) * s.x + x] =
                        static_cast<float>(sum[src] / count[z + oz]);
                }
    out.u = entropy_map(out.mean_probs);
    return out;
}

ClassMap predict_classes(const KHeadModel& model, const ScanRecord& record, const InferenceOptions& opt) {
    return argmax_classes(predict_full_volume(model, record, opt).mean_probs);
}

ScanRecord impute_record(const ScanRecord& record, const nn::Tensor& mean_probs, const FloatGrid& u) {
    const Shape3 s = record.shape();
    if (mean_probs.d != s.z || mean_probs.h != s.y || mean_probs.w != s.x || mean_probs.c != kNumClasses) {
        throw ShapeError("mean_probs shape does not match record " + record.id);
    }
    if (u.shape() != s) throw ShapeError("uncertainty shape does not match record " + record.id);

    ScanRecord out = record;
    bool all_clinical = true;
    Mask known(s, 0);
    for (OrganId o : kAllOrgans) {
        if (record.labels.is_available(o) && record.labels.source_of(o) == LabelSource::Clinical) {
            const Mask& m = record.labels.mask(o);
            for (std::size_t i = 0; i < m.size(); ++i) known[i] |= m[i];
        } else {
            all_clinical = false;
        }
    }
    if (all_clinical) {
        out.uncertainty = FloatGrid(s, 0.0f);
        return out;
    }
    const ClassMap pred = argmax_classes(mean_probs);
    for (OrganId o : kAllOrgans) {
        if (record.labels.is_available(o) && record.labels.source_of(o) == LabelSource::Clinical) continue;
        Mask m(s, 0);
        const auto c = static_cast<std::uint8_t>(class_index(o));
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = (pred[i] == c && !known[i]) ? 1 : 0;
        out.labels.set(o, std::move(m), LabelSource::Imputed);
    }
    FloatGrid uu = u;
    for (std::size_t i = 0; i < uu.size(); ++i)
        if (known[i]) uu[i] = 0.0f;
    out.uncertainty = std::move(uu);
    return out;
}

std::string ImputeReport::to_json() const {
    nlohmann::json j;
    j["records"] = records;
    j["passthrough"] = passthrough;
    for (OrganId o : kAllOrgans) j["imputed"][organ_name(o)] = imputed[slot(o)];
    return j.dump(2) + "\n";
}

std::vector<ScanRecord> impute_records(const KHeadModel& model, const std::vector<ScanRecord>& records,
                                       const InferenceOptions& opt, ImputeReport* report) {
    std::vector<ScanRecord> out;
    out.reserve(records.size());
    ImputeReport rep;
    for (const auto& r : records) {
        ++rep.records;
        bool all_clinical = true;
        for (OrganId o : kAllOrgans) {
            if (!(r.labels.is_available(o) && r.labels.source_of(o) == LabelSource::Clinical)) {
                all_clinical = false;
                ++rep.imputed[slot(o)];
            }
        }
        if (all_clinical) {
            ++rep.passthrough;
            ScanRecord p = r;
            p.uncertainty = FloatGrid(r.shape(), 0.0f);
            out.push_back(std::move(p));
            continue;
        }
        const FullPrediction pred = predict_full_volume(model, r, opt);
        out.push_back(impute_record(r, pred.mean_probs, pred.u));
    }
    if (report) *report = rep;
    return out;
}

std::pair<DatasetManifest, ImputeReport> impute_dataset(const KHeadModel& model, const std::filesystem::path& manifest_file,
                                                        const InferenceOptions& opt, const std::filesystem::path& out_dir) {
    ImputeReport rep;
    const auto imputed = impute_records(model, load_records(manifest_file), opt, &rep);
    auto manifest = write_dataset(imputed, out_dir);
    write_text_atomic(out_dir / "impute_report.json", rep.to_json());
    return {std::move(manifest), rep};
}

}  // namespace ugss
