#include "ugss/autoclean.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "ugss/container.hpp"

namespace ugss {

namespace {

// Highest z index that still lies within `mm` of the landmark.
long long last_slice_within(int landmark, double mm, double spacing_z) {
    if (std::isinf(mm)) return mm > 0 ? std::numeric_limits<int>::max() : std::numeric_limits<int>::min();
    return landmark + static_cast<long long>(std::floor(mm / spacing_z + 1e-9));
}

int top_slice(const Mask& m) {
    const Shape3 s = m.shape();
    const std::size_t plane = static_cast<std::size_t>(s.y) * s.x;
    for (int z = s.z - 1; z >= 0; --z) {
        const auto* p = m.values().data() + static_cast<std::size_t>(z) * plane;
        if (std::any_of(p, p + plane, [](auto v) { return v != 0; })) return z;
    }
    return -1;
}

void append_audit(ScanRecord& r, const std::string& entry) {
    auto& a = r.meta["cleaning.audit"];
    a += (a.empty() ? "" : ";") + entry;
}

}  // namespace

void CleaningThresholds::validate() const {
    if (std::isnan(crop_above_mm) || std::isnan(delete_bowel_above_mm) || std::isnan(discard_below_mm)) {
        throw ValidationError("thresholds", "values must not be NaN");
    }
    if (crop_above_mm < 0) throw ValidationError("thresholds.crop_above_mm", "must be >= 0 so no slice at or below the landmark is cropped");
    if (crop_above_mm < delete_bowel_above_mm) throw ValidationError("thresholds.crop_above_mm", "must be >= delete_bowel_above_mm");
    if (delete_bowel_above_mm < discard_below_mm) throw ValidationError("thresholds.delete_bowel_above_mm", "must be >= discard_below_mm");
}

CleaningThresholds phantom_cleaning_thresholds(const PhantomConfig& config) {
    // Clean phantoms put the hips top at 0.30-0.36 of the abdomen depth and the
    // bowel-bag top at 0.60-0.68, so clean bowel extents span 0.24-0.38 and
    // scan extents 0.64-0.70 of the depth above the landmark.
    const double depth_mm = config.shape.z * config.spacing.z;
    CleaningThresholds t;
    t.crop_above_mm = 0.72 * depth_mm;
    t.delete_bowel_above_mm = 0.40 * depth_mm;
    t.discard_below_mm = 0.15 * depth_mm;
    return t;
}

std::size_t ExtentHistogram::total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
}

std::string ExtentHistogram::to_csv() const {
    std::ostringstream os;
    os << "bin_left_mm,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) os << bin_edges_mm[i] << "," << counts[i] << "\n";
    return os.str();
}

ExtentHistogram make_histogram(std::vector<double> d, double bw) {
    if (!(bw > 0)) throw ValidationError("bin_width_mm", "must be > 0");
    ExtentHistogram h;
    h.bin_width_mm = bw;
    h.samples_mm = d;
    if (d.empty()) return h;
    const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
    const double lo = std::floor(*mn / bw) * bw;
    const std::size_t nbins = static_cast<std::size_t>(std::floor((*mx - lo) / bw)) + 1;
    h.counts.assign(nbins, 0);
    for (std::size_t i = 0; i <= nbins; ++i) h.bin_edges_mm.push_back(lo + static_cast<double>(i) * bw);
    for (double v : d) {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / bw));
        h.counts[std::min(b, nbins - 1)] += 1;
    }
    return h;
}

int hip_cranial_landmark(const LabelSet& labels) {
    if (labels.masks[0].empty() || !labels.is_available(OrganId::Hips)) throw LandmarkError("hips annotation unavailable");
    const int top = top_slice(labels.mask(OrganId::Hips));
    if (top < 0) throw LandmarkError("hips annotation is empty");
    return top;
}

ExtentHistograms compute_extent_histograms(const std::vector<ScanRecord>& records, double bin_width_mm) {
    if (records.empty()) throw ValidationError("manifest", "no records to histogram");
    std::vector<double> scan, bowel;
    for (const auto& r : records) {
        const int lm = hip_cranial_landmark(r.labels);
        const double sz = r.image.spacing.z;
        scan.push_back((r.shape().z - 1 - lm) * sz);
        if (r.labels.is_available(OrganId::BowelBag)) {
            const int top = top_slice(r.labels.mask(OrganId::BowelBag));
            if (top >= 0) bowel.push_back((top - lm) * sz);
        }
    }
    ExtentHistograms h{make_histogram(std::move(scan), bin_width_mm), make_histogram(std::move(bowel), bin_width_mm)};
    h.bowel_extent.landmark = "hips_cranial";
    return h;
}

ExtentHistograms compute_extent_histograms(const std::filesystem::path& manifest_file, double bin_width_mm) {
    return compute_extent_histograms(load_records(manifest_file), bin_width_mm);
}

CleanOutcome apply_cleaning(const ScanRecord& record, const CleaningThresholds& t) {
    t.validate();
    const int lm = hip_cranial_landmark(record.labels);
    const double sz = record.image.spacing.z;
    Kept k{record, 0, 0};
    ScanRecord& r = k.record;

    const long long keep_to = last_slice_within(lm, t.crop_above_mm, sz);
    if (keep_to < r.shape().z - 1) {
        const int z1 = static_cast<int>(keep_to) + 1;
        k.slices_cropped = r.shape().z - z1;
        r.image.data = r.image.data.slab(0, z1);
        for (auto& m : r.labels.masks) m = m.slab(0, z1);
        if (r.uncertainty) r.uncertainty = r.uncertainty->slab(0, z1);
        append_audit(r, "crop:" + std::to_string(k.slices_cropped));
    }

    if (r.labels.is_available(OrganId::BowelBag)) {
        const long long del_from = last_slice_within(lm, t.delete_bowel_above_mm, sz) + 1;
        Mask& bowel = r.labels.mask(OrganId::BowelBag);
        const Shape3 s = bowel.shape();
        const std::size_t plane = static_cast<std::size_t>(s.y) * s.x;
        for (long long z = std::max(0LL, del_from); z < s.z; ++z) {
            auto* p = bowel.values().data() + static_cast<std::size_t>(z) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                if (p[i]) {
                    p[i] = 0;
                    ++k.bowel_voxels_deleted;
                }
            }
        }
        if (k.bowel_voxels_deleted) append_audit(r, "delete_bowel:" + std::to_string(k.bowel_voxels_deleted));

        const int top = top_slice(bowel);
        if (top < 0 || (top - lm) * sz < t.discard_below_mm) return Discarded{kDiscardBowelBelowWindow};
    }
    return k;
}

std::string CleaningReport::to_json() const {
    nlohmann::json j;
    j["kept"] = kept;
    j["discarded"] = discarded;
    j["modified"] = modified;
    j["slices_cropped"] = slices_cropped;
    j["voxels_deleted"] = voxels_deleted;
    j["discarded_ids"] = discarded_ids;
    j["modified_ids"] = modified_ids;
    nlohmann::json f = nlohmann::json::array();
    for (const auto& [id, msg] : failures) f.push_back({{"id", id}, {"error", msg}});
    j["failures"] = f;
    return j.dump(2) + "\n";
}

CleanedDataset clean_records(const std::vector<ScanRecord>& records, const CleaningThresholds& thresholds) {
    thresholds.validate();
    CleanedDataset out;
    for (const auto& r : records) {
        try {
            auto outcome = apply_cleaning(r, thresholds);
            if (auto* k = std::get_if<Kept>(&outcome)) {
                ++out.report.kept;
                if (k->slices_cropped || k->bowel_voxels_deleted) {
                    ++out.report.modified;
                    out.report.modified_ids.push_back(r.id);
                }
                out.report.slices_cropped += static_cast<std::size_t>(k->slices_cropped);
                out.report.voxels_deleted += k->bowel_voxels_deleted;
                out.records.push_back(std::move(k->record));
            } else {
                ++out.report.discarded;
                out.report.discarded_ids.push_back(r.id);
            }
        } catch (const Error& e) {
            out.report.failures.emplace_back(r.id, e.what());
        }
    }
    return out;
}

std::pair<DatasetManifest, CleaningReport> clean_dataset(const std::filesystem::path& manifest_file,
                                                         const CleaningThresholds& thresholds,
                                                         const std::filesystem::path& out_dir) {
    auto cleaned = clean_records(load_records(manifest_file), thresholds);
    auto manifest = write_dataset(cleaned.records, out_dir);
    write_text_atomic(out_dir / "cleaning_report.json", cleaned.report.to_json());
    return {std::move(manifest), std::move(cleaned.report)};
}

}  // namespace ugss
