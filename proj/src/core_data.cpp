#include "ugss/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ugss {

std::string to_string(const Shape3& s) {
    return std::to_string(s.z) + "x" + std::to_string(s.y) + "x" + std::to_string(s.x);
}

bool Spacing::valid() const {
    return std::isfinite(z) && std::isfinite(y) && std::isfinite(x) && z > 0 && y > 0 && x > 0;
}

std::string to_string(IntensityUnit u) { return u == IntensityUnit::HU ? "HU" : "NORMALIZED"; }

IntensityUnit intensity_unit_from_string(const std::string& s) {
    if (s == "HU") return IntensityUnit::HU;
    if (s == "NORMALIZED") return IntensityUnit::Normalized;
    throw FormatError("unknown intensity_unit '" + s + "'");
}

std::size_t count_nonzero(const Mask& m) {
    return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](auto v) { return v != 0; }));
}

const char* organ_name(OrganId o) {
    switch (o) {
        case OrganId::BowelBag: return "bowel_bag";
        case OrganId::Bladder: return "bladder";
        case OrganId::Hips: return "hips";
        case OrganId::Rectum: return "rectum";
    }
    return "unknown";
}

std::optional<OrganId> organ_from_name(const std::string& name) {
    for (OrganId o : kAllOrgans) {
        if (name == organ_name(o)) return o;
    }
    return std::nullopt;
}

const char* to_string(LabelSource s) {
    switch (s) {
        case LabelSource::Clinical: return "CLINICAL";
        case LabelSource::Imputed: return "IMPUTED";
        case LabelSource::None: return "NONE";
    }
    return "NONE";
}

LabelSource label_source_from_string(const std::string& s) {
    if (s == "CLINICAL") return LabelSource::Clinical;
    if (s == "IMPUTED") return LabelSource::Imputed;
    if (s == "NONE") return LabelSource::None;
    throw FormatError("unknown label source '" + s + "'");
}

LabelSet::LabelSet(Shape3 shape) {
    for (auto& m : masks) m = Mask(shape, 0);
}

void LabelSet::set(OrganId o, Mask m, LabelSource src) {
    masks[slot(o)] = std::move(m);
    available[slot(o)] = src != LabelSource::None;
    source[slot(o)] = src;
}

void LabelSet::clear(OrganId o) {
    auto& m = masks[slot(o)];
    std::fill(m.values().begin(), m.values().end(), std::uint8_t{0});
    available[slot(o)] = false;
    source[slot(o)] = LabelSource::None;
}

bool LabelSet::fully_annotated() const {
    return std::all_of(available.begin(), available.end(), [](bool a) { return a; });
}

int LabelSet::available_count() const {
    return static_cast<int>(std::count(available.begin(), available.end(), true));
}

bool ValidationReport::has(const std::string& rule) const {
    return std::any_of(issues.begin(), issues.end(), [&](const ValidationIssue& i) { return i.rule == rule; });
}

std::string ValidationReport::summary() const {
    std::ostringstream os;
    for (const auto& i : issues) os << i.rule << " [" << i.field << "] " << i.detail << " (count " << i.count << ")\n";
    return os.str();
}

ValidationReport validate_record(const ScanRecord& r) {
    ValidationReport rep;
    auto add = [&](std::string rule, std::string field, std::string detail, std::size_t count = 1) {
        rep.issues.push_back({std::move(rule), std::move(field), std::move(detail), count});
    };

    const Shape3 shape = r.image.data.shape();
    if (!shape.valid()) add("shape", "image.shape", "dimensions must be >= 1, got " + to_string(shape));
    if (r.image.data.size() != shape.size()) add("shape", "image.data", "data size does not match shape");
    if (!r.image.spacing.valid()) add("spacing", "image.spacing", "spacing must be finite and positive");

    if (r.image.unit == IntensityUnit::Normalized) {
        std::size_t bad = 0;
        for (float v : r.image.data.values()) {
            if (!(v >= 0.0f && v <= 1.0f)) ++bad;
        }
        if (bad) add("normalized range", "image.data", "values outside [0, 1]", bad);
    }

    bool shapes_ok = true;
    for (OrganId o : kAllOrgans) {
        const Mask& m = r.labels.mask(o);
        const std::string field = std::string("labels.") + organ_name(o);
        if (m.shape() != shape) {
            add("shape", field, "mask shape " + to_string(m.shape()) + " differs from image " + to_string(shape));
            shapes_ok = false;
            continue;
        }
        std::size_t nonbinary = 0;
        for (auto v : m.values()) {
            if (v > 1) ++nonbinary;
        }
        if (nonbinary) add("binary mask", field, "mask values outside {0,1}", nonbinary);

        const bool avail = r.labels.is_available(o);
        const bool none = r.labels.source_of(o) == LabelSource::None;
        if (avail == none) add("availability consistency", field, "available flag disagrees with source tag");
        if (!avail) {
            const std::size_t nz = count_nonzero(m);
            if (nz) add("availability consistency", field, "unavailable organ has a nonzero mask", nz);
        }
    }
    if (r.uncertainty && r.uncertainty->shape() != shape) {
        add("shape", "uncertainty", "uncertainty shape differs from image");
    }
    if (r.uncertainty) {
        std::size_t bad = 0;
        for (float v : r.uncertainty->values()) {
            if (!(v >= 0.0f) || !std::isfinite(v)) ++bad;
        }
        if (bad) add("uncertainty range", "uncertainty", "uncertainty must be finite and >= 0", bad);
    }

    if (shapes_ok) {
        // Only the triple that preprocessing disambiguates is checked.
        const std::array<OrganId, 3> triple{OrganId::Bladder, OrganId::Rectum, OrganId::BowelBag};
        for (std::size_t i = 0; i < triple.size(); ++i) {
            for (std::size_t j = i + 1; j < triple.size(); ++j) {
                const Mask& a = r.labels.mask(triple[i]);
                const Mask& b = r.labels.mask(triple[j]);
                std::size_t both = 0;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    if (a[k] && b[k]) ++both;
                }
                if (both) {
                    add("disjointness", std::string("labels.") + organ_name(triple[i]) + "/" + organ_name(triple[j]),
                        "masks overlap", both);
                }
            }
        }
    }
    return rep;
}

void require_valid(const ScanRecord& record) {
    const auto rep = validate_record(record);
    if (!rep.ok()) {
        const auto& first = rep.issues.front();
        throw ValidationError(first.field, first.rule + ": " + first.detail);
    }
}

ClassMap collapse_labels(const LabelSet& labels) {
    ClassMap out(labels.shape(), 0);
    for (OrganId o : kAllOrgans) {
        if (!labels.is_available(o)) continue;
        const Mask& m = labels.mask(o);
        const auto cls = static_cast<std::uint8_t>(class_index(o));
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i]) out[i] = cls;
        }
    }
    return out;
}

LabelSet expand_labels(const ClassMap& classes, const std::array<bool, kNumOrgans>& available, LabelSource source) {
    LabelSet out(classes.shape());
    for (OrganId o : kAllOrgans) {
        if (!available[slot(o)]) continue;
        Mask m(classes.shape(), 0);
        const auto cls = static_cast<std::uint8_t>(class_index(o));
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = classes[i] == cls ? 1 : 0;
        out.set(o, std::move(m), source);
    }
    return out;
}

}  // namespace ugss
