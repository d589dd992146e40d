#ifndef UGSS_CORE_DATA_HPP
#define UGSS_CORE_DATA_HPP

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ugss/grid.hpp"

namespace ugss {

// Class indices are fixed across the codebase; background is class 0.
enum class OrganId : int { BowelBag = 1, Bladder = 2, Hips = 3, Rectum = 4 };

inline constexpr int kNumOrgans = 4;
inline constexpr int kNumClasses = kNumOrgans + 1;
inline constexpr std::array<OrganId, kNumOrgans> kAllOrgans{OrganId::BowelBag, OrganId::Bladder, OrganId::Hips,
                                                           OrganId::Rectum};

constexpr int class_index(OrganId o) { return static_cast<int>(o); }
constexpr std::size_t slot(OrganId o) { return static_cast<std::size_t>(static_cast<int>(o) - 1); }

// Lower-case identifiers used in file names and JSON keys.
const char* organ_name(OrganId o);
std::optional<OrganId> organ_from_name(const std::string& name);

enum class LabelSource { Clinical, Imputed, None };

const char* to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

struct LabelSet {
    std::array<Mask, kNumOrgans> masks;
    std::array<bool, kNumOrgans> available{};
    std::array<LabelSource, kNumOrgans> source{LabelSource::None, LabelSource::None, LabelSource::None,
                                              LabelSource::None};

    LabelSet() = default;
    // All organs unavailable, zero masks of the given shape.
    explicit LabelSet(Shape3 shape);

    Mask& mask(OrganId o) { return masks[slot(o)]; }
    const Mask& mask(OrganId o) const { return masks[slot(o)]; }
    bool is_available(OrganId o) const { return available[slot(o)]; }
    LabelSource source_of(OrganId o) const { return source[slot(o)]; }

    void set(OrganId o, Mask m, LabelSource src);
    void clear(OrganId o);

    bool fully_annotated() const;
    int available_count() const;
    Shape3 shape() const { return masks[0].shape(); }

    bool operator==(const LabelSet&) const = default;
};

struct ScanRecord {
    std::string id;
    Volume image;
    LabelSet labels;
    std::optional<FloatGrid> uncertainty;
    std::map<std::string, std::string> meta;

    const Shape3& shape() const { return image.shape(); }
    bool operator==(const ScanRecord&) const = default;
};

struct ValidationIssue {
    std::string rule;    // e.g. "disjointness", "availability consistency"
    std::string field;
    std::string detail;
    std::size_t count = 0;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    bool has(const std::string& rule) const;
    std::string summary() const;
};

// Lists every violated invariant; never throws, never mutates.
ValidationReport validate_record(const ScanRecord& record);

// Throws ValidationError naming the first violated field.
void require_valid(const ScanRecord& record);

// Collapse available organ masks into one class-index map (background = 0).
// Organs are painted in class-index order, so overlapping voxels take the
// highest index; disjoint masks round-trip exactly through expand_labels.
ClassMap collapse_labels(const LabelSet& labels);
LabelSet expand_labels(const ClassMap& classes, const std::array<bool, kNumOrgans>& available,
                       LabelSource source = LabelSource::Clinical);

struct DatasetManifest {
    struct Entry {
        std::string id;
        std::string path;
        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> records;
    std::map<std::string, int> split_tags;

    bool operator==(const DatasetManifest&) const = default;
};

}  // namespace ugss

#endif  // UGSS_CORE_DATA_HPP
