#include "ugss/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ugss {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFloatDtype = "float32_le";
constexpr const char* kMaskDtype = "uint8";

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::vector<unsigned char> float_bytes(const FloatGrid& g) {
    std::vector<unsigned char> out(g.size() * sizeof(float));
    if (!out.empty()) std::memcpy(out.data(), g.values().data(), out.size());
    return out;
}

std::vector<unsigned char> mask_bytes(const Mask& m) {
    return std::vector<unsigned char>(m.values().begin(), m.values().end());
}

FloatGrid float_grid_from(const std::vector<unsigned char>& bytes, Shape3 shape, const std::string& what) {
    if (bytes.size() != shape.size() * sizeof(float)) {
        throw ShapeError(what + ": expected " + std::to_string(shape.size() * sizeof(float)) + " bytes for shape " +
                         to_string(shape) + ", found " + std::to_string(bytes.size()));
    }
    std::vector<float> v(shape.size());
    if (!v.empty()) std::memcpy(v.data(), bytes.data(), bytes.size());
    return FloatGrid(shape, std::move(v));
}

Mask mask_from(const std::vector<unsigned char>& bytes, Shape3 shape, const std::string& what) {
    if (bytes.size() != shape.size()) {
        throw ShapeError(what + ": expected " + std::to_string(shape.size()) + " bytes for shape " + to_string(shape) +
                         ", found " + std::to_string(bytes.size()));
    }
    return Mask(shape, std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

void verify_checksum(const std::vector<unsigned char>& bytes, const std::string& expected, const std::string& what) {
    const auto actual = sha256_hex(bytes);
    if (actual != expected) throw ChecksumError(what + ": checksum mismatch (expected " + expected + ", got " + actual + ")");
}

std::string label_file(OrganId o) { return std::string("label_") + organ_name(o) + ".raw"; }

template <typename T>
T json_get(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw FormatError(ctx + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(ctx + ": bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 computation failed");
    }
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
    return os.str();
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

void write_file_atomic(const fs::path& path, std::span<const unsigned char> bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path,
                      std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<unsigned char> read_file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing file: " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_text(const fs::path& path) {
    auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

fs::path write_container(const ScanRecord& record, const fs::path& dir) {
    require_valid(record);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create container directory " + dir.string());

    const Shape3 s = record.shape();
    json meta;
    meta["format_version"] = kContainerFormatVersion;
    meta["id"] = record.id;
    meta["shape"] = {s.z, s.y, s.x};
    meta["spacing_mm"] = {record.image.spacing.z, record.image.spacing.y, record.image.spacing.x};
    meta["intensity_unit"] = to_string(record.image.unit);
    meta["dtype"] = {{"image", kFloatDtype}, {"label", kMaskDtype}};

    const auto img = float_bytes(record.image.data);
    write_file_atomic(dir / "image.raw", img);
    meta["image_checksum_sha256"] = sha256_hex(img);

    json organs = json::object();
    for (OrganId o : kAllOrgans) {
        const auto bytes = mask_bytes(record.labels.mask(o));
        write_file_atomic(dir / label_file(o), bytes);
        organs[organ_name(o)] = {{"available", record.labels.is_available(o)},
                                 {"source", to_string(record.labels.source_of(o))},
                                 {"checksum_sha256", sha256_hex(bytes)}};
    }
    meta["organs"] = organs;

    if (record.uncertainty) {
        const auto bytes = float_bytes(*record.uncertainty);
        write_file_atomic(dir / "uncertainty.raw", bytes);
        meta["dtype"]["uncertainty"] = kFloatDtype;
        meta["uncertainty_checksum_sha256"] = sha256_hex(bytes);
    } else {
        fs::remove(dir / "uncertainty.raw", ec);
    }
    meta["meta"] = record.meta;

    write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
    return dir;
}

ScanRecord read_container(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    json meta;
    try {
        meta = json::parse(read_text(meta_path));
    } catch (const json::parse_error& e) {
        throw FormatError(meta_path.string() + ": invalid JSON: " + e.what());
    }
    const std::string ctx = meta_path.string();

    const int version = json_get<int>(meta, "format_version", ctx);
    if (version != kContainerFormatVersion) {
        throw FormatError(ctx + ": unsupported format version " + std::to_string(version));
    }
    const auto dtype = json_get<json>(meta, "dtype", ctx);
    if (json_get<std::string>(dtype, "image", ctx + " dtype") != kFloatDtype ||
        json_get<std::string>(dtype, "label", ctx + " dtype") != kMaskDtype) {
        throw FormatError(ctx + ": unsupported format (dtype descriptor " + dtype.dump() + ")");
    }
    if (dtype.contains("uncertainty") && dtype["uncertainty"] != kFloatDtype) {
        throw FormatError(ctx + ": unsupported format (uncertainty dtype " + dtype["uncertainty"].dump() + ")");
    }

    const auto sv = json_get<std::vector<int>>(meta, "shape", ctx);
    const auto sp = json_get<std::vector<double>>(meta, "spacing_mm", ctx);
    if (sv.size() != 3 || sp.size() != 3) throw ShapeError(ctx + ": shape and spacing_mm must have 3 entries");
    const Shape3 shape{sv[0], sv[1], sv[2]};
    if (!shape.valid()) throw ShapeError(ctx + ": invalid shape " + to_string(shape));

    ScanRecord r;
    r.id = json_get<std::string>(meta, "id", ctx);
    r.image.spacing = Spacing{sp[0], sp[1], sp[2]};
    if (!r.image.spacing.valid()) throw ShapeError(ctx + ": spacing must be finite and positive");
    r.image.unit = intensity_unit_from_string(json_get<std::string>(meta, "intensity_unit", ctx));

    const auto img = read_file_bytes(dir / "image.raw");
    r.image.data = float_grid_from(img, shape, "image.raw");
    verify_checksum(img, json_get<std::string>(meta, "image_checksum_sha256", ctx), "image.raw");

    const auto organs = json_get<json>(meta, "organs", ctx);
    r.labels = LabelSet(shape);
    for (OrganId o : kAllOrgans) {
        const std::string name = organ_name(o);
        const auto entry = json_get<json>(organs, name.c_str(), ctx + " organs");
        const auto bytes = read_file_bytes(dir / label_file(o));
        Mask m = mask_from(bytes, shape, label_file(o));
        verify_checksum(bytes, json_get<std::string>(entry, "checksum_sha256", ctx + " " + name), label_file(o));
        const auto src = label_source_from_string(json_get<std::string>(entry, "source", ctx + " " + name));
        const bool avail = json_get<bool>(entry, "available", ctx + " " + name);
        if (avail != (src != LabelSource::None)) {
            throw FormatError(ctx + ": organ " + name + " availability disagrees with source");
        }
        r.labels.set(o, std::move(m), src);
    }

    if (meta.contains("uncertainty_checksum_sha256")) {
        const auto bytes = read_file_bytes(dir / "uncertainty.raw");
        r.uncertainty = float_grid_from(bytes, shape, "uncertainty.raw");
        verify_checksum(bytes, meta["uncertainty_checksum_sha256"].get<std::string>(), "uncertainty.raw");
    }
    if (meta.contains("meta")) r.meta = meta["meta"].get<std::map<std::string, std::string>>();
    return r;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
    std::set<std::string> seen;
    json recs = json::array();
    for (const auto& e : manifest.records) {
        if (!seen.insert(e.id).second) throw ValidationError("manifest.records", "duplicate id '" + e.id + "'");
        recs.push_back({{"id", e.id}, {"path", e.path}});
    }
    json j;
    j["records"] = recs;
    j["split_tags"] = manifest.split_tags;
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_text_atomic(file, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_text(file));
    } catch (const json::parse_error& e) {
        throw FormatError(file.string() + ": invalid JSON: " + e.what());
    }
    DatasetManifest m;
    std::set<std::string> seen;
    for (const auto& r : json_get<json>(j, "records", file.string())) {
        DatasetManifest::Entry e{json_get<std::string>(r, "id", file.string()),
                                 json_get<std::string>(r, "path", file.string())};
        if (!seen.insert(e.id).second) throw ValidationError("manifest.records", "duplicate id '" + e.id + "'");
        m.records.push_back(std::move(e));
    }
    if (j.contains("split_tags")) m.split_tags = j["split_tags"].get<std::map<std::string, int>>();
    return m;
}

fs::path resolve_entry(const fs::path& manifest_file, const DatasetManifest::Entry& e) {
    fs::path p(e.path);
    if (p.is_relative()) p = manifest_file.parent_path() / p;
    if (!fs::exists(p / "meta.json")) throw IoError("manifest entry '" + e.id + "' not resolvable at " + p.string());
    return p;
}

std::vector<ScanRecord> load_records(const fs::path& manifest_file) {
    const auto m = read_manifest(manifest_file);
    std::vector<ScanRecord> out;
    out.reserve(m.records.size());
    for (const auto& e : m.records) out.push_back(read_container(resolve_entry(manifest_file, e)));
    return out;
}

DatasetManifest write_dataset(const std::vector<ScanRecord>& records, const fs::path& out_dir) {
    DatasetManifest m;
    for (const auto& r : records) {
        write_container(r, out_dir / r.id);
        m.records.push_back({r.id, r.id});
    }
    write_manifest(m, out_dir / "manifest.json");
    return m;
}

}  // namespace ugss
