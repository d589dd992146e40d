#ifndef UGSS_CONTAINER_HPP
#define UGSS_CONTAINER_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ugss/core_data.hpp"

namespace ugss {

inline constexpr int kContainerFormatVersion = 1;

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);

// Write-temp-then-rename so readers never observe partial files.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// On-disk layout:
//   <dir>/meta.json            shape, spacing, dtypes, flags, sources, sha256 per array
//   <dir>/image.raw            float32 little-endian, z-major C order
//   <dir>/label_<organ>.raw    uint8 {0,1}
//   <dir>/uncertainty.raw      float32, only when the record carries one
// Output is byte-identical for identical records.
std::filesystem::path write_container(const ScanRecord& record, const std::filesystem::path& dir);
ScanRecord read_container(const std::filesystem::path& dir);

// Manifest paths are stored relative to the manifest file's directory.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);
std::filesystem::path resolve_entry(const std::filesystem::path& manifest_file, const DatasetManifest::Entry& e);
std::vector<ScanRecord> load_records(const std::filesystem::path& manifest_file);

// Writes each record to <out_dir>/<id>/ and a manifest at <out_dir>/manifest.json.
DatasetManifest write_dataset(const std::vector<ScanRecord>& records, const std::filesystem::path& out_dir);

}  // namespace ugss

#endif  // UGSS_CONTAINER_HPP
