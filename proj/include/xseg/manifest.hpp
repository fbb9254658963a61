#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xseg/metrics.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

// One image-mask pair with its pathology class.
struct Sample {
    Tensor image;  // H x W grayscale in [0,1]
    Tensor mask;   // H x W binary
    PathologyClass label = PathologyClass::Normal;
    std::string source_id;
};

struct ManifestEntry {
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    PathologyClass label = PathologyClass::Normal;
};

// Line-oriented dataset index. File format (one token group per line,
// whitespace-separated, paths must not contain spaces):
//   xseg-manifest v1
//   provenance <tag>
//   entry <image-path> <mask-path> <label>
struct DatasetManifest {
    int version = 1;
    std::string provenance;  // source|general|portable-transfer|portable-heldout|synthetic-*
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;

    std::size_t size() const { return entries.size(); }
};

// Parses and validates: version supported, labels known, image paths unique,
// every referenced file exists.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

Sample load_sample(const DatasetManifest& manifest, std::size_t index);
std::vector<Sample> load_all_samples(const DatasetManifest& manifest);

}  // namespace xseg
