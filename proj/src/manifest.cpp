#include "xseg/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "xseg/error.hpp"
#include "xseg/image_io.hpp"

namespace xseg {

namespace {
using Kind = DataError::Kind;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(Kind::MissingFile, "cannot open manifest '" + path + "'");

    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path();

    std::string line;
    if (!std::getline(f, line) || line.rfind("xseg-manifest v", 0) != 0)
        throw DataError(Kind::BadManifest, "'" + path + "' is not a manifest (missing header)");
    try {
        m.version = std::stoi(line.substr(std::string("xseg-manifest v").size()));
    } catch (...) {
        throw DataError(Kind::BadManifest, "bad manifest version line in '" + path + "'");
    }
    if (m.version != 1)
        throw DataError(Kind::BadManifest,
                        "unsupported manifest version " + std::to_string(m.version) + " in '" + path + "'");

    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "provenance") {
            ss >> m.provenance;
        } else if (kind == "entry") {
            ManifestEntry e;
            std::string label;
            if (!(ss >> e.image_path >> e.mask_path >> label))
                throw DataError(Kind::BadManifest, "malformed manifest entry '" + line + "' in '" + path + "'");
            e.label = parse_class_label(label);
            if (!seen.insert(e.image_path).second)
                throw DataError(Kind::BadManifest,
                                "duplicate image path '" + e.image_path + "' in '" + path + "'");
            m.entries.push_back(std::move(e));
        } else {
            throw DataError(Kind::BadManifest, "unknown manifest line '" + line + "' in '" + path + "'");
        }
    }

    for (const ManifestEntry& e : m.entries) {
        for (const std::string& rel : {e.image_path, e.mask_path}) {
            const auto full = m.base_dir / rel;
            if (!std::filesystem::exists(full))
                throw DataError(Kind::MissingFile,
                                "manifest '" + path + "' references missing file '" + full.string() + "'");
        }
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(Kind::MissingFile, "cannot open manifest '" + path + "' for writing");
    f << "xseg-manifest v" << manifest.version << "\n";
    f << "provenance " << manifest.provenance << "\n";
    for (const ManifestEntry& e : manifest.entries)
        f << "entry " << e.image_path << " " << e.mask_path << " " << class_label_name(e.label)
          << "\n";
}

Sample load_sample(const DatasetManifest& manifest, std::size_t index) {
    const ManifestEntry& e = manifest.entries.at(index);
    Sample s;
    s.source_id = e.image_path;
    s.label = e.label;
    const GrayImage img = read_gray_image((manifest.base_dir / e.image_path).string());
    const GrayImage msk = read_gray_image((manifest.base_dir / e.mask_path).string());
    if (img.height != msk.height || img.width != msk.width)
        throw DataError(Kind::MalformedImage, "image/mask size mismatch for '" + e.image_path + "'");
    s.image = to_unit_raster(img);
    s.mask = to_binary_mask(msk);
    return s;
}

std::vector<Sample> load_all_samples(const DatasetManifest& manifest) {
    std::vector<Sample> out;
    out.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) out.push_back(load_sample(manifest, i));
    return out;
}

}  // namespace xseg
