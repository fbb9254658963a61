#include "xseg/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xseg/error.hpp"
#include "xseg/image_io.hpp"
#include "xseg/rng.hpp"

namespace xseg {

void SynthSpec::validate() const {
    for (const auto& [cls, count] : count_per_class)
        if (count < 1)
            throw ConfigError("synthetic count for class '" + class_label_name(cls) + "' must be >= 1");
    if (count_per_class.empty()) throw ConfigError("synthetic spec needs at least one class count");
    if (image_size < 16 || image_size > 4096)
        throw ConfigError("synthetic image_size must lie in [16, 4096]");
    if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
    if (blur_radius < 0.0) throw ConfigError("blur_radius must be >= 0");
    if (contrast_factor <= 0.0 || contrast_factor > 1.0)
        throw ConfigError("contrast_factor must lie in (0, 1]");
    if (artifact_probability < 0.0 || artifact_probability > 1.0)
        throw ConfigError("artifact_probability must lie in [0, 1]");
}

std::string domain_name(SynthSpec::Domain d) {
    switch (d) {
        case SynthSpec::Domain::Source: return "source";
        case SynthSpec::Domain::General: return "general";
        case SynthSpec::Domain::Portable: return "portable";
    }
    return "?";
}

SynthSpec::Domain parse_domain(const std::string& name) {
    if (name == "source") return SynthSpec::Domain::Source;
    if (name == "general") return SynthSpec::Domain::General;
    if (name == "portable") return SynthSpec::Domain::Portable;
    throw ConfigError("unknown synthetic domain '" + name + "'");
}

namespace {

constexpr std::uint64_t kGeoTag = 0x67656f;
constexpr std::uint64_t kNoiseTag = 0x6e6f69;
constexpr std::uint64_t kDegradeTag = 0x646567;

std::uint64_t class_tag(PathologyClass c) { return static_cast<std::uint64_t>(c) + 1; }

struct Ellipse {
    double cy, cx, ry, rx, theta;

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = std::cos(theta) * dx + std::sin(theta) * dy;
        const double v = -std::sin(theta) * dx + std::cos(theta) * dy;
        return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    }
};

void add_noise(Tensor& img, Rng& noise, double level) {
    for (double& v : img.data) v += level * noise.normal();
}

void clamp_unit(Tensor& img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

void render_lung_texture(Tensor& img, const Ellipse& lung, PathologyClass cls, Rng& geo, int S) {
    if (cls == PathologyClass::Normal) return;
    const int patches = 2 + static_cast<int>(geo.uniform_int(3));
    for (int p = 0; p < patches; ++p) {
        const double py = lung.cy + geo.uniform(-0.55, 0.55) * lung.ry;
        const double px = lung.cx + geo.uniform(-0.55, 0.55) * lung.rx;
        const double pr = geo.uniform(0.18, 0.32) * std::min(lung.rx, lung.ry);
        const double freq = geo.uniform(0.45, 0.8);
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                if (!lung.contains(y, x)) continue;
                const double d2 = (y - py) * (y - py) + (x - px) * (x - px);
                if (d2 > pr * pr) continue;
                double& v = img.data[static_cast<std::size_t>(y * S + x)];
                if (cls == PathologyClass::Covid) {
                    // lattice-like consolidation
                    v += 0.28 * std::abs(std::sin(freq * x) * std::sin(freq * y));
                } else {
                    // diffuse ground-glass style bump
                    v += 0.20 * std::exp(-d2 / (2.0 * pr * pr * 0.35));
                }
            }
        }
    }
}

void render_general(Tensor& img, Tensor& mask, PathologyClass cls, Rng& geo, Rng& noise, int S,
                    double noise_level) {
    for (double& v : img.data) v = 0.86;

    Ellipse lungs[2];
    for (int side = 0; side < 2; ++side) {
        const double cx0 = side == 0 ? 0.30 : 0.70;
        lungs[side].cx = S * (cx0 + geo.uniform(-0.035, 0.035));
        lungs[side].cy = S * (0.52 + geo.uniform(-0.035, 0.035));
        lungs[side].rx = S * geo.uniform(0.13, 0.17);
        lungs[side].ry = S * geo.uniform(0.24, 0.30);
        lungs[side].theta = geo.uniform(-0.14, 0.14);
    }

    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            for (const Ellipse& lung : lungs) {
                if (!lung.contains(y, x)) continue;
                const double grad = 0.05 * (y - lung.cy) / lung.ry;
                img.data[static_cast<std::size_t>(y * S + x)] = 0.24 + grad;
                mask.data[static_cast<std::size_t>(y * S + x)] = 1.0;
                break;
            }
        }
    }
    for (const Ellipse& lung : lungs) render_lung_texture(img, lung, cls, geo, S);
    add_noise(img, noise, noise_level);
    clamp_unit(img);
}

void render_source(Tensor& img, Tensor& mask, Rng& geo, Rng& noise, int S, double noise_level) {
    const double fy = geo.uniform(1.0, 3.0), fx = geo.uniform(1.0, 3.0);
    const double phase = geo.uniform(0.0, 6.28318530717958648);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            img.data[static_cast<std::size_t>(y * S + x)] =
                0.16 + 0.05 * std::sin(6.28318530717958648 * (fy * y + fx * x) / S + phase);

    Ellipse lesion;
    lesion.cy = S * (0.5 + geo.uniform(-0.1, 0.1));
    lesion.cx = S * (0.5 + geo.uniform(-0.1, 0.1));
    lesion.ry = S * geo.uniform(0.15, 0.28);
    lesion.rx = S * geo.uniform(0.15, 0.28);
    lesion.theta = geo.uniform(-0.5, 0.5);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            if (!lesion.contains(y, x)) continue;
            const double dy = (y - lesion.cy) / lesion.ry, dx = (x - lesion.cx) / lesion.rx;
            img.data[static_cast<std::size_t>(y * S + x)] = 0.82 - 0.10 * (dy * dy + dx * dx);
            mask.data[static_cast<std::size_t>(y * S + x)] = 1.0;
        }
    }
    add_noise(img, noise, noise_level);
    clamp_unit(img);
}

void gaussian_blur(Tensor& img, double sigma) {
    if (sigma <= 0.0) return;
    const int S_h = img.shape[0], S_w = img.shape[1];
    const int half = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
    for (int i = -half; i <= half; ++i)
        k[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * (i * i) / (sigma * sigma));

    Tensor tmp(img.shape);
    for (int y = 0; y < S_h; ++y) {  // horizontal pass, truncated kernel renormalized at borders
        for (int x = 0; x < S_w; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= S_w) continue;
                const double w = k[static_cast<std::size_t>(i + half)];
                acc += w * img.data[static_cast<std::size_t>(y * S_w + xx)];
                wsum += w;
            }
            tmp.data[static_cast<std::size_t>(y * S_w + x)] = acc / wsum;
        }
    }
    for (int y = 0; y < S_h; ++y) {
        for (int x = 0; x < S_w; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= S_h) continue;
                const double w = k[static_cast<std::size_t>(i + half)];
                acc += w * tmp.data[static_cast<std::size_t>(yy * S_w + x)];
                wsum += w;
            }
            img.data[static_cast<std::size_t>(y * S_w + x)] = acc / wsum;
        }
    }
}

void degrade_portable(Tensor& img, Rng& degrade, const SynthSpec& spec) {
    const int S = img.shape[0];
    gaussian_blur(img, spec.blur_radius);
    for (double& v : img.data) v = 0.5 + (v - 0.5) * spec.contrast_factor;
    if (degrade.uniform() < spec.artifact_probability) {
        const int band = std::max(2, static_cast<int>(std::lround(S * degrade.uniform(0.06, 0.12))));
        const int y0 = static_cast<int>(degrade.uniform_int(static_cast<std::uint64_t>(S - band)));
        for (int y = y0; y < y0 + band; ++y)
            for (int x = 0; x < S; ++x) img.data[static_cast<std::size_t>(y * S + x)] += 0.25;
    }
    clamp_unit(img);
}

}  // namespace

Sample render_synthetic_sample(const SynthSpec& spec, PathologyClass cls, int index) {
    spec.validate();
    const int S = spec.image_size;
    const std::uint64_t i = static_cast<std::uint64_t>(index);
    Rng geo(derive_seed(spec.seed, kGeoTag, class_tag(cls), i));
    Rng noise(derive_seed(spec.seed, kNoiseTag, class_tag(cls), i));

    Sample s;
    s.label = cls;
    s.image = Tensor({S, S});
    s.mask = Tensor({S, S});
    if (spec.domain == SynthSpec::Domain::Source) {
        render_source(s.image, s.mask, geo, noise, S, spec.noise_level);
    } else {
        render_general(s.image, s.mask, cls, geo, noise, S, spec.noise_level);
        if (spec.domain == SynthSpec::Domain::Portable) {
            Rng degrade(derive_seed(spec.seed, kDegradeTag, class_tag(cls), i));
            degrade_portable(s.image, degrade, spec);
        }
    }
    return s;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    DatasetManifest manifest;
    manifest.provenance = "synthetic-" + domain_name(spec.domain);
    manifest.base_dir = out_dir;

    for (PathologyClass cls : all_classes()) {
        const auto it = spec.count_per_class.find(cls);
        if (it == spec.count_per_class.end()) continue;
        for (int i = 0; i < it->second; ++i) {
            const Sample s = render_synthetic_sample(spec, cls, i);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03d.png", class_label_name(cls).c_str(), i);
            const std::string image_rel = std::string("images/") + name;
            const std::string mask_rel = std::string("masks/") + name;
            write_png_gray((fs::path(out_dir) / image_rel).string(), from_unit_raster(s.image, 255));
            Tensor mask_raster = s.mask;  // {0,1} -> {0,255}
            write_png_gray((fs::path(out_dir) / mask_rel).string(), from_unit_raster(mask_raster, 255));
            manifest.entries.push_back({image_rel, mask_rel, cls});
        }
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
    return manifest;
}

SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot open synth spec '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("synth spec '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        SynthSpec spec;
        spec.domain = parse_domain(j.value("domain", "general"));
        if (j.contains("count_per_class")) {
            spec.count_per_class.clear();
            if (j["count_per_class"].is_number_integer()) {
                const int n = j["count_per_class"].get<int>();
                for (PathologyClass c : all_classes()) spec.count_per_class[c] = n;
            } else {
                for (PathologyClass c : all_classes()) {
                    const std::string name = class_label_name(c);
                    if (j["count_per_class"].contains(name))
                        spec.count_per_class[c] = j["count_per_class"][name].get<int>();
                }
            }
        }
        spec.image_size = j.value("image_size", spec.image_size);
        spec.noise_level = j.value("noise_level", spec.noise_level);
        spec.blur_radius = j.value("blur_radius", spec.blur_radius);
        spec.contrast_factor = j.value("contrast_factor", spec.contrast_factor);
        spec.artifact_probability = j.value("artifact_probability", spec.artifact_probability);
        spec.seed = j.value("seed", spec.seed);
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("synth spec '" + path + "' is malformed: " + e.what());
    }
}

void save_synth_spec(const SynthSpec& spec, const std::string& path) {
    nlohmann::json counts;
    for (const auto& [cls, n] : spec.count_per_class) counts[class_label_name(cls)] = n;
    const nlohmann::json j = {{"domain", domain_name(spec.domain)},
                              {"count_per_class", counts},
                              {"image_size", spec.image_size},
                              {"noise_level", spec.noise_level},
                              {"blur_radius", spec.blur_radius},
                              {"contrast_factor", spec.contrast_factor},
                              {"artifact_probability", spec.artifact_probability},
                              {"seed", spec.seed}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot write synth spec '" + path + "'");
    f << j.dump(2) << "\n";
}

}  // namespace xseg
