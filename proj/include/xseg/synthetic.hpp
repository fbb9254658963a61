#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "xseg/manifest.hpp"

namespace xseg {

// Desk-scale dataset generator covering three image regimes: a "source"
// domain (one bright lesion on a dark textured background), a "general"
// domain (two dark lung-shaped ellipses on a bright noisy background with
// class-dependent interior texture), and a "portable" domain (the general
// recipe degraded by blur, contrast compression and an occasional bright
// band; masks unchanged). At equal seeds, general and portable samples share
// their per-sample geometry, so degradation effects can be measured pairwise.
struct SynthSpec {
    enum class Domain { Source, General, Portable };

    Domain domain = Domain::General;
    std::map<PathologyClass, int> count_per_class = {{PathologyClass::Covid, 1},
                                                     {PathologyClass::Normal, 1},
                                                     {PathologyClass::Pathological, 1}};
    int image_size = 64;
    double noise_level = 0.05;
    double blur_radius = 2.0;         // Gaussian sigma in pixels (portable only)
    double contrast_factor = 0.6;     // portable only
    double artifact_probability = 0.2;  // portable only
    std::uint64_t seed = 0;

    void validate() const;
};

std::string domain_name(SynthSpec::Domain d);
SynthSpec::Domain parse_domain(const std::string& name);

// Renders one sample in memory (used by the generator and by tests).
Sample render_synthetic_sample(const SynthSpec& spec, PathologyClass cls, int index);

// Writes images/, masks/ and manifest.txt under out_dir; returns the loaded
// manifest. Fully deterministic: the same spec produces byte-identical files.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

// JSON codec for spec files. count_per_class accepts either a single integer
// (balanced classes) or a {covid, normal, pathological} object.
SynthSpec load_synth_spec(const std::string& path);
void save_synth_spec(const SynthSpec& spec, const std::string& path);

}  // namespace xseg
