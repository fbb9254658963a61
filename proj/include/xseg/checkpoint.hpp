#pragma once

#include <optional>
#include <string>

#include "xseg/unet.hpp"

namespace xseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[5] = "XSEG";

// File layout (all integers little-endian):
//   bytes 0..3   magic "XSEG"
//   bytes 4..7   u32 format version
//   bytes 8..11  u32 header byte length H
//   bytes 12..   H bytes of ASCII header, then contiguous float32 payload
// Header lines: config.* fields, provenance, "params N", N lines of
//   "param <name> <d0,d1,...> <payload-offset> <byte-length>", then "end".
// Payload offsets are relative to the payload start and contiguous in header
// order. Saving is canonical: the same model state always produces the same
// bytes, so save -> load -> save round-trips identically.

struct CheckpointMeta {
    std::uint32_t version = kCheckpointVersion;
    ModelConfig config;
    std::string provenance;
};

void save_checkpoint(UNet& model, const std::string& path, const std::string& provenance);

UNet load_checkpoint(const std::string& path,
                     const std::optional<ModelConfig>& expected_config = std::nullopt);

CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace xseg
