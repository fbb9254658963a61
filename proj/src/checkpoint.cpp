#include "xseg/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "xseg/error.hpp"

namespace xseg {

namespace {

using Kind = CheckpointError::Kind;

void append_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t read_u32(const std::string& buf, std::size_t pos) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + 3])) << 24);
}

void append_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32(out, bits);
}

float read_f32(const std::string& buf, std::size_t pos) {
    const std::uint32_t bits = read_u32(buf, pos);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

std::string shape_csv(const std::vector<int>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int> parse_shape_csv(const std::string& s) {
    std::vector<int> shape;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) shape.push_back(std::stoi(tok));
    return shape;
}

std::string sanitize_provenance(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

void save_checkpoint(UNet& model, const std::string& path, const std::string& provenance) {
    const ModelConfig& cfg = model.config();
    auto state = model.named_state();

    std::string header;
    header += "config.in_channels " + std::to_string(cfg.in_channels) + "\n";
    header += "config.out_channels " + std::to_string(cfg.out_channels) + "\n";
    header += "config.base_width " + std::to_string(cfg.base_width) + "\n";
    header += "config.depth " + std::to_string(cfg.depth) + "\n";
    header += "config.input_size " + std::to_string(cfg.input_size) + "\n";
    header += "provenance " + sanitize_provenance(provenance) + "\n";
    header += "params " + std::to_string(state.size()) + "\n";
    std::size_t offset = 0;
    for (const StateRef& ref : state) {
        const std::size_t bytes = 4 * ref.values->size();
        header += "param " + ref.name + " " + shape_csv(ref.shape) + " " + std::to_string(offset) +
                  " " + std::to_string(bytes) + "\n";
        offset += bytes;
    }
    header += "end\n";

    std::string blob;
    blob.reserve(12 + header.size() + offset);
    blob += kCheckpointMagic;
    append_u32(blob, kCheckpointVersion);
    append_u32(blob, static_cast<std::uint32_t>(header.size()));
    blob += header;
    for (const StateRef& ref : state)
        for (double v : *ref.values) append_f32(blob, static_cast<float>(v));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError(Kind::Io, "cannot open '" + tmp + "' for writing");
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!f) throw CheckpointError(Kind::Io, "short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

namespace {

struct ParsedFile {
    CheckpointMeta meta;
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::size_t offset;
        std::size_t bytes;
    };
    std::vector<Entry> entries;
    std::string payload;
};

ParsedFile parse_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(Kind::Io, "cannot open checkpoint '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string blob = buf.str();

    if (blob.size() < 12 || blob.compare(0, 4, kCheckpointMagic) != 0)
        throw CheckpointError(Kind::Corrupt, "'" + path + "' is not a checkpoint (bad magic)");
    ParsedFile out;
    out.meta.version = read_u32(blob, 4);
    if (out.meta.version != kCheckpointVersion)
        throw CheckpointError(Kind::VersionMismatch,
                              "checkpoint version " + std::to_string(out.meta.version) +
                                  " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::size_t header_size = read_u32(blob, 8);
    if (12 + header_size > blob.size())
        throw CheckpointError(Kind::Corrupt, "truncated checkpoint header in '" + path + "'");
    const std::string header = blob.substr(12, header_size);
    out.payload = blob.substr(12 + header_size);

    std::map<std::string, std::string> kv;
    std::stringstream hs(header);
    std::string line;
    std::size_t declared = 0;
    bool saw_end = false;
    while (std::getline(hs, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos)
            throw CheckpointError(Kind::Corrupt, "malformed checkpoint header line '" + line + "'");
        const std::string key = line.substr(0, sp);
        const std::string rest = line.substr(sp + 1);
        if (key == "param") {
            std::stringstream ps(rest);
            ParsedFile::Entry e;
            std::string shape_str, off_str, bytes_str;
            if (!(ps >> e.name >> shape_str >> off_str >> bytes_str))
                throw CheckpointError(Kind::Corrupt, "malformed param line '" + line + "'");
            e.shape = parse_shape_csv(shape_str);
            e.offset = std::stoull(off_str);
            e.bytes = std::stoull(bytes_str);
            out.entries.push_back(std::move(e));
        } else if (key == "params") {
            declared = std::stoull(rest);
        } else {
            kv[key] = rest;
        }
    }
    if (!saw_end) throw CheckpointError(Kind::Corrupt, "checkpoint header missing end marker");
    if (declared != out.entries.size())
        throw CheckpointError(Kind::Corrupt, "checkpoint declares " + std::to_string(declared) +
                                                 " params but lists " +
                                                 std::to_string(out.entries.size()));
    try {
        out.meta.config.in_channels = std::stoi(kv.at("config.in_channels"));
        out.meta.config.out_channels = std::stoi(kv.at("config.out_channels"));
        out.meta.config.base_width = std::stoi(kv.at("config.base_width"));
        out.meta.config.depth = std::stoi(kv.at("config.depth"));
        out.meta.config.input_size = std::stoi(kv.at("config.input_size"));
    } catch (const std::out_of_range&) {
        throw CheckpointError(Kind::Corrupt, "checkpoint header missing config fields");
    }
    if (auto it = kv.find("provenance"); it != kv.end()) out.meta.provenance = it->second;
    return out;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& path) { return parse_checkpoint(path).meta; }

UNet load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected_config) {
    ParsedFile file = parse_checkpoint(path);
    if (expected_config && !(*expected_config == file.meta.config))
        throw CheckpointError(Kind::ConfigMismatch,
                              "checkpoint config does not match the expected model config");

    UNet model = UNet::build(file.meta.config, 0);
    auto state = model.named_state();
    std::map<std::string, StateRef*> by_name;
    for (StateRef& ref : state) by_name[ref.name] = &ref;

    std::size_t filled = 0;
    for (const ParsedFile::Entry& e : file.entries) {
        auto it = by_name.find(e.name);
        if (it == by_name.end())
            throw CheckpointError(Kind::UnknownParam,
                                  "checkpoint contains unknown parameter '" + e.name + "'");
        StateRef* ref = it->second;
        if (e.shape != ref->shape)
            throw CheckpointError(Kind::ConfigMismatch,
                                  "parameter '" + e.name + "' has shape " + shape_to_string(e.shape) +
                                      " but the model expects " + shape_to_string(ref->shape));
        if (e.bytes != 4 * ref->values->size() || e.offset + e.bytes > file.payload.size())
            throw CheckpointError(Kind::Corrupt, "parameter '" + e.name + "' payload out of range");
        for (std::size_t i = 0; i < ref->values->size(); ++i)
            (*ref->values)[i] = static_cast<double>(read_f32(file.payload, e.offset + 4 * i));
        ++filled;
    }
    if (filled != state.size())
        throw CheckpointError(Kind::Corrupt, "checkpoint misses " +
                                                 std::to_string(state.size() - filled) +
                                                 " model parameters");
    model.mark_batchnorm_initialized();
    return model;
}

}  // namespace xseg
