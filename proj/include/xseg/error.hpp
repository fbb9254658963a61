#pragma once

#include <stdexcept>
#include <string>

namespace xseg {

// Base for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, bad usage, malformed or mismatched inputs. Exit code 2.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing/unreadable files, bad image data, unknown labels. Exit code 2.
struct DataError : Error {
    enum class Kind { MissingFile, MalformedImage, UnknownLabel, BadManifest };
    Kind kind;
    DataError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Deliberate refusal to touch existing filesystem state. Exit code 3.
struct RefusalError : Error {
    explicit RefusalError(const std::string& msg) : Error(msg) {}
};

// Non-finite losses and other numeric failures. Exit code 4.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Checkpoint file problems, each a distinct kind for targeted handling.
struct CheckpointError : Error {
    enum class Kind { Corrupt, VersionMismatch, ConfigMismatch, UnknownParam, Io };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace xseg
