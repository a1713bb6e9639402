#pragma once

#include <stdexcept>
#include <string>

namespace vad {

// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
    NotFound,        // missing file or directory
    Format,          // malformed on-disk data
    InvalidInput,    // caller violated an operation precondition
    OutOfRange,      // index outside the valid range
    InvalidTransform,
    InvalidSpec,
    Curation,        // pair curation cannot proceed (e.g. no dissimilar class)
    EmptyRegion,
    ModelMismatch,   // fingerprint chain broken
    UnusableModel,   // model fails a sanity check (p0 >= insert threshold)
    Configuration,
    MissingArtifact,
    UndefinedMetric, // single-class ground truth
    Io,
    Numeric,         // non-finite value escaped a computation
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    // Exit codes: 2 configuration, 3 data/format, 4 numeric failure.
    int exit_code() const noexcept {
        switch (kind_) {
            case ErrorKind::Configuration:
            case ErrorKind::ModelMismatch:
            case ErrorKind::UnusableModel:
            case ErrorKind::InvalidInput:
            case ErrorKind::InvalidTransform:
            case ErrorKind::InvalidSpec:
            case ErrorKind::OutOfRange:
            case ErrorKind::UndefinedMetric:
                return 2;
            case ErrorKind::NotFound:
            case ErrorKind::Format:
            case ErrorKind::Curation:
            case ErrorKind::EmptyRegion:
            case ErrorKind::MissingArtifact:
            case ErrorKind::Io:
                return 3;
            case ErrorKind::Numeric:
                return 4;
        }
        return 1;
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace vad
