#pragma once

#include <stdexcept>
#include <string>

namespace hpl {

/// Invalid or inconsistent configuration (bad thresholds, horizon shorter
/// than the scripted demonstration, malformed config files, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Caller misuse of an otherwise valid object (acting on a finished episode,
/// out-of-range action, empty dataset where one is required, ...).
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Request exceeds what the implementation can enumerate or solve exactly.
class CapabilityError : public std::runtime_error {
public:
    explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// A segmenter response failed structural validation. Carries the raw
/// response body so callers can log or surface it.
class ValidationError : public std::runtime_error {
public:
    ValidationError(const std::string& what, std::string raw_response)
        : std::runtime_error(what), raw(std::move(raw_response)) {}
    std::string raw;
};

/// Network-level failure talking to an external segmenter service.
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem-level failure (missing artifact, unwritable directory, ...).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace hpl
