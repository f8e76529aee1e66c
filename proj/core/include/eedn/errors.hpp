#pragma once

#include <stdexcept>
#include <string>

namespace eedn {

/// Invalid user-supplied configuration (CLI config file, SynthConfig, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure while reading an on-disk artifact (activations, checkpoints, ...).
class LoadError : public std::runtime_error {
public:
    explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

/// Training loss became non-finite.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace eedn
