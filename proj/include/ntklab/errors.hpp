#pragma once

#include <stdexcept>
#include <string>

namespace ntklab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A recursion produced a non-finite value. `layer` is -1 when the failing
/// step was called outside a layer sweep.
class OverflowError : public Error {
public:
    OverflowError(const std::string& what, int layer = -1)
        : Error(layer >= 0 ? what + " (layer " + std::to_string(layer) + ")" : what),
          layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

/// A correlation fell outside [-1-eps, 1+eps]; indicates an upstream bug.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Fixed-point iteration failed to converge.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double last_iterate)
        : Error(what), last_iterate_(last_iterate) {}
    double last_iterate() const noexcept { return last_iterate_; }

private:
    double last_iterate_;
};

/// A symmetric positive-definite solve failed even at the largest jitter.
class IllConditionedError : public Error {
public:
    IllConditionedError(const std::string& what, double final_jitter)
        : Error(what), final_jitter_(final_jitter) {}
    double final_jitter() const noexcept { return final_jitter_; }

private:
    double final_jitter_;
};

/// Dimension or length mismatch between arguments.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed file content (IDX headers, checkpoints, records).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration; the CLI maps this to exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace ntklab
