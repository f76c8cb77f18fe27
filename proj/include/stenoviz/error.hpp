#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stenoviz {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument is outside its documented domain.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Tensor or volume shapes do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed file header. Carries the byte offset of the offending line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

/// Header and payload disagree (e.g. declared sizes vs data length).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Operation invoked in the wrong order (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

/// Requested work exceeds the configured memory budget.
class ResourceError : public Error {
public:
    using Error::Error;
};

/// A click found no foreground voxel within the snap radius.
class SelectionMiss : public Error {
public:
    using Error::Error;
};

/// Phantom spec cannot be realized.
class SpecError : public Error {
public:
    using Error::Error;
};

/// Training loss became NaN.
class DivergenceError : public Error {
public:
    explicit DivergenceError(long iteration)
        : Error("training diverged (loss is NaN) at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

}  // namespace stenoviz
