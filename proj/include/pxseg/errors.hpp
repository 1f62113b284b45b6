#pragma once

#include <stdexcept>
#include <string>

namespace pxseg {

// Shape/contract violations (mismatched dims, bad config wiring).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files, bad configs, empty inputs.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected in a forward or backward pass.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace pxseg
