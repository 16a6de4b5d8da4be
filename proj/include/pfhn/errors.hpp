#pragma once

#include <stdexcept>
#include <string>

namespace pfhn {

// Dimension/layout disagreement between tensors or specs.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Invalid argument values or configuration.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error("validation error: " + msg) {}
};

// Malformed external input (files, config text).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

}  // namespace pfhn
