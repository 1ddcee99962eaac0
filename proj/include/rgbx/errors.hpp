#pragma once

#include <stdexcept>

namespace rgbx {

// Validation failures use std::invalid_argument; I/O failures use IoError.
// The CLI maps them to exit codes 1 and 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace rgbx
