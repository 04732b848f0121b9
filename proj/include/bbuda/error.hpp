#pragma once

#include <stdexcept>
#include <string>

namespace bbuda {

// Error hierarchy. The CLI maps each category to a distinct exit code,
// so library code should throw the most specific type that applies.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / broadcasting violations.
struct shape_error : error {
    using error::error;
};

// Bad argument values, non-finite inputs, out-of-range schedule queries.
struct value_error : error {
    using error::error;
};

// Invalid spatial geometry (conv kernel larger than input, pool divisibility,
// infeasible lesion placement).
struct geometry_error : error {
    using error::error;
};

// Config file / --set override problems.
struct config_error : error {
    using error::error;
};

// Filesystem problems: missing files, unreadable/unwritable paths.
struct io_error : error {
    using error::error;
};

// On-disk format violations: bad magic, version mismatch, checksum failure.
struct format_error : error {
    using error::error;
};

// Teacher wire-protocol failures: connect, timeout, malformed frames.
struct protocol_error : error {
    using error::error;
};

}  // namespace bbuda
