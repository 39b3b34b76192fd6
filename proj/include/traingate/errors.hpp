#pragma once

#include <stdexcept>
#include <string>

namespace traingate {

// Invalid configuration value; the message names the offending field.
// Mapped to CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / permission failures. Mapped to CLI exit code 3.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; carries a 1-based line number when known.
struct ParseError : IoError {
    ParseError(const std::string& what, long line = -1)
        : IoError(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_number(line) {}
    long line_number;
};

// Structurally valid input missing a required field; names the field.
struct SchemaError : ParseError {
    SchemaError(const std::string& field, long line = -1)
        : ParseError("missing required field \"" + field + "\"", line), field_name(field) {}
    std::string field_name;
};

// Operation incompatible with the object's current state (e.g. restoring a
// snapshot taken from a different architecture).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// A report was requested without the baseline runs it needs.
// Mapped to CLI exit code 4.
struct MissingBaselineError : std::runtime_error {
    explicit MissingBaselineError(const std::string& baseline)
        : std::runtime_error("missing baseline runs: " + baseline), baseline_name(baseline) {}
    std::string baseline_name;
};

}  // namespace traingate
