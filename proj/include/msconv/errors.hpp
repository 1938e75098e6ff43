#pragma once

#include <stdexcept>
#include <string>

namespace msconv {

// Error taxonomy. The CLI maps these onto distinct process exit codes:
// IoError -> 2, SchemaError (and ShapeError) -> 3, NumericalError -> 4.

/// File-level failure: missing file, bad magic, truncated payload, unknown dtype.
class IoError : public std::runtime_error {
public:
    enum class Code { Open = 1, BadMagic, Truncated, UnknownDtype, Write };

    IoError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

/// Structural violation: invalid config/manifest fields, unknown names.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/channel arithmetic violation in an operation.
class ShapeError : public SchemaError {
public:
    explicit ShapeError(const std::string& msg) : SchemaError(msg) {}
};

/// Non-finite value produced, or a numeric check failed.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace msconv
