#pragma once

#include <stdexcept>
#include <string>

namespace lazyllm {

/// Base class for every error raised by the runtime.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid model configuration, schedule or command-line option.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller supplied out-of-range or inconsistent input data.
class InputError : public Error {
public:
    using Error::Error;
};

/// Weight file is malformed (magic, version, checksum, tensor directory).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// A softmax row has no visible entry.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

/// A cache or ledger contract was broken. These are programming bugs, never
/// recoverable conditions.
class InvariantViolation : public Error {
public:
    using Error::Error;
};

/// Requested KV rows are not present at the layer (the token needs revival).
class MissingKvError : public InvariantViolation {
public:
    using InvariantViolation::InvariantViolation;
};

/// No Aux Cache entry at the requested (layer, token).
class MissingAuxError : public InvariantViolation {
public:
    using InvariantViolation::InvariantViolation;
};

}  // namespace lazyllm
