#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stindex {

/// Base of every error the library throws. `user_facing()` separates bad
/// input (CLI exit 1) from internal failures (CLI exit 2).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, bool user_facing = true)
        : std::runtime_error(what), user_facing_(user_facing) {}

    bool user_facing() const noexcept { return user_facing_; }

private:
    bool user_facing_;
};

// schema_config
class SyntaxError : public Error {
public:
    using Error::Error;
};

class SchemaViolation : public Error {
public:
    using Error::Error;
};

// ingest
class FetchError : public Error {
public:
    using Error::Error;
};

class UnsupportedFormat : public Error {
public:
    using Error::Error;
};

class EmptyDocument : public Error {
public:
    using Error::Error;
};

class InvalidChunkParams : public Error {
public:
    using Error::Error;
};

// llm_gateway
class ContextOverflow : public Error {
public:
    using Error::Error;
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class AuthError : public Error {
public:
    using Error::Error;
};

/// A non-auth 4xx from the provider; never retried.
class RequestRejected : public Error {
public:
    using Error::Error;
};

class ReplayMiss : public Error {
public:
    using Error::Error;
};

class PayloadUnparseable : public Error {
public:
    using Error::Error;
};

// temporal_norm
class BadIso : public Error {
public:
    BadIso(const std::string& what, std::size_t position)
        : Error(what + " (at position " + std::to_string(position) + ")"), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class UnresolvableExpression : public Error {
public:
    using Error::Error;
};

// analytics / evaluation
class EmptyInput : public Error {
public:
    using Error::Error;
};

class NoMeasurablePairs : public Error {
public:
    using Error::Error;
};

class KeyMismatch : public Error {
public:
    using Error::Error;
};

// store
class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace stindex
