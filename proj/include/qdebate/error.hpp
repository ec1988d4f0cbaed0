#pragma once

#include <stdexcept>
#include <string>

namespace qdebate {

/// Process exit codes shared by every CLI subcommand.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    config = 2,
    data = 3,
    transport = 4,
    incomplete_adjudication = 5,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::failure; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

/// Malformed or inconsistent input data (run files, qrels, corpus records).
class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class TransportError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::transport; }
};

/// Non-success HTTP status that is not retried (or whose retry budget ran out).
class StatusError : public TransportError {
public:
    StatusError(int status, std::string body_excerpt)
        : TransportError("endpoint returned status " + std::to_string(status) + ": " + body_excerpt),
          status_(status), body_(std::move(body_excerpt)) {}
    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

/// Model output that does not satisfy the structured-output contract.
class MalformedReply : public Error {
public:
    MalformedReply(const std::string& why, std::string raw)
        : Error("malformed reply: " + why), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class IncompleteAdjudication : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::incomplete_adjudication; }
};

} // namespace qdebate
