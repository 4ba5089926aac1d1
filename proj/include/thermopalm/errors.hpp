#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace thermopalm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input outside a physical or actuator limit (current, temperature).
class LimitViolation : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument (zero flow, bad gains, bad dt).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class SimulationDiverged : public Error {
public:
    using Error::Error;
};

class CalibrationFailed : public Error {
public:
    CalibrationFailed(const std::string& what, double warm_residual, double cool_residual)
        : Error(what), warm_residual_(warm_residual), cool_residual_(cool_residual) {}

    /// Relative rise-time errors of the best candidate found.
    double warm_residual() const noexcept { return warm_residual_; }
    double cool_residual() const noexcept { return cool_residual_; }

private:
    double warm_residual_;
    double cool_residual_;
};

/// Serial frame failed validation. offset() is the byte that was rejected.
class FrameRejected : public Error {
public:
    FrameRejected(const std::string& what, std::size_t offset)
        : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Pattern / profile / config file failed schema validation.
class SchemaError : public Error {
public:
    SchemaError(const std::string& field, const std::string& message, int line = 0)
        : Error(format(field, message, line)), field_(field), line_(line) {}
    const std::string& field() const noexcept { return field_; }
    int line() const noexcept { return line_; }

private:
    static std::string format(const std::string& field, const std::string& message, int line) {
        std::string s = field.empty() ? message : field + ": " + message;
        if (line > 0) s += " (line " + std::to_string(line) + ")";
        return s;
    }
    std::string field_;
    int line_;
};

/// Several validation problems reported together.
class ValidationErrors : public Error {
public:
    explicit ValidationErrors(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid configuration:";
        for (const auto& e : p) s += "\n  - " + e;
        return s;
    }
    std::vector<std::string> problems_;
};

/// Staircase or protocol state machine asked to do something out of order.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Backend link failed (timeout, disconnect, bad reply).
class BackendFault : public Error {
public:
    using Error::Error;
};

}  // namespace thermopalm
