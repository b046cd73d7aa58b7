#pragma once
// Exception types shared by every swinvib module. The CLI maps them onto
// process exit codes (validation -> 2, format -> 3).

#include <stdexcept>
#include <string>

namespace swinvib {

/// Precondition or contract violation on caller-supplied values.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Structured error for on-disk formats; `field()` names the offending header field.
class FormatError : public std::runtime_error {
public:
    FormatError(std::string field, const std::string& message)
        : std::runtime_error(message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Raised by the trainer when the optimisation cannot continue.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace swinvib
