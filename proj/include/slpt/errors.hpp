#pragma once

#include <stdexcept>
#include <string>

namespace slpt {

/// Bad shapes, out-of-range indices, malformed configs.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values or zero norms where a finite, nonzero quantity is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an optimization loop diverges. `diagnostics` carries the
/// last finite loss terms and the step at which the failure was observed.
class TrainingFailure : public std::runtime_error {
public:
    TrainingFailure(const std::string& what, std::string diagnostics)
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
    const std::string& diagnostics() const noexcept { return diagnostics_; }

private:
    std::string diagnostics_;
};

/// Attempt to update or load into a parameter that is flagged frozen.
class FrozenParameterError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Every entry of a score column is zero, so max-normalization is undefined.
class DegenerateScores : public std::runtime_error {
public:
    DegenerateScores(const std::string& what, bool sd_degenerate, bool sg_degenerate)
        : std::runtime_error(what), sd_degenerate_(sd_degenerate), sg_degenerate_(sg_degenerate) {}
    bool sd_degenerate() const noexcept { return sd_degenerate_; }
    bool sg_degenerate() const noexcept { return sg_degenerate_; }

private:
    bool sd_degenerate_;
    bool sg_degenerate_;
};

} // namespace slpt
