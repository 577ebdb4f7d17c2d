#pragma once

#include <stdexcept>
#include <string>

namespace structgp {

/// Numerical breakdown inside a filtering/eigendecomposition sweep.
/// Carries the chain step (or grid dimension) where it happened.
class IllConditionedError : public std::runtime_error {
public:
    IllConditionedError(const std::string& what, long step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Iterative scheme failed to reach its tolerance within the sweep budget.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double last_change)
        : std::runtime_error(what + " (last change " + std::to_string(last_change) + ")"),
          last_change_(last_change) {}
    double last_change() const noexcept { return last_change_; }

private:
    double last_change_;
};

/// Projection Xw collapsed to a (near-)constant column.
class DegenerateProjectionError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation requires a fitted model.
class NotFittedError : public std::logic_error {
    using std::logic_error::logic_error;
};

/// Incompatible array shapes; message names the offending dimension.
class ShapeError : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace structgp
