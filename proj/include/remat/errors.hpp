#pragma once

#include <stdexcept>
#include <string>

#include "remat/types.hpp"

namespace remat {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DanglingDependency : ValidationError {
    using ValidationError::ValidationError;
};

struct ForgetAbsent : ValidationError {
    using ValidationError::ValidationError;
};

struct DoubleLoss : ValidationError {
    using ValidationError::ValidationError;
};

struct BudgetExceeded : std::runtime_error {
    BudgetExceeded(const std::string& what, Bytes by) : std::runtime_error(what), excess(by) {}
    Bytes excess = 0;
};

struct ModelTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolutionInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SearchExploded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleBudget : std::runtime_error {
    InfeasibleBudget(const std::string& what, Bytes min_feasible = -1)
        : std::runtime_error(what), min_feasible_budget(min_feasible) {}
    Bytes min_feasible_budget = -1;  // -1 when unknown
};

struct DisconnectedInput : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace remat
