#pragma once

#include <stdexcept>
#include <string>

namespace batchcp {

/// Malformed or inconsistent input (files, parameters, dimensions).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested work exceeds the configured enumeration budget.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A valid request that the chosen method cannot serve (e.g. a non-monotone
/// m0 estimator handed to the shortcut).
class Unsupported : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace batchcp
