#pragma once

#include <stdexcept>
#include <string>

namespace mkv {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Inconsistent or incomplete configuration (missing derivative, bad key, ...).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace mkv
