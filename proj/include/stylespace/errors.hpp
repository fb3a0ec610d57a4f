#pragma once

#include <stdexcept>
#include <string>

namespace stylespace {

// Shape disagreement between operands or against a fixed architecture.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's mathematical domain (e.g. log of a non-positive value).
class DomainError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// NaN/Inf surfaced during a computation that required finite values.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed or corrupt on-disk data.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Missing or unreadable input data.
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace stylespace
