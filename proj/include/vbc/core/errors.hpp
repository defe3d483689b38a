#pragma once

#include <stdexcept>
#include <string>

namespace vbc {

//! Input does not match the expected variable schema (missing column, bad
//! variable kind, mismatched dimensions).
class SchemaError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A cell or field could not be parsed. Carries the 1-based data row.
class ParseError : public std::runtime_error
{
public:
  ParseError(const std::string& msg, std::size_t row)
    : std::runtime_error(msg)
    , row_(row)
  {}
  std::size_t row() const { return row_; }

private:
  std::size_t row_;
};

//! Timestamps within a member are not strictly increasing.
class OrderingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A statistical estimate could not be formed from the data.
class EstimationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Evaluation outside of the mathematical domain of a formula.
class DomainError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

//! Invalid run configuration.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

} // namespace vbc
