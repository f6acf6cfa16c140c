#pragma once

#include <stdexcept>
#include <string>

namespace stc {

/// Base error. The category maps onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { config = 2, data = 3, numerical = 4 };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  Category category_;
};

/// Invalid arguments, hyper-parameters or configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::config, what) {}
};

/// Malformed, truncated or inconsistent input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::data, what) {}
};

/// Solver breakdown: divergence, degenerate factorization, unmet guards.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(Category::numerical, what) {}
};

}  // namespace stc
