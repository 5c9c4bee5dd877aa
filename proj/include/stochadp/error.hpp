#pragma once

#include <stdexcept>
#include <string>

namespace stochadp {

/// Base class for every error raised by the library. The category decides
/// the exit code the command-line tool reports.
class Error : public std::runtime_error {
 public:
  enum class Category { kConfig, kNumerical, kNonConvergence };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

/// Invalid input: wrong dimensions, violated preconditions, bad config.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(Category::kConfig, what) {}
};

/// Singular operators, rank-deficient data, divergence, NaN.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(Category::kNumerical, what) {}
};

/// An iteration ran out of budget before meeting its tolerance.
class NonConvergenceError : public Error {
 public:
  explicit NonConvergenceError(const std::string& what)
      : Error(Category::kNonConvergence, what) {}
};

}  // namespace stochadp
