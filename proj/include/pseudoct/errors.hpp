#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pseudoct {

// Bad input data: malformed files, inconsistent headers, channel mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fitting or inference produced something that cannot be continued from.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A latent class lost (almost) all of its responsibility mass, or its
// covariance could not be regularized into positive definiteness.
class DegenerateClassError : public NumericalError {
 public:
  static constexpr std::size_t kUnknownClass = static_cast<std::size_t>(-1);

  DegenerateClassError(std::size_t class_index, const std::string& what)
      : NumericalError(class_index == kUnknownClass
                           ? what
                           : "class " + std::to_string(class_index) + ": " + what),
        class_index_(class_index) {}

  std::size_t class_index() const noexcept { return class_index_; }

 private:
  std::size_t class_index_;
};

}  // namespace pseudoct
