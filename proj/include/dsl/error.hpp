#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsl {

// Bad configuration or argument. The message names the offending field.
class invalid_argument : public std::invalid_argument {
public:
  invalid_argument(const std::string &field, const std::string &what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

// Evaluation outside the interval where a quantity is defined.
class domain_error : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// The score (or a coefficient) divides by a vanishing noise level.
class singularity_error : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// A solver asked for schedule derivatives that are not valid where requested
// (e.g. the clamped region of the cosine schedule).
class unsupported_schedule : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed binary or text input. Carries the byte offset where parsing failed.
class format_error : public std::runtime_error {
public:
  format_error(const std::string &what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

// Too few usable points to fit a convergence slope.
class insufficient_data : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace dsl
