#pragma once

#include <stdexcept>
#include <string>

namespace silverloop {

// Every failure surfaced by the library derives from Error. The kind string is
// stable and used by the CLI for its single-line machine-parseable errors.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error("validation", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& m) : Error("precondition", m) {}
};

struct InvalidLabelError : Error {
  explicit InvalidLabelError(const std::string& m) : Error("invalid_label", m) {}
};

struct DuplicateError : Error {
  explicit DuplicateError(const std::string& m) : Error("duplicate", m) {}
};

struct NotFoundError : Error {
  explicit NotFoundError(const std::string& m) : Error("not_found", m) {}
};

struct MisalignedError : Error {
  explicit MisalignedError(const std::string& m) : Error("misaligned", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

}  // namespace silverloop
