#pragma once

#include <stdexcept>
#include <string>

namespace scas {

enum class ErrorKind {
  kInvalidInput,
  kPrecondition,
  kInstanceTooLarge,
  kShapeMismatch,
  kConfig,
  kIo,
  kUntrainedModel,
  kMismatch,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace scas
