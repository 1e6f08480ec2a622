#pragma once

#include <stdexcept>
#include <string>

namespace aptmcl {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map them to a nonzero exit code in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

#define APTMCL_DEFINE_ERROR(Name)   \
  class Name : public Error {       \
   public:                          \
    using Error::Error;             \
  };

APTMCL_DEFINE_ERROR(SchemaError)
APTMCL_DEFINE_ERROR(IntegrityError)
APTMCL_DEFINE_ERROR(LookupError)
APTMCL_DEFINE_ERROR(DimensionError)
APTMCL_DEFINE_ERROR(DivergenceError)
APTMCL_DEFINE_ERROR(DegenerateDataError)
APTMCL_DEFINE_ERROR(ColdStartError)
APTMCL_DEFINE_ERROR(ClassStarvationError)
APTMCL_DEFINE_ERROR(StateError)
APTMCL_DEFINE_ERROR(InputError)
APTMCL_DEFINE_ERROR(ConfigError)
APTMCL_DEFINE_ERROR(ArtifactError)

#undef APTMCL_DEFINE_ERROR

}  // namespace aptmcl
