#pragma once

#include <stdexcept>
#include <string>

namespace glam {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GLAM_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

GLAM_DEFINE_ERROR(ShapeError);
GLAM_DEFINE_ERROR(ConfigError);
GLAM_DEFINE_ERROR(StateError);
GLAM_DEFINE_ERROR(ValidationError);
GLAM_DEFINE_ERROR(FormatError);
GLAM_DEFINE_ERROR(TooShortError);
GLAM_DEFINE_ERROR(ParseError);
GLAM_DEFINE_ERROR(DivergenceError);
GLAM_DEFINE_ERROR(IOError);

#undef GLAM_DEFINE_ERROR

}  // namespace glam
