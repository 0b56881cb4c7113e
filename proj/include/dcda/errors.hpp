#ifndef DCDA_ERRORS_HPP
#define DCDA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dcda {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DCDA_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

DCDA_DEFINE_ERROR(ShapeError);
DCDA_DEFINE_ERROR(RangeError);
DCDA_DEFINE_ERROR(NonFiniteError);
DCDA_DEFINE_ERROR(StateError);
DCDA_DEFINE_ERROR(IOError);
DCDA_DEFINE_ERROR(LayoutError);
DCDA_DEFINE_ERROR(LabelError);
DCDA_DEFINE_ERROR(ExhaustedError);
DCDA_DEFINE_ERROR(DegenerateError);
DCDA_DEFINE_ERROR(ConfigError);

#undef DCDA_DEFINE_ERROR

}  // namespace dcda

#endif  // DCDA_ERRORS_HPP
