#pragma once

#include <stdexcept>
#include <string>

namespace pricequant {

// All library failures derive from Error so callers (the CLI in particular)
// can map them to a nonzero exit with one handler.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define PRICEQUANT_DEFINE_ERROR(Name)         \
  class Name : public Error {                 \
  public:                                     \
    using Error::Error;                       \
  }

PRICEQUANT_DEFINE_ERROR(DomainError);
PRICEQUANT_DEFINE_ERROR(ConfigError);
PRICEQUANT_DEFINE_ERROR(ValidationError);
PRICEQUANT_DEFINE_ERROR(ShapeError);
PRICEQUANT_DEFINE_ERROR(StateError);
PRICEQUANT_DEFINE_ERROR(IoError);
PRICEQUANT_DEFINE_ERROR(CheckpointError);
PRICEQUANT_DEFINE_ERROR(UsageError);
PRICEQUANT_DEFINE_ERROR(SolverError);
PRICEQUANT_DEFINE_ERROR(NumericError);

#undef PRICEQUANT_DEFINE_ERROR

}  // namespace pricequant
