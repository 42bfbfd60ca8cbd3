#pragma once

#include <stdexcept>
#include <string>

namespace mcan {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MCAN_DEFINE_ERROR(Name)            \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

MCAN_DEFINE_ERROR(DimensionError);
MCAN_DEFINE_ERROR(ContractError);
MCAN_DEFINE_ERROR(LookupError);
MCAN_DEFINE_ERROR(DegenerateRowError);
MCAN_DEFINE_ERROR(ParseError);
MCAN_DEFINE_ERROR(ValidationError);
MCAN_DEFINE_ERROR(IoError);
MCAN_DEFINE_ERROR(ConfigError);
MCAN_DEFINE_ERROR(SamplingError);
MCAN_DEFINE_ERROR(AblationError);
MCAN_DEFINE_ERROR(CheckpointError);
MCAN_DEFINE_ERROR(CompletionError);

#undef MCAN_DEFINE_ERROR

}  // namespace mcan
