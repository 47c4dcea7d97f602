#pragma once

#include <stdexcept>
#include <string>

namespace timely {

enum class ErrorKind {
  kDimension,
  kContract,
  kConfig,
  kInput,
  kState,
  kTask,
  kCheckpoint,
  kTraining,
  kUsage,
};

const char* to_string(ErrorKind kind);

// Base of every exception thrown by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TIMELY_DEFINE_ERROR(Name, Kind)                                      \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TIMELY_DEFINE_ERROR(DimensionError, kDimension)
TIMELY_DEFINE_ERROR(ContractError, kContract)
TIMELY_DEFINE_ERROR(ConfigError, kConfig)
TIMELY_DEFINE_ERROR(InputError, kInput)
TIMELY_DEFINE_ERROR(StateError, kState)
TIMELY_DEFINE_ERROR(TaskError, kTask)
TIMELY_DEFINE_ERROR(CheckpointError, kCheckpoint)
TIMELY_DEFINE_ERROR(TrainingError, kTraining)
TIMELY_DEFINE_ERROR(UsageError, kUsage)

#undef TIMELY_DEFINE_ERROR

}  // namespace timely
