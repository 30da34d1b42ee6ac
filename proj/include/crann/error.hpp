#pragma once

#include <stdexcept>
#include <string>

namespace crann {

// Coarse category used by the command-line front end to pick an exit code.
enum class ErrorKind { Usage, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CRANN_DEFINE_ERROR(Name, Kind)                                            \
  class Name : public Error {                                                     \
   public:                                                                        \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}      \
  };

CRANN_DEFINE_ERROR(DimensionError, Numeric)
CRANN_DEFINE_ERROR(ContractError, Usage)
CRANN_DEFINE_ERROR(NumericError, Numeric)
CRANN_DEFINE_ERROR(TrainingError, Numeric)
CRANN_DEFINE_ERROR(IngestionError, Data)
CRANN_DEFINE_ERROR(NormalizationError, Data)
CRANN_DEFINE_ERROR(WindowingError, Data)
CRANN_DEFINE_ERROR(PlanningError, Data)
CRANN_DEFINE_ERROR(MetricError, Data)
CRANN_DEFINE_ERROR(ConfigError, Usage)
CRANN_DEFINE_ERROR(CheckpointError, Data)

#undef CRANN_DEFINE_ERROR

}  // namespace crann
