#pragma once

#include <stdexcept>
#include <string>

namespace poigraph {

// Process exit codes shared by every CLI command.
enum class ExitCode : int {
  ok = 0,
  config = 1,
  data = 2,
  numerical = 3,
  partial = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define POIGRAPH_DEFINE_ERROR(Name, Code)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(what, ExitCode::Code) {} \
  };

POIGRAPH_DEFINE_ERROR(ConfigError, config)
POIGRAPH_DEFINE_ERROR(ArgumentError, config)
POIGRAPH_DEFINE_ERROR(IoError, data)
POIGRAPH_DEFINE_ERROR(FormatError, data)
POIGRAPH_DEFINE_ERROR(GenerationError, data)
POIGRAPH_DEFINE_ERROR(ConstructionError, data)
POIGRAPH_DEFINE_ERROR(SamplingError, data)
POIGRAPH_DEFINE_ERROR(FeatureError, data)
POIGRAPH_DEFINE_ERROR(CheckpointError, data)
POIGRAPH_DEFINE_ERROR(FitError, data)
POIGRAPH_DEFINE_ERROR(ShapeError, numerical)
POIGRAPH_DEFINE_ERROR(TrainingError, numerical)

#undef POIGRAPH_DEFINE_ERROR

}  // namespace poigraph
