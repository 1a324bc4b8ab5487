#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchguard {

/// Broad failure class; the CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  dimension,
  config,
  input,
  format,
  io,
  training,
  calibration,
  dependency,
  pipeline,
  check,
};

std::string_view category_name(ErrorCategory category);
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define PATCHGUARD_DEFINE_ERROR(Name, Category)                   \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& message)                     \
        : Error(ErrorCategory::Category, message) {}              \
  };

PATCHGUARD_DEFINE_ERROR(DimensionError, dimension)
PATCHGUARD_DEFINE_ERROR(ConfigError, config)
PATCHGUARD_DEFINE_ERROR(InputError, input)
PATCHGUARD_DEFINE_ERROR(FormatError, format)
PATCHGUARD_DEFINE_ERROR(IoError, io)
PATCHGUARD_DEFINE_ERROR(TrainingError, training)
PATCHGUARD_DEFINE_ERROR(CalibrationError, calibration)
PATCHGUARD_DEFINE_ERROR(DependencyError, dependency)
PATCHGUARD_DEFINE_ERROR(PipelineError, pipeline)

#undef PATCHGUARD_DEFINE_ERROR

}  // namespace patchguard
