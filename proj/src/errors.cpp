#include "patchguard/errors.hpp"

namespace patchguard {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::config: return "config";
    case ErrorCategory::input: return "input";
    case ErrorCategory::format: return "format";
    case ErrorCategory::io: return "io";
    case ErrorCategory::training: return "training";
    case ErrorCategory::calibration: return "calibration";
    case ErrorCategory::dependency: return "dependency";
    case ErrorCategory::pipeline: return "pipeline";
    case ErrorCategory::check: return "check";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::dependency: return 3;
    case ErrorCategory::format: return 4;
    case ErrorCategory::io: return 5;
    case ErrorCategory::training: return 6;
    case ErrorCategory::calibration: return 7;
    case ErrorCategory::pipeline: return 8;
    case ErrorCategory::dimension: return 9;
    case ErrorCategory::input: return 10;
    case ErrorCategory::check: return 11;
  }
  return 1;
}

}  // namespace patchguard
