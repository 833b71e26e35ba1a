#pragma once

#include <stdexcept>
#include <string>

namespace coevo {

enum class Errc {
  empty_matrix,
  non_finite_entry,
  out_of_range_entry,
  dimension_mismatch,
  duplicate_id,
  zero_rows,
  malformed_level,
  out_of_bounds,
  launch_failure,
  family_mismatch,
  empty_candidates,
  generation_exhausted,
  iteration_out_of_range,
  missing_checkpoint,
  config_error,
  parse_error,
  run_locked,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::empty_matrix: return "EmptyMatrix";
    case Errc::non_finite_entry: return "NonFiniteEntry";
    case Errc::out_of_range_entry: return "OutOfRangeEntry";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::zero_rows: return "ZeroRows";
    case Errc::malformed_level: return "MalformedLevel";
    case Errc::out_of_bounds: return "OutOfBounds";
    case Errc::launch_failure: return "LaunchFailure";
    case Errc::family_mismatch: return "FamilyMismatch";
    case Errc::empty_candidates: return "EmptyCandidates";
    case Errc::generation_exhausted: return "GenerationExhausted";
    case Errc::iteration_out_of_range: return "IterationOutOfRange";
    case Errc::missing_checkpoint: return "MissingCheckpoint";
    case Errc::config_error: return "ConfigError";
    case Errc::parse_error: return "ParseError";
    case Errc::run_locked: return "RunLocked";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace coevo
