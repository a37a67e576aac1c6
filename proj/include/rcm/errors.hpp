#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rcm {

enum class Errc {
  invalid_argument,
  insertion_too_shallow,
  command_limit_exceeded,
  duration_cap_reached,
  empty_episode,
  rate_too_low,
  series_too_short,
  all_zero_signal,
  zero_peak_speed,
  schema_mismatch,
  malformed_row,
  non_monotone_time,
  config_mismatch,
  parse_error,
  io_failure,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::insertion_too_shallow: return "InsertionTooShallow";
    case Errc::command_limit_exceeded: return "CommandLimitExceeded";
    case Errc::duration_cap_reached: return "DurationCapReached";
    case Errc::empty_episode: return "EmptyEpisode";
    case Errc::rate_too_low: return "RateTooLow";
    case Errc::series_too_short: return "SeriesTooShort";
    case Errc::all_zero_signal: return "AllZeroSignal";
    case Errc::zero_peak_speed: return "ZeroPeakSpeed";
    case Errc::schema_mismatch: return "SchemaMismatch";
    case Errc::malformed_row: return "MalformedRow";
    case Errc::non_monotone_time: return "NonMonotoneTime";
    case Errc::config_mismatch: return "ConfigMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::io_failure: return "IoFailure";
  }
  return "Unknown";
}

/// Base of every error raised by the library. `code()` is stable API; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// A CSV or script row that could not be parsed. Rows are 1-based data rows.
class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t row, const std::string& what)
      : Error(Errc::malformed_row, "row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Failure inside a simulated episode; keeps the original code and the step index.
class EpisodeError : public Error {
 public:
  EpisodeError(const Error& cause, std::size_t step)
      : Error(cause.code(), "step " + std::to_string(step) + ": " + cause.what()), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace rcm
