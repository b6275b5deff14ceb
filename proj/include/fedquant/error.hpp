#pragma once

#include <stdexcept>
#include <string>

namespace fedquant {

// Error categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  kShape,
  kNumeric,
  kConfig,
  kDiverged,
  kUsage,
  kIo,
  kAggregation,
  kDegenerate,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ShapeError(const std::string& msg) { return Error(ErrorKind::kShape, "shape error: " + msg); }
inline Error NumericError(const std::string& msg) { return Error(ErrorKind::kNumeric, "numeric error: " + msg); }
inline Error ConfigError(const std::string& msg) { return Error(ErrorKind::kConfig, "config error: " + msg); }
inline Error UsageError(const std::string& msg) { return Error(ErrorKind::kUsage, "usage error: " + msg); }
inline Error IoError(const std::string& msg) { return Error(ErrorKind::kIo, "i/o error: " + msg); }
inline Error AggregationError(const std::string& msg) {
  return Error(ErrorKind::kAggregation, "aggregation error: " + msg);
}
inline Error DegenerateError(const std::string& msg) {
  return Error(ErrorKind::kDegenerate, "degenerate tensor: " + msg);
}

// Raised when a client's local loss or the server update stops being finite.
class DivergedError : public Error {
 public:
  DivergedError(int round, int client, const std::string& msg)
      : Error(ErrorKind::kDiverged, "diverged at round " + std::to_string(round) +
                                        (client >= 0 ? ", client " + std::to_string(client) : std::string()) +
                                        ": " + msg),
        round_(round),
        client_(client) {}

  int round() const noexcept { return round_; }
  int client() const noexcept { return client_; }  // -1 for server-side divergence

 private:
  int round_;
  int client_;
};

}  // namespace fedquant
