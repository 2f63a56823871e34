#pragma once

#include <stdexcept>
#include <string>

namespace sq {

// Error taxonomy. Every failure mode the CLI maps to an exit code has its own
// type; everything else surfaces as RuntimeError.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files: bad PLY header, truncated payload, invalid JSON.
struct FormatError : Error {
  using Error::Error;
};

// Structurally valid input with invalid content: non-finite values, bad
// rotation norms, camera matrices that are not rigid, count mismatches.
struct ValidationError : Error {
  using Error::Error;
};

// Model endpoint unreachable or persistently failing after retries.
struct TransportError : Error {
  using Error::Error;
};

// Per-run call or token budget exhausted.
struct BudgetError : Error {
  using Error::Error;
};

// Evidence extraction produced no usable category.
struct EmptyEvidenceError : Error {
  using Error::Error;
};

// Activation or clustering produced no instance for the question.
struct NoInstanceError : Error {
  using Error::Error;
};

// Process exit codes, shared between the CLI and the pipeline tests.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitEmptyEvidence = 3,
  kExitNoInstance = 4,
  kExitTransport = 5,
  kExitBudget = 6,
};

}  // namespace sq
