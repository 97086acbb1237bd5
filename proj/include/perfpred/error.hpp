#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace perfpred {

enum class ErrorKind {
  kParse,
  kValidation,
  kDuplicateId,
  kUnknownLevel,
  kUnknownFeature,
  kOrphanModel,
  kRange,
  kInsufficientData,
  kDegenerate,
  kRankDeficient,
  kColumnMismatch,
  kInvalidArgument,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kDuplicateId: return "duplicate_id";
    case ErrorKind::kUnknownLevel: return "unknown_level";
    case ErrorKind::kUnknownFeature: return "unknown_feature";
    case ErrorKind::kOrphanModel: return "orphan_model";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kInsufficientData: return "insufficient_data";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kRankDeficient: return "rank_deficient";
    case ErrorKind::kColumnMismatch: return "column_mismatch";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

// One problem found while checking input data. `subject` names the record
// (model id, or "model_id/task_id" for scores) and `field` the offending key.
struct Violation {
  ErrorKind kind;
  std::string subject;
  std::string field;
  std::string message;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Error(ErrorKind kind, const std::string& what, std::vector<Violation> violations)
      : std::runtime_error(what), kind_(kind), violations_(std::move(violations)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  ErrorKind kind_;
  std::vector<Violation> violations_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace perfpred
