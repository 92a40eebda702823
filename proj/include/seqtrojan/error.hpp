#pragma once

#include <stdexcept>
#include <string>

namespace seqtrojan {

enum class ErrorKind {
  Schema,
  Parse,
  Integrity,
  EmptyDataset,
  Config,
  Length,
  Spec,
  Vocabulary,
  Mode,
  Plan,
  Training,
  Input,
  Io,
  Reproducibility,
};

const char* to_string(ErrorKind kind);

// Every library failure surfaces as this type; `kind()` lets callers branch
// without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::EmptyDataset: return "empty-dataset";
    case ErrorKind::Config: return "config";
    case ErrorKind::Length: return "length";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Vocabulary: return "vocabulary";
    case ErrorKind::Mode: return "mode";
    case ErrorKind::Plan: return "plan";
    case ErrorKind::Training: return "training";
    case ErrorKind::Input: return "input";
    case ErrorKind::Io: return "io";
    case ErrorKind::Reproducibility: return "reproducibility";
  }
  return "unknown";
}

}  // namespace seqtrojan
