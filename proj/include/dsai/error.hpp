#pragma once

#include <stdexcept>
#include <string>

namespace dsai {

// Every failure in the library is an Error with a code that maps onto the
// CLI exit-code contract: 2 precondition, 3 backend, 4 parse.
enum class ErrorCode {
  precondition,
  ingest_duplicate,
  ingest_empty,
  ingest_parse,
  split_insufficient,
  subset_insufficient,
  annotation,
  template_unknown,
  template_unbound,
  gateway_transport,
  gateway_status,
  gateway_no_rule,
  cost_unpriced_model,
  stage,
  cell_unlabeled,
  lookup,
  dp_empty_event,
  trace_dangling,
  baseline,
  manifest,
  run_locked,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

  int exit_code() const {
    switch (code_) {
      case ErrorCode::gateway_transport:
      case ErrorCode::gateway_status:
      case ErrorCode::gateway_no_rule:
        return 3;
      case ErrorCode::ingest_parse:
      case ErrorCode::template_unknown:
      case ErrorCode::template_unbound:
      case ErrorCode::annotation:
      case ErrorCode::stage:
      case ErrorCode::baseline:
        return 4;
      default:
        return 2;
    }
  }

 private:
  ErrorCode code_;
};

}  // namespace dsai
