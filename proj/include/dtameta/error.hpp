#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtameta {

enum class ErrorCode {
  schema,      // missing required column
  value,       // malformed or negative count
  empty,       // no data rows / empty input
  arm,         // a study with an empty diseased or healthy arm
  zero,        // zero cell reached the logit transform
  singular,    // covariance matrix not positive definite
  nofit,       // no optimizer start converged / too few studies
  constraint,  // marginal selection probability unattainable
  degenerate,  // zero contrast denominator or vanishing tau
  mode,        // GLMM mode search failed
  small,       // too few studies for a test
  logzero,     // log-likelihood is -infinity
  options,     // invalid analysis options
};

/// Stable wire name, e.g. "E_SCHEMA".
std::string_view code_name(ErrorCode code);

/// True for codes that describe bad input rather than a failed computation.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(code_name(code)) + ": " + message),
        code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace dtameta
