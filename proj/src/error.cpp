// SPDX-License-Identifier: Apache-2.0
#include "newsret/error.hpp"

namespace newsret {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kConfig: return "configuration error";
    case ErrorCode::kContract: return "contract error";
    case ErrorCode::kLength: return "length error";
    case ErrorCode::kPrecondition: return "precondition error";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kData: return "data error";
    case ErrorCode::kLookup: return "lookup error";
    case ErrorCode::kDependency: return "dependency error";
    case ErrorCode::kInsufficientUniverse: return "insufficient universe";
    case ErrorCode::kUndefinedSharpe: return "undefined Sharpe ratio";
    case ErrorCode::kBankrupt: return "bankrupt portfolio";
    case ErrorCode::kDomain: return "domain error";
    case ErrorCode::kUsage: return "usage error";
  }
  return "unknown error";
}

}  // namespace newsret
