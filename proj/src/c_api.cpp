// SPDX-License-Identifier: Apache-2.0
#include "newsret/newsret.h"

#include <exception>
#include <new>
#include <string>
#include <vector>

#include "newsret/backtest.hpp"
#include "newsret/deciles.hpp"
#include "newsret/forecaster.hpp"
#include "newsret/pipeline.hpp"

struct nr_forecaster {
  newsret::ReturnForecaster impl;
};

namespace {

thread_local std::string g_last_error;

nr_status status_for(newsret::ErrorCode code) {
  using newsret::ErrorCode;
  switch (code) {
    case ErrorCode::kUsage: return NR_ERR_USAGE;
    case ErrorCode::kConfig: return NR_ERR_CONFIG;
    case ErrorCode::kData: return NR_ERR_DATA;
    case ErrorCode::kDependency: return NR_ERR_DEPENDENCY;
    case ErrorCode::kDimension: return NR_ERR_DIMENSION;
    case ErrorCode::kNumeric: return NR_ERR_NUMERIC;
    case ErrorCode::kContract: return NR_ERR_CONTRACT;
    case ErrorCode::kLength: return NR_ERR_LENGTH;
    case ErrorCode::kPrecondition: return NR_ERR_PRECONDITION;
    case ErrorCode::kIo: return NR_ERR_IO;
    case ErrorCode::kParse: return NR_ERR_PARSE;
    case ErrorCode::kLookup: return NR_ERR_LOOKUP;
    case ErrorCode::kInsufficientUniverse: return NR_ERR_INSUFFICIENT_UNIVERSE;
    case ErrorCode::kUndefinedSharpe: return NR_ERR_UNDEFINED_SHARPE;
    case ErrorCode::kBankrupt: return NR_ERR_BANKRUPT;
    case ErrorCode::kDomain: return NR_ERR_DOMAIN;
  }
  return NR_ERR_INTERNAL;
}

nr_status invalid(const char* what) {
  g_last_error = what;
  return NR_ERR_INVALID_ARGUMENT;
}

template <typename F>
nr_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return NR_OK;
  } catch (const newsret::Error& e) {
    g_last_error = e.what();
    return status_for(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return NR_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NR_ERR_INTERNAL;
  }
}

}  // namespace

extern "C" {

const char* nr_last_error(void) { return g_last_error.c_str(); }

const char* nr_status_name(nr_status status) {
  switch (status) {
    case NR_OK: return "ok";
    case NR_ERR_USAGE: return "usage";
    case NR_ERR_CONFIG: return "config";
    case NR_ERR_DATA: return "data";
    case NR_ERR_DEPENDENCY: return "dependency";
    case NR_ERR_DIMENSION: return "dimension";
    case NR_ERR_NUMERIC: return "numeric";
    case NR_ERR_CONTRACT: return "contract";
    case NR_ERR_LENGTH: return "length";
    case NR_ERR_PRECONDITION: return "precondition";
    case NR_ERR_IO: return "io";
    case NR_ERR_PARSE: return "parse";
    case NR_ERR_LOOKUP: return "lookup";
    case NR_ERR_INSUFFICIENT_UNIVERSE: return "insufficient-universe";
    case NR_ERR_UNDEFINED_SHARPE: return "undefined-sharpe";
    case NR_ERR_BANKRUPT: return "bankrupt";
    case NR_ERR_DOMAIN: return "domain";
    case NR_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case NR_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int nr_exit_code(nr_status status) {
  switch (status) {
    case NR_OK: return 0;
    case NR_ERR_USAGE:
    case NR_ERR_CONFIG:
    case NR_ERR_INVALID_ARGUMENT:
      return 1;
    case NR_ERR_DEPENDENCY: return 3;
    default: return 2;
  }
}

nr_status nr_run_command(const char* command, const char* config_path, const char* out_dir, int has_seed,
                         uint64_t seed) {
  if (!command || !config_path) return invalid("command and config path are required");
  return guarded([&] {
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = out_dir;
    std::optional<std::uint64_t> s;
    if (has_seed) s = seed;
    newsret::run_command(command, config_path, dir, s);
  });
}

nr_status nr_forecaster_load(const char* stem, nr_forecaster** out) {
  if (!stem || !out) return invalid("stem and out are required");
  *out = nullptr;
  return guarded([&] { *out = new nr_forecaster{newsret::load_forecaster(stem)}; });
}

void nr_forecaster_free(nr_forecaster* forecaster) { delete forecaster; }

nr_status nr_forecaster_predict(const nr_forecaster* forecaster, const int32_t* token_ids, size_t n_tokens,
                                double* out) {
  if (!forecaster || !out || (!token_ids && n_tokens > 0)) return invalid("null argument");
  return guarded([&] {
    *out = newsret::predict_return(forecaster->impl, std::span<const newsret::TokenId>(token_ids, n_tokens));
  });
}

size_t nr_forecaster_max_len(const nr_forecaster* forecaster) {
  return forecaster ? forecaster->impl.model.config().max_len : 0;
}

nr_status nr_cumulative_curve(const double* monthly, size_t n, double* out_curve) {
  if ((!monthly && n > 0) || (!out_curve && n > 0)) return invalid("null argument");
  return guarded([&] {
    const auto curve = newsret::cumulative_curve(std::span<const double>(monthly, n));
    std::copy(curve.begin(), curve.end(), out_curve);
  });
}

nr_status nr_annualized_return(const double* monthly, size_t n, double* out) {
  if ((!monthly && n > 0) || !out) return invalid("null argument");
  return guarded([&] { *out = newsret::annualized_return(std::span<const double>(monthly, n)); });
}

nr_status nr_sharpe_ratio(const double* monthly, size_t n, double* out) {
  if ((!monthly && n > 0) || !out) return invalid("null argument");
  return guarded([&] { *out = newsret::sharpe_ratio(std::span<const double>(monthly, n)); });
}

nr_status nr_assign_deciles(const double* values, const char* const* keys, size_t n, int32_t* out_deciles) {
  if (n > 0 && (!values || !keys || !out_deciles)) return invalid("null argument");
  for (size_t i = 0; i < n; ++i) {
    if (!keys[i]) return invalid("null key");
  }
  return guarded([&] {
    std::vector<newsret::KeyedValue> kv;
    kv.reserve(n);
    for (size_t i = 0; i < n; ++i) kv.push_back({keys[i], values[i]});
    const auto deciles = newsret::assign_deciles(kv);
    for (size_t i = 0; i < n; ++i) out_deciles[i] = deciles[i];
  });
}

}  // extern "C"
