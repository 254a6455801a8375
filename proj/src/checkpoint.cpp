// SPDX-License-Identifier: Apache-2.0
#include "newsret/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

#include "newsret/error.hpp"

namespace newsret {
namespace {

constexpr const char* kFormat = "newsret-checkpoint-v1";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  TensorMap tensors;
  for (const Parameter* p : params) {
    if (!tensors.emplace(p->name, p->value).second) {
      fail(ErrorCode::kContract, "duplicate parameter name " + p->name);
    }
  }
  save_checkpoint(path, tensors);
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    params[name] = {{"shape", t.shape()},
                    {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  }
  nlohmann::json doc = {{"format", kFormat}, {"parameters", std::move(params)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) fail(ErrorCode::kIo, "failed writing checkpoint " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, "checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", std::string()) != kFormat) {
    fail(ErrorCode::kParse, "checkpoint " + path.string() + ": unknown format");
  }
  TensorMap tensors;
  try {
    for (const auto& [name, entry] : doc.at("parameters").items()) {
      tensors.emplace(name, Tensor(entry.at("shape").get<std::vector<std::size_t>>(),
                                   entry.at("data").get<std::vector<double>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, "checkpoint " + path.string() + ": " + e.what());
  }
  return tensors;
}

void apply_checkpoint(const TensorMap& tensors, std::span<Parameter* const> params, bool require_all) {
  for (Parameter* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) {
      if (require_all) fail(ErrorCode::kData, "checkpoint lacks parameter " + p->name);
      continue;
    }
    if (!it->second.same_shape(p->value)) {
      fail(ErrorCode::kDimension, "checkpoint shape " + it->second.shape_string() + " for " +
                                      p->name + " expected " + p->value.shape_string());
    }
    p->value = it->second;
  }
}

}  // namespace newsret
