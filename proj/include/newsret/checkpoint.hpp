// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "newsret/tensor.hpp"

namespace newsret {

using TensorMap = std::map<std::string, Tensor>;

/// JSON checkpoint: {"format": ..., "parameters": {name: {"shape", "data"}}}.
/// Names are written in lexicographic order so checkpoints diff cleanly.
void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

/// Copies matching tensors into `params`. With `require_all`, every parameter
/// must be present in `tensors`.
void apply_checkpoint(const TensorMap& tensors, std::span<Parameter* const> params, bool require_all);

}  // namespace newsret
