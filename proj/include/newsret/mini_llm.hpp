// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "newsret/autodiff.hpp"
#include "newsret/tensor.hpp"
#include "newsret/text_corpus.hpp"

namespace newsret {

enum class ArchKind { kEncoder, kDecoder };

const char* to_string(ArchKind kind) noexcept;
ArchKind parse_arch_kind(std::string_view text);

struct ModelConfig {
  ArchKind arch = ArchKind::kDecoder;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  double mask_prob = 0.15;  // encoder pretraining only
  double init_std = 0.02;
  double layer_norm_eps = 1e-5;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

/// Low-rank update added to a frozen linear map: y += scale * (x A) B.
struct LoraPair {
  Parameter a;  // [in, rank]
  Parameter b;  // [rank, out]
  double scale = 1.0;
};

/// Affine map in row-vector form: y = x W + bias, W is [in, out].
struct Linear {
  Parameter weight;
  std::optional<Parameter> bias;
  std::optional<LoraPair> lora;

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
  Var forward(Tape& tape, Var x) const;
};

struct TransformerBlock {
  Parameter ln1_gain, ln1_offset;
  Linear query, key, value, attn_out;
  Parameter ln2_gain, ln2_offset;
  Linear ff_in, ff_out;
};

/// Per-token representations; rows at and beyond `valid_length` are padding.
struct HiddenStates {
  Tensor states;  // [L, D]
  std::size_t valid_length = 0;
};

class MiniLlm {
 public:
  static MiniLlm build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Final-layer hidden states [L, D] on `tape`. Decoder input must start
  /// with BOS; PAD is only allowed as right padding.
  Var encode(Tape& tape, std::span<const TokenId> seq) const;
  HiddenStates encode_sequence(std::span<const TokenId> seq) const;
  /// Token logits [rows, vocab] for hidden rows.
  Var logits(Tape& tape, Var hidden) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trainable_parameters();
  /// The attention and feed-forward linear maps, in a fixed order.
  std::vector<Linear*> adaptable_linears();
  std::vector<const Linear*> adaptable_linears() const;

 private:
  ModelConfig config_;
  Parameter token_embedding_;     // [V, D]
  Parameter position_embedding_;  // [max_len, D]
  std::vector<TransformerBlock> blocks_;
  Parameter final_gain_, final_offset_;
  Linear lm_head_;
};

/// Number of leading non-PAD tokens; throws when PAD appears before content ends.
std::size_t valid_length(std::span<const TokenId> seq);

struct MaskedSequence {
  TokenSequence tokens;                // with MASK substituted
  std::vector<std::size_t> positions;  // ascending
  std::vector<TokenId> targets;        // original ids at `positions`
};

/// Masks ceil(mask_prob * content_count) content positions chosen uniformly
/// without replacement. Specials and PAD are never masked.
MaskedSequence mask_for_mlm(std::span<const TokenId> seq, double mask_prob, std::mt19937_64& rng);

Var mlm_loss(Tape& tape, const MiniLlm& model, std::span<const TokenId> masked,
             std::span<const std::size_t> positions, std::span<const TokenId> targets);
double mlm_loss(const MiniLlm& model, const MaskedSequence& masked);

/// Next-token loss over BOS ⊕ seq; PAD targets are excluded.
Var clm_loss(Tape& tape, const MiniLlm& model, std::span<const TokenId> seq);
double clm_loss(const MiniLlm& model, std::span<const TokenId> seq);

struct PretrainSchedule {
  std::size_t steps = 500;
  std::size_t batch = 16;
  double peak_lr = 3e-3;
  std::size_t warmup = 50;
};

/// Minimises the masked-LM (encoder) or next-token (decoder) loss on
/// batches sampled from `corpus`. Returns the mean batch loss per step.
std::vector<double> pretrain(MiniLlm& model, std::span<const TokenSequence> corpus,
                             const PretrainSchedule& schedule, std::uint64_t seed);

}  // namespace newsret

namespace newsret {

/// Token appended to every forecasting instance: the MASK id for encoders
/// (matching pre-training), EOS for decoders.
constexpr TokenId sequence_end_token(ArchKind arch) noexcept {
  return arch == ArchKind::kEncoder ? tokens::kMask : tokens::kEos;
}

/// Writes `<stem>.ckpt.json` and `<stem>.config.json`.
void save_model(const MiniLlm& model, const std::filesystem::path& stem);
MiniLlm load_model(const std::filesystem::path& stem);

}  // namespace newsret
