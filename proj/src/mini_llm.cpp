// SPDX-License-Identifier: Apache-2.0
#include "newsret/mini_llm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "newsret/error.hpp"
#include "newsret/checkpoint.hpp"
#include "newsret/optim.hpp"

namespace newsret {
namespace {

Parameter gaussian(std::string name, std::size_t rows, std::size_t cols, double std_dev,
                   std::mt19937_64& rng) {
  Tensor t({rows, cols}, 0.0);
  std::normal_distribution<double> dist(0.0, std_dev);
  for (double& v : t.data()) v = dist(rng);
  return Parameter{std::move(name), std::move(t), true};
}

Parameter filled(std::string name, std::size_t rows, std::size_t cols, double value) {
  return Parameter{std::move(name), Tensor({rows, cols}, value), true};
}

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, double std_dev,
                   std::mt19937_64& rng, bool with_bias = true) {
  Linear lin;
  lin.weight = gaussian(name + ".weight", in, out, std_dev, rng);
  if (with_bias) lin.bias = filled(name + ".bias", 1, out, 0.0);
  return lin;
}

template <typename P, typename L>
void collect(L& lin, std::vector<P*>& out) {
  out.push_back(&lin.weight);
  if (lin.bias) out.push_back(&*lin.bias);
  if (lin.lora) {
    out.push_back(&lin.lora->a);
    out.push_back(&lin.lora->b);
  }
}

template <typename P, typename Model, typename Blocks>
void collect_all(Model& token, Model& position, Blocks& blocks, Model& gain, Model& offset,
                 auto& head, std::vector<P*>& out) {
  out.push_back(&token);
  out.push_back(&position);
  for (auto& b : blocks) {
    out.push_back(&b.ln1_gain);
    out.push_back(&b.ln1_offset);
    collect(b.query, out);
    collect(b.key, out);
    collect(b.value, out);
    collect(b.attn_out, out);
    out.push_back(&b.ln2_gain);
    out.push_back(&b.ln2_offset);
    collect(b.ff_in, out);
    collect(b.ff_out, out);
  }
  out.push_back(&gain);
  out.push_back(&offset);
  collect(head, out);
}

}  // namespace

const char* to_string(ArchKind kind) noexcept {
  return kind == ArchKind::kEncoder ? "encoder" : "decoder";
}

ArchKind parse_arch_kind(std::string_view text) {
  if (text == "encoder") return ArchKind::kEncoder;
  if (text == "decoder") return ArchKind::kDecoder;
  fail(ErrorCode::kConfig, "unknown architecture '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) {
    fail(ErrorCode::kConfig, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorCode::kConfig, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                 std::to_string(n_heads));
  }
  if (vocab_size <= static_cast<std::size_t>(tokens::kFirstContent)) {
    fail(ErrorCode::kConfig, "vocab_size must exceed the reserved tokens");
  }
  if (max_len < 4) fail(ErrorCode::kConfig, "max_len must be at least 4");
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) fail(ErrorCode::kConfig, "mask_prob must lie in (0,1)");
  if (!(init_std > 0.0)) fail(ErrorCode::kConfig, "init_std must be positive");
  if (layer_norm_eps < 0.0) fail(ErrorCode::kConfig, "layer_norm_eps must be non-negative");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json doc = {{"arch", newsret::to_string(arch)},
                                {"d_model", d_model},
                                {"n_layers", n_layers},
                                {"n_heads", n_heads},
                                {"d_ff", d_ff},
                                {"vocab_size", vocab_size},
                                {"max_len", max_len},
                                {"mask_prob", mask_prob},
                                {"init_std", init_std},
                                {"layer_norm_eps", layer_norm_eps}};
  return doc.dump(2);
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig cfg;
  try {
    const auto doc = nlohmann::json::parse(text);
    cfg.arch = parse_arch_kind(doc.value("arch", std::string(to_string(cfg.arch))));
    cfg.d_model = doc.value("d_model", cfg.d_model);
    cfg.n_layers = doc.value("n_layers", cfg.n_layers);
    cfg.n_heads = doc.value("n_heads", cfg.n_heads);
    cfg.d_ff = doc.value("d_ff", cfg.d_ff);
    cfg.vocab_size = doc.value("vocab_size", cfg.vocab_size);
    cfg.max_len = doc.value("max_len", cfg.max_len);
    cfg.mask_prob = doc.value("mask_prob", cfg.mask_prob);
    cfg.init_std = doc.value("init_std", cfg.init_std);
    cfg.layer_norm_eps = doc.value("layer_norm_eps", cfg.layer_norm_eps);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("model config: ") + e.what());
  }
  return cfg;
}

Var Linear::forward(Tape& tape, Var x) const {
  Var y = ops::matmul(x, tape.leaf(weight));
  if (bias) y = ops::add_bias(y, tape.leaf(*bias));
  if (lora) {
    Var low = ops::matmul(ops::matmul(x, tape.leaf(lora->a)), tape.leaf(lora->b));
    y = ops::add(y, ops::scale(low, lora->scale));
  }
  return y;
}

MiniLlm MiniLlm::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const double sd = config.init_std;
  const std::size_t d = config.d_model;
  MiniLlm m;
  m.config_ = config;
  m.token_embedding_ = gaussian("tok_emb", config.vocab_size, d, sd, rng);
  m.position_embedding_ = gaussian("pos_emb", config.max_len, d, sd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    TransformerBlock b;
    b.ln1_gain = filled(p + "ln1.gain", 1, d, 1.0);
    b.ln1_offset = filled(p + "ln1.offset", 1, d, 0.0);
    b.query = make_linear(p + "attn.query", d, d, sd, rng);
    b.key = make_linear(p + "attn.key", d, d, sd, rng, false);
    b.value = make_linear(p + "attn.value", d, d, sd, rng);
    b.attn_out = make_linear(p + "attn.out", d, d, sd, rng);
    b.ln2_gain = filled(p + "ln2.gain", 1, d, 1.0);
    b.ln2_offset = filled(p + "ln2.offset", 1, d, 0.0);
    b.ff_in = make_linear(p + "ff.in", d, config.d_ff, sd, rng);
    b.ff_out = make_linear(p + "ff.out", config.d_ff, d, sd, rng);
    m.blocks_.push_back(std::move(b));
  }
  m.final_gain_ = filled("final_ln.gain", 1, d, 1.0);
  m.final_offset_ = filled("final_ln.offset", 1, d, 0.0);
  m.lm_head_ = make_linear("lm_head", d, config.vocab_size, sd, rng);
  return m;
}

std::size_t valid_length(std::span<const TokenId> seq) {
  std::size_t n = 0;
  while (n < seq.size() && seq[n] != tokens::kPad) ++n;
  for (std::size_t i = n; i < seq.size(); ++i) {
    if (seq[i] != tokens::kPad) fail(ErrorCode::kContract, "PAD inside sequence content");
  }
  return n;
}

Var MiniLlm::encode(Tape& tape, std::span<const TokenId> seq) const {
  const std::size_t len = seq.size();
  if (len == 0) fail(ErrorCode::kPrecondition, "encode: empty sequence");
  if (len > config_.max_len) {
    fail(ErrorCode::kLength, "sequence length " + std::to_string(len) + " exceeds max_len " +
                                 std::to_string(config_.max_len));
  }
  const std::size_t valid = valid_length(seq);
  if (valid == 0) fail(ErrorCode::kPrecondition, "encode: sequence has no content");
  const bool causal = config_.arch == ArchKind::kDecoder;
  if (causal && seq[0] != tokens::kBos) fail(ErrorCode::kPrecondition, "decoder input must begin with BOS");

  std::vector<std::uint8_t> allowed(len * len, 0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < valid; ++j) allowed[i * len + j] = (!causal || j <= i) ? 1 : 0;
  }

  Var x = ops::add(ops::embedding(tape.leaf(token_embedding_), seq),
                   ops::slice_rows(tape.leaf(position_embedding_), 0, len));
  const std::size_t dh = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double eps = config_.layer_norm_eps;
  for (const TransformerBlock& b : blocks_) {
    Var a = ops::layer_norm_rows(x, tape.leaf(b.ln1_gain), tape.leaf(b.ln1_offset), eps);
    Var q = b.query.forward(tape, a);
    Var k = b.key.forward(tape, a);
    Var v = b.value.forward(tape, a);
    std::vector<Var> heads;
    heads.reserve(config_.n_heads);
    for (std::size_t h = 0; h < config_.n_heads; ++h) {
      Var scores = ops::scale(ops::matmul_nt(ops::slice_cols(q, h * dh, dh), ops::slice_cols(k, h * dh, dh)),
                              inv_sqrt);
      Var probs = ops::softmax_rows(scores, allowed);
      heads.push_back(ops::matmul(probs, ops::slice_cols(v, h * dh, dh)));
    }
    Var merged = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
    x = ops::add(x, b.attn_out.forward(tape, merged));
    Var c = ops::layer_norm_rows(x, tape.leaf(b.ln2_gain), tape.leaf(b.ln2_offset), eps);
    x = ops::add(x, b.ff_out.forward(tape, ops::gelu(b.ff_in.forward(tape, c))));
  }
  return ops::layer_norm_rows(x, tape.leaf(final_gain_), tape.leaf(final_offset_), eps);
}

HiddenStates MiniLlm::encode_sequence(std::span<const TokenId> seq) const {
  Tape tape(false);
  Var h = encode(tape, seq);
  return HiddenStates{h.value(), valid_length(seq)};
}

Var MiniLlm::logits(Tape& tape, Var hidden) const { return lm_head_.forward(tape, hidden); }

std::vector<Parameter*> MiniLlm::parameters() {
  std::vector<Parameter*> out;
  collect_all<Parameter>(token_embedding_, position_embedding_, blocks_, final_gain_, final_offset_, lm_head_, out);
  return out;
}

std::vector<const Parameter*> MiniLlm::parameters() const {
  std::vector<const Parameter*> out;
  collect_all<const Parameter>(token_embedding_, position_embedding_, blocks_, final_gain_, final_offset_,
                               lm_head_, out);
  return out;
}

std::vector<Parameter*> MiniLlm::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<Linear*> MiniLlm::adaptable_linears() {
  std::vector<Linear*> out;
  for (auto& b : blocks_) {
    for (Linear* l : {&b.query, &b.key, &b.value, &b.attn_out, &b.ff_in, &b.ff_out}) out.push_back(l);
  }
  return out;
}

std::vector<const Linear*> MiniLlm::adaptable_linears() const {
  std::vector<const Linear*> out;
  for (const auto& b : blocks_) {
    for (const Linear* l : {&b.query, &b.key, &b.value, &b.attn_out, &b.ff_in, &b.ff_out}) out.push_back(l);
  }
  return out;
}

MaskedSequence mask_for_mlm(std::span<const TokenId> seq, double mask_prob, std::mt19937_64& rng) {
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) fail(ErrorCode::kConfig, "mask_prob must lie in (0,1]");
  std::vector<std::size_t> content;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!Vocabulary::is_special(seq[i])) content.push_back(i);
  }
  if (content.empty()) fail(ErrorCode::kPrecondition, "mask_for_mlm: sequence has no content tokens");
  const auto want = static_cast<std::size_t>(std::ceil(mask_prob * static_cast<double>(content.size())));
  const std::size_t count = std::clamp<std::size_t>(want, 1, content.size());
  // Partial Fisher-Yates: the first `count` slots become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, content.size() - 1);
    std::swap(content[i], content[pick(rng)]);
  }
  content.resize(count);
  std::sort(content.begin(), content.end());

  MaskedSequence out;
  out.tokens.assign(seq.begin(), seq.end());
  out.positions = content;
  for (std::size_t pos : content) {
    out.targets.push_back(seq[pos]);
    out.tokens[pos] = tokens::kMask;
  }
  return out;
}

Var mlm_loss(Tape& tape, const MiniLlm& model, std::span<const TokenId> masked,
             std::span<const std::size_t> positions, std::span<const TokenId> targets) {
  if (positions.empty()) fail(ErrorCode::kPrecondition, "mlm_loss: empty mask set");
  if (positions.size() != targets.size()) fail(ErrorCode::kDimension, "mlm_loss: one target per masked position");
  Var hidden = model.encode(tape, masked);
  Var picked = ops::gather_rows(hidden, positions);
  return ops::cross_entropy_rows(model.logits(tape, picked), targets);
}

double mlm_loss(const MiniLlm& model, const MaskedSequence& masked) {
  Tape tape(false);
  return mlm_loss(tape, model, masked.tokens, masked.positions, masked.targets).value().item();
}

Var clm_loss(Tape& tape, const MiniLlm& model, std::span<const TokenId> seq) {
  const std::size_t n = valid_length(seq);
  if (n == 0) fail(ErrorCode::kPrecondition, "clm_loss: empty sequence");
  // Input BOS, x_1 .. x_{n-1}; row i predicts x_{i+1}.
  TokenSequence input;
  input.reserve(n);
  input.push_back(tokens::kBos);
  input.insert(input.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(n - 1));
  Var hidden = model.encode(tape, input);
  return ops::cross_entropy_rows(model.logits(tape, hidden), seq.first(n));
}

double clm_loss(const MiniLlm& model, std::span<const TokenId> seq) {
  Tape tape(false);
  return clm_loss(tape, model, seq).value().item();
}

std::vector<double> pretrain(MiniLlm& model, std::span<const TokenSequence> corpus,
                             const PretrainSchedule& schedule, std::uint64_t seed) {
  if (corpus.empty()) fail(ErrorCode::kPrecondition, "pretrain: empty corpus");
  if (schedule.steps == 0 || schedule.batch == 0) fail(ErrorCode::kConfig, "pretrain: steps and batch must be positive");
  const bool encoder = model.config().arch == ArchKind::kEncoder;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  OptimizerState state;
  const std::vector<Parameter*> params = model.trainable_parameters();
  std::vector<double> curve;
  curve.reserve(schedule.steps);
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    Tape tape;
    std::vector<Var> losses;
    losses.reserve(schedule.batch);
    for (std::size_t b = 0; b < schedule.batch; ++b) {
      const TokenSequence& seq = corpus[pick(rng)];
      if (encoder) {
        const MaskedSequence m = mask_for_mlm(seq, model.config().mask_prob, rng);
        losses.push_back(mlm_loss(tape, model, m.tokens, m.positions, m.targets));
      } else {
        losses.push_back(clm_loss(tape, model, seq));
      }
    }
    Var loss = ops::scale(ops::sum(ops::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
    curve.push_back(loss.value().item());
    const GradientMap grads = tape.backward(loss);
    adam_step(params, grads, state,
              lr_at_step(step + 1, schedule.warmup, schedule.steps + 1, schedule.peak_lr));
  }
  return curve;
}

}  // namespace newsret

namespace newsret {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_model(const MiniLlm& model, const std::filesystem::path& stem) {
  save_checkpoint(with_suffix(stem, ".ckpt.json"), model.parameters());
  std::ofstream out(with_suffix(stem, ".config.json"), std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + with_suffix(stem, ".config.json").string());
  out << model.config().to_json() << '\n';
}

MiniLlm load_model(const std::filesystem::path& stem) {
  const auto config_path = with_suffix(stem, ".config.json");
  std::ifstream in(config_path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing model config " + config_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  MiniLlm model = MiniLlm::build(ModelConfig::from_json(buf.str()), 0);
  const TensorMap tensors = load_checkpoint(with_suffix(stem, ".ckpt.json"));
  auto params = model.parameters();
  apply_checkpoint(tensors, params, true);
  return model;
}

}  // namespace newsret
