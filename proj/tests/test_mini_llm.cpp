// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "newsret/error.hpp"
#include "newsret/mini_llm.hpp"
#include "support/models.hpp"
#include "support/oracles.hpp"

using namespace newsret;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kUsage;
}

double max_abs_diff_rows(const Tensor& a, const Tensor& b, std::size_t rows) {
  double m = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(a.at(r, c) - b.at(r, c)));
  }
  return m;
}

}  // namespace

TEST_CASE("model construction", "[mini_llm]") {
  const ModelConfig cfg = fixtures::tiny_config(ArchKind::kDecoder);
  CHECK(cfg.head_dim() == 4);
  const MiniLlm a = MiniLlm::build(cfg, 42);
  const MiniLlm b = MiniLlm::build(cfg, 42);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(std::equal(pa[i]->value.data().begin(), pa[i]->value.data().end(), pb[i]->value.data().begin()));
  }

  ModelConfig bad = cfg;
  bad.n_heads = 3;
  CHECK(code_of([&] { MiniLlm::build(bad, 1); }) == ErrorCode::kConfig);
  bad = cfg;
  bad.max_len = 3;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kConfig);

  MiniLlm m = MiniLlm::build(cfg, 42);
  CHECK(fixtures::find_param(m, "tok_emb")->value.shape() == std::vector<std::size_t>{24, 8});
  CHECK(fixtures::find_param(m, "pos_emb")->value.shape() == std::vector<std::size_t>{16, 8});
  CHECK(fixtures::find_param(m, "lm_head.weight")->value.shape() == std::vector<std::size_t>{8, 24});
  CHECK(fixtures::find_param(m, "blocks.1.ln1.gain")->value.data()[0] == 1.0);
  CHECK(fixtures::find_param(m, "blocks.1.ln1.offset")->value.data()[0] == 0.0);
}

TEST_CASE("model config round-trips through JSON", "[mini_llm]") {
  ModelConfig cfg = fixtures::tiny_config(ArchKind::kEncoder);
  cfg.mask_prob = 0.2;
  const ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.arch == ArchKind::kEncoder);
  CHECK(back.d_model == 8);
  CHECK(back.vocab_size == 24);
  CHECK(back.mask_prob == 0.2);
}

TEST_CASE("encode contracts", "[mini_llm]") {
  for (ArchKind arch : {ArchKind::kEncoder, ArchKind::kDecoder}) {
    const MiniLlm m = MiniLlm::build(fixtures::tiny_config(arch), 3);
    std::mt19937_64 rng(1);
    for (std::size_t len = 1; len <= 16; ++len) {
      TokenSequence s = fixtures::random_content(len, 24, rng);
      if (arch == ArchKind::kDecoder) s[0] = tokens::kBos;
      const HiddenStates h = m.encode_sequence(s);
      CHECK(h.states.rows() == len);
      CHECK(h.states.cols() == 8);
      CHECK(h.valid_length == len);
      CHECK(h.states.all_finite());
    }
    TokenSequence too_long = fixtures::random_content(17, 24, rng);
    too_long[0] = tokens::kBos;
    CHECK(code_of([&] { m.encode_sequence(too_long); }) == ErrorCode::kLength);
  }
  const MiniLlm dec = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder), 3);
  const TokenSequence bos_only = {tokens::kBos};
  CHECK(dec.encode_sequence(bos_only).states.rows() == 1);
  const TokenSequence no_bos = {7, 8, tokens::kEos};
  CHECK(code_of([&] { dec.encode_sequence(no_bos); }) == ErrorCode::kPrecondition);
  const TokenSequence interior_pad = {tokens::kBos, 7, tokens::kPad, 8};
  CHECK(code_of([&] { dec.encode_sequence(interior_pad); }) == ErrorCode::kContract);
}

TEST_CASE("decoder hidden states are causal", "[mini_llm][property]") {
  const MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder, 0.3), 17);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSequence s = fixtures::random_content(12, 24, rng);
    s[0] = tokens::kBos;
    std::uniform_int_distribution<std::size_t> pos(1, 11);
    const std::size_t i = pos(rng) - 1;
    TokenSequence t = s;
    for (std::size_t j = i + 1; j < t.size(); ++j) t[j] = fixtures::random_content(1, 24, rng)[0];
    const Tensor a = m.encode_sequence(s).states;
    const Tensor b = m.encode_sequence(t).states;
    CHECK(max_abs_diff_rows(a, b, i + 1) <= 1e-12);
  }
}

TEST_CASE("right padding changes neither states nor losses", "[mini_llm][property]") {
  for (ArchKind arch : {ArchKind::kEncoder, ArchKind::kDecoder}) {
    const MiniLlm m = MiniLlm::build(fixtures::tiny_config(arch, 0.3), 5);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      TokenSequence s = fixtures::wrap(fixtures::random_content(7, 24, rng), arch);
      TokenSequence padded = s;
      padded.resize(s.size() + 1 + static_cast<std::size_t>(trial % 5), tokens::kPad);
      const HiddenStates a = m.encode_sequence(s);
      const HiddenStates b = m.encode_sequence(padded);
      CHECK(b.valid_length == s.size());
      CHECK(max_abs_diff_rows(a.states, b.states, s.size()) <= 1e-10);
    }
  }
  const MiniLlm dec = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder, 0.3), 5);
  const TokenSequence seq = {7, 9, 11, 6};
  const TokenSequence padded = {7, 9, 11, 6, tokens::kPad, tokens::kPad};
  CHECK(clm_loss(dec, seq) == clm_loss(dec, padded));

  const MiniLlm enc = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder, 0.3), 5);
  MaskedSequence ms{{7, tokens::kMask, 11, 6}, {1}, {9}};
  MaskedSequence mp{{7, tokens::kMask, 11, 6, tokens::kPad, tokens::kPad}, {1}, {9}};
  CHECK_THAT(mlm_loss(enc, ms), WithinAbs(mlm_loss(enc, mp), 1e-10));
}

TEST_CASE("encoder state at a masked position sees its context", "[mini_llm]") {
  const MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder, 0.3), 9);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    TokenSequence s = fixtures::random_content(10, 24, rng);
    s[4] = tokens::kMask;
    for (std::size_t j : {0u, 3u, 9u}) {
      TokenSequence t = s;
      t[j] = t[j] == 6 ? 7 : 6;
      const Tensor a = m.encode_sequence(s).states;
      const Tensor b = m.encode_sequence(t).states;
      double diff = 0.0;
      for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(a.at(4, c) - b.at(4, c)));
      CHECK(diff > 1e-9);
    }
  }
}

TEST_CASE("masking for the masked-LM objective", "[mini_llm]") {
  std::mt19937_64 rng(12);
  const TokenSequence four = {tokens::kBos, 7, 8, 9, 10, tokens::kEos};
  const MaskedSequence all = mask_for_mlm(four, 1.0, rng);
  CHECK(all.positions == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(all.targets == std::vector<TokenId>{7, 8, 9, 10});
  CHECK(all.tokens == TokenSequence{tokens::kBos, tokens::kMask, tokens::kMask, tokens::kMask, tokens::kMask,
                                    tokens::kEos});

  TokenSequence twenty = fixtures::random_content(20, 24, rng);
  twenty.insert(twenty.begin(), tokens::kBos);
  twenty.push_back(tokens::kEos);
  twenty.push_back(tokens::kPad);
  for (int trial = 0; trial < 200; ++trial) {
    const MaskedSequence m = mask_for_mlm(twenty, 0.15, rng);
    CHECK(m.positions.size() == 3);
    for (std::size_t p : m.positions) {
      CHECK(p >= 1);
      CHECK(p <= 20);
      CHECK(twenty[p] != tokens::kPad);
    }
    CHECK(std::is_sorted(m.positions.begin(), m.positions.end()));
  }
  const TokenSequence specials = {tokens::kBos, tokens::kEos, tokens::kPad};
  CHECK(code_of([&] { mask_for_mlm(specials, 0.15, rng); }) == ErrorCode::kPrecondition);
}

TEST_CASE("mask positions are uniform over content", "[mini_llm][property]") {
  std::mt19937_64 rng(31);
  const TokenSequence seq = {tokens::kBos, 6, 7, 8, 9, 10, tokens::kEos};
  std::array<int, 7> hits{};
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    for (std::size_t p : mask_for_mlm(seq, 0.2, rng).positions) ++hits[p];
  }
  CHECK(hits[0] == 0);
  CHECK(hits[6] == 0);
  for (std::size_t p = 1; p <= 5; ++p) CHECK_THAT(hits[p] / double(trials), WithinAbs(0.2, 0.015));
}

TEST_CASE("untrained losses are close to ln V", "[mini_llm]") {
  const double ln_v = std::log(24.0);
  std::mt19937_64 rng(77);
  const MiniLlm enc = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder), 1);
  const MiniLlm dec = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder), 1);
  double mlm = 0.0, clm = 0.0;
  for (int i = 0; i < 32; ++i) {
    const TokenSequence s = fixtures::random_content(12, 24, rng);
    mlm += mlm_loss(enc, mask_for_mlm(s, 0.15, rng));
    clm += clm_loss(dec, s);
  }
  CHECK_THAT(mlm / 32.0, WithinRel(ln_v, 0.15));
  CHECK_THAT(clm / 32.0, WithinRel(ln_v, 0.15));
}

TEST_CASE("loss contracts", "[mini_llm]") {
  MiniLlm enc = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder), 2);
  const MiniLlm dec = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder), 2);
  CHECK(code_of([&] { mlm_loss(enc, MaskedSequence{{7, 8}, {}, {}}); }) == ErrorCode::kPrecondition);
  CHECK(code_of([&] { clm_loss(dec, TokenSequence{}); }) == ErrorCode::kPrecondition);

  // A head that puts all mass on the target drives the loss to zero.
  Parameter* w = fixtures::find_param(enc, "lm_head.weight");
  Parameter* b = fixtures::find_param(enc, "lm_head.bias");
  for (double& v : w->value.data()) v = 0.0;
  for (double& v : b->value.data()) v = 0.0;
  b->value.data()[9] = 1000.0;
  CHECK(mlm_loss(enc, MaskedSequence{{7, tokens::kMask, 11}, {1}, {9}}) < 1e-12);
}

TEST_CASE("masked-LM loss reads only the masked positions", "[mini_llm]") {
  const MiniLlm enc = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder, 0.3), 21);
  const TokenSequence masked = {7, tokens::kMask, 11, tokens::kMask, 6};
  const std::vector<std::size_t> positions = {1, 3};
  const std::vector<TokenId> targets = {9, 12};
  Tape tape(false);
  const double loss = mlm_loss(tape, enc, masked, positions, targets).value().item();
  // Reference: mean cross-entropy computed from the full logit matrix at the masked rows.
  Tape t2(false);
  const Tensor logits = enc.logits(t2, enc.encode(t2, masked)).value();
  double ref = 0.0;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto row = logits.row(positions[k]);
    double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    ref += -(row[static_cast<std::size_t>(targets[k])] - mx - std::log(z));
  }
  CHECK_THAT(loss, WithinAbs(ref / 2.0, 1e-12));
}

TEST_CASE("both pretraining losses pass finite differences", "[mini_llm][gradient]") {
  std::mt19937_64 rng(101);
  SECTION("masked LM") {
    MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder, 0.3), 11);
    const TokenSequence masked = {7, tokens::kMask, 11, 12, tokens::kMask, 6, tokens::kMask};
    const std::vector<std::size_t> positions = {1, 4, 6};
    const std::vector<TokenId> targets = {9, 20, 5};
    const auto r = oracle::check_gradients(
        m.parameters(), [&](Tape& t) { return mlm_loss(t, m, masked, positions, targets); });
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
  SECTION("next token") {
    MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder, 0.3), 12);
    const TokenSequence seq = {7, 9, 11, 13, 6, 22};
    const auto r = oracle::check_gradients(m.parameters(), [&](Tape& t) { return clm_loss(t, m, seq); });
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("next-token training memorizes a repeated sequence", "[mini_llm]") {
  MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder), 3);
  const std::vector<TokenSequence> corpus = {{7, 9, 11, 13, 15, 17}};
  const auto curve = pretrain(m, corpus, PretrainSchedule{300, 4, 1e-2, 20}, 5);
  CHECK(curve.front() > 2.5);
  CHECK(clm_loss(m, corpus[0]) < 0.05);
}

TEST_CASE("pretraining is deterministic under a seed", "[mini_llm]") {
  for (ArchKind arch : {ArchKind::kEncoder, ArchKind::kDecoder}) {
    std::mt19937_64 rng(6);
    std::vector<TokenSequence> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(fixtures::random_content(8, 24, rng));
    MiniLlm a = MiniLlm::build(fixtures::tiny_config(arch), 9);
    MiniLlm b = MiniLlm::build(fixtures::tiny_config(arch), 9);
    const PretrainSchedule sched{20, 4, 3e-3, 5};
    const auto ca = pretrain(a, corpus, sched, 13);
    const auto cb = pretrain(b, corpus, sched, 13);
    CHECK(ca == cb);
    CHECK_THAT(ca.front(), WithinRel(std::log(24.0), 0.15));
  }
  MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kDecoder), 9);
  CHECK(code_of([&] { pretrain(m, std::vector<TokenSequence>{}, PretrainSchedule{}, 1); }) ==
        ErrorCode::kPrecondition);
}

TEST_CASE("model checkpoints round-trip", "[mini_llm]") {
  const auto dir = std::filesystem::temp_directory_path() / "newsret_test_model";
  std::filesystem::create_directories(dir);
  const MiniLlm m = MiniLlm::build(fixtures::tiny_config(ArchKind::kEncoder), 44);
  save_model(m, dir / "m");
  const MiniLlm back = load_model(dir / "m");
  CHECK(back.config().arch == ArchKind::kEncoder);
  const TokenSequence s = {7, 8, 9, tokens::kMask};
  const Tensor a = m.encode_sequence(s).states;
  const Tensor b = back.encode_sequence(s).states;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(code_of([&] { load_model(dir / "missing"); }) == ErrorCode::kDependency);
  std::filesystem::remove_all(dir);
}
