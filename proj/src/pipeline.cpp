// SPDX-License-Identifier: Apache-2.0
#include "newsret/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "newsret/checkpoint.hpp"
#include "newsret/deciles.hpp"
#include "newsret/market_data.hpp"

namespace newsret {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kBacktestManifest = "backtest_manifest.json";

// Stage-specific seed streams derived from the run seed.
enum SeedStream : std::uint64_t { kModelInit = 1, kPretrainRng, kLoraInit, kHeadInit, kFinetuneRng };

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(stream);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing artifact " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kDependency, "missing artifact " + path.string());
}

fs::path stem_path(const RunConfig& cfg, const char* stem) { return cfg.out_dir / stem; }

fs::path stem_file(const RunConfig& cfg, const char* stem, const char* suffix) {
  return cfg.out_dir / (std::string(stem) + suffix);
}

template <typename T>
void read_opt(const json& obj, const char* key, T& field) {
  if (obj.contains(key)) field = obj.at(key).get<T>();
}

std::string kind_slug(PortfolioKind kind) { return to_string(kind); }

std::string file_slug(std::string name) {
  for (char& c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return name;
}

InstanceOptions instance_options(const RunConfig& cfg, const ModelConfig& model) {
  return InstanceOptions{cfg.window_days, model.max_len, model.arch};
}

struct LoadedData {
  Vocabulary vocab;
  std::vector<UniverseEntry> universe;
  std::vector<NewsItem> news;
};

LoadedData load_inputs(const RunConfig& cfg) {
  for (const auto& p : {cfg.resolve(cfg.news), cfg.resolve(cfg.universe), cfg.resolve(cfg.vocab)}) {
    require_file(p);
  }
  return LoadedData{Vocabulary::load(cfg.resolve(cfg.vocab)), load_universe(cfg.resolve(cfg.universe)),
                    load_news(cfg.resolve(cfg.news))};
}

DatasetSplit split_for(const RunConfig& cfg, const LoadedData& data, const ModelConfig& model) {
  const NewsIndex index(data.news);
  return split_dataset(build_instances(data.universe, index, data.vocab, instance_options(cfg, model)),
                       cfg.train_end, cfg.val_end);
}

void gen_data(const RunConfig& cfg) {
  const SyntheticData data = generate_synthetic(cfg.synthetic, cfg.signal, cfg.seed);
  const SentimentLexicon lexicon = SentimentLexicon::demo();
  for (const auto& [word, beta] : cfg.signal.effects) {
    if (lexicon.find(word)) fail(ErrorCode::kConfig, "signal token '" + word + "' is part of the sentiment lexicon");
  }
  write_news_jsonl(cfg.resolve(cfg.news), data.news);
  write_universe_csv(cfg.resolve(cfg.universe), data.universe);
  data.vocab.save(cfg.resolve(cfg.vocab));
  write_text(cfg.resolve(cfg.lexicon), lexicon.to_json() + "\n");
}

void pretrain_stage(const RunConfig& cfg) {
  const LoadedData data = load_inputs(cfg);
  ModelConfig mc = cfg.model;
  mc.vocab_size = data.vocab.size();
  const DatasetSplit split = split_for(cfg, data, mc);
  const auto corpus = pretraining_corpus(split.train);
  if (corpus.empty()) fail(ErrorCode::kData, "no training-period news to pretrain on");
  MiniLlm model = MiniLlm::build(mc, derive_seed(cfg.seed, kModelInit));
  const auto curve = pretrain(model, corpus, cfg.pretrain, derive_seed(cfg.seed, kPretrainRng));
  save_model(model, stem_path(cfg, artifacts::kPretrainStem));
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) csv += std::to_string(i) + ',' + format_decimal(curve[i]) + '\n';
  write_text(cfg.out_dir / artifacts::kPretrainLoss, csv);
}

void finetune_stage(const RunConfig& cfg) {
  require_file(stem_file(cfg, artifacts::kPretrainStem, ".ckpt.json"));
  const LoadedData data = load_inputs(cfg);
  MiniLlm model = load_model(stem_path(cfg, artifacts::kPretrainStem));
  if (model.config().vocab_size != data.vocab.size()) {
    fail(ErrorCode::kData, "pretrained model vocabulary does not match " + cfg.resolve(cfg.vocab).string());
  }
  const DatasetSplit split = split_for(cfg, data, model.config());
  write_text(cfg.out_dir / artifacts::kSplitManifest, split_manifest_json(split) + "\n");
  if (split.train.empty()) fail(ErrorCode::kData, "training partition is empty");
  attach_lora(model, cfg.finetune.lora_rank, cfg.finetune.lora_alpha, derive_seed(cfg.seed, kLoraInit));
  const std::size_t d = model.config().d_model;
  ReturnForecaster forecaster{std::move(model),
                              ForecastHead::init(d, cfg.finetune.head_init_std, derive_seed(cfg.seed, kHeadInit)),
                              cfg.finetune.pooling};
  FineTuneConfig ft = cfg.finetune;
  ft.seed = derive_seed(cfg.seed, kFinetuneRng);
  const FineTuneResult result = finetune(forecaster, split.train, split.validation, ft);
  save_forecaster(forecaster, stem_path(cfg, artifacts::kFinetuneStem));
  std::string csv = "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < result.train_mse.size(); ++e) {
    csv += std::to_string(e) + ',' + format_decimal(result.train_mse[e]) + ',' +
           (e < result.val_mse.size() ? format_decimal(result.val_mse[e]) : std::string()) + '\n';
  }
  write_text(cfg.out_dir / artifacts::kFinetuneLoss, csv);
}

void predict_stage(const RunConfig& cfg) {
  require_file(stem_file(cfg, artifacts::kFinetuneStem, ".ckpt.json"));
  require_file(stem_file(cfg, artifacts::kFinetuneStem, ".config.json"));
  const ReturnForecaster forecaster = load_forecaster(stem_path(cfg, artifacts::kFinetuneStem));
  const LoadedData data = load_inputs(cfg);
  const DatasetSplit split = split_for(cfg, data, forecaster.model.config());
  if (split.test.empty()) fail(ErrorCode::kData, "test partition is empty");
  std::vector<ForecastRecord> rows;
  for (const auto& inst : split.test) {
    rows.push_back({inst.date, inst.stock_id, predict_return(forecaster, inst.sequence)});
  }
  write_forecasts_csv(cfg.out_dir / artifacts::kForecasts, rows);
}

std::vector<Forecast> joined_forecasts(const RunConfig& cfg) {
  const auto records = load_forecasts_csv(cfg.out_dir / artifacts::kForecasts);
  require_file(cfg.resolve(cfg.universe));
  const ReturnTable returns(load_universe(cfg.resolve(cfg.universe)));
  std::vector<Forecast> out;
  for (const auto& r : records) {
    const auto actual = returns.find(r.stock_id, r.date);
    if (!actual) fail(ErrorCode::kData, "no forward return for (" + r.date.to_string() + ", " + r.stock_id + ")");
    out.push_back({r.stock_id, r.date, r.forecast, *actual});
  }
  return out;
}

void evaluate_stage(const RunConfig& cfg) {
  const DecileTable table = compute_decile_table(joined_forecasts(cfg));
  write_decile_table_csv(cfg.out_dir / artifacts::kDecileTable, table);
}

void backtest_stage(const RunConfig& cfg) {
  const auto records = load_forecasts_csv(cfg.out_dir / artifacts::kForecasts);
  require_file(cfg.resolve(cfg.lexicon));
  const SentimentLexicon lexicon = SentimentLexicon::load(cfg.resolve(cfg.lexicon));
  const LoadedData data = load_inputs(cfg);
  // Sentiment is scored on the same instance text the model saw.
  const ModelConfig mc = ModelConfig::from_json(
      json::parse(read_text(stem_file(cfg, artifacts::kFinetuneStem, ".config.json"))).at("model").dump());
  const DatasetSplit split = split_for(cfg, data, mc);
  std::map<std::pair<Date, std::string>, const Instance*> by_key;
  for (const auto& inst : split.test) by_key[{inst.date, inst.stock_id}] = &inst;

  std::map<std::string, std::vector<ScoredStock>> strategies;
  auto& model_scores = strategies[cfg.strategy_name];
  auto& senti_scores = strategies[kSentimentStrategy];
  for (const auto& r : records) {
    model_scores.push_back({r.stock_id, r.date, r.forecast});
    auto it = by_key.find({r.date, r.stock_id});
    if (it == by_key.end()) {
      fail(ErrorCode::kData, "forecast without test instance (" + r.date.to_string() + ", " + r.stock_id + ")");
    }
    senti_scores.push_back({r.stock_id, r.date, sentiment_score(it->second->sequence, data.vocab, lexicon)});
  }
  const auto rows = compare_strategies(strategies, data.universe);
  write_text(cfg.out_dir / artifacts::kComparison, comparison_csv(rows));

  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  auto emit = [&](const std::string& strategy, const std::string& kind, const BacktestStats& stats) {
    const std::string slug = file_slug(strategy) + "_" + kind;
    const std::string returns_file = "returns_" + slug + ".csv";
    const std::string curve_file = "curve_" + slug + ".csv";
    const std::string stats_file = "stats_" + slug + ".json";
    write_text(cfg.out_dir / returns_file, monthly_returns_csv(stats));
    write_text(cfg.out_dir / curve_file, curve_csv(stats));
    write_text(cfg.out_dir / stats_file, stats_json(stats) + "\n");
    manifest.push_back({{"strategy", strategy},
                        {"kind", kind},
                        {"returns", returns_file},
                        {"curve", curve_file},
                        {"stats", stats_file}});
  };
  for (const auto& row : rows) {
    if (!row.long_short) {
      emit(row.name, kind_slug(PortfolioKind::kLongOnly), row.long_only);
      continue;
    }
    for (PortfolioKind kind : cfg.portfolios) {
      emit(row.name, kind_slug(kind), kind == PortfolioKind::kLongOnly ? row.long_only : *row.long_short);
    }
  }
  write_text(cfg.out_dir / kBacktestManifest, manifest.dump(2) + "\n");
}

std::string markdown_table(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::size_t cells = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      row += " " + line.substr(start, comma == std::string::npos ? std::string::npos : comma - start) + " |";
      ++cells;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    out += row + "\n";
    if (header) {
      out += "|";
      for (std::size_t i = 0; i < cells; ++i) out += " --- |";
      out += "\n";
      header = false;
    }
  }
  return out;
}

}  // namespace

Stage parse_stage(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  }
  fail(ErrorCode::kUsage, "unknown command '" + std::string(name) + "'");
}

std::string_view stage_name(Stage stage) noexcept { return kStageNames[static_cast<std::size_t>(stage)]; }

RunConfig RunConfig::from_json(std::string_view text, std::optional<std::uint64_t> seed_override) {
  RunConfig cfg;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) fail(ErrorCode::kConfig, "run config must be a JSON object");
    if (seed_override) {
      cfg.seed = *seed_override;
    } else if (doc.contains("seed")) {
      cfg.seed = doc.at("seed").get<std::uint64_t>();
    } else {
      fail(ErrorCode::kUsage, "run config lacks a seed (set \"seed\" or pass --seed)");
    }
    if (doc.contains("out_dir")) cfg.out_dir = doc.at("out_dir").get<std::string>();
    if (doc.contains("paths")) {
      const json& p = doc.at("paths");
      if (p.contains("news")) cfg.news = p.at("news").get<std::string>();
      if (p.contains("universe")) cfg.universe = p.at("universe").get<std::string>();
      if (p.contains("vocab")) cfg.vocab = p.at("vocab").get<std::string>();
      if (p.contains("lexicon")) cfg.lexicon = p.at("lexicon").get<std::string>();
    }
    if (doc.contains("synthetic")) {
      const json& s = doc.at("synthetic");
      read_opt(s, "n_stocks", cfg.synthetic.n_stocks);
      if (s.contains("first_date")) cfg.synthetic.first_date = Date::parse(s.at("first_date").get<std::string>());
      read_opt(s, "n_periods", cfg.synthetic.n_periods);
      read_opt(s, "min_news", cfg.synthetic.min_news);
      read_opt(s, "max_news", cfg.synthetic.max_news);
      read_opt(s, "signal_probability", cfg.synthetic.signal_probability);
      read_opt(s, "noise_sigma", cfg.signal.noise_sigma);
      read_opt(s, "base_return", cfg.signal.base_return);
      if (s.contains("signal")) cfg.signal.effects = s.at("signal").get<std::map<std::string, double>>();
    }
    read_opt(doc, "window_days", cfg.window_days);
    cfg.synthetic.window_days = cfg.window_days;
    if (doc.contains("model")) {
      cfg.model = ModelConfig::from_json(doc.at("model").dump());
    }
    if (doc.contains("pretrain")) {
      const json& p = doc.at("pretrain");
      read_opt(p, "steps", cfg.pretrain.steps);
      read_opt(p, "batch", cfg.pretrain.batch);
      read_opt(p, "peak_lr", cfg.pretrain.peak_lr);
      read_opt(p, "warmup", cfg.pretrain.warmup);
    }
    if (doc.contains("finetune")) {
      const json& f = doc.at("finetune");
      read_opt(f, "batch", cfg.finetune.batch);
      read_opt(f, "peak_lr", cfg.finetune.peak_lr);
      read_opt(f, "warmup", cfg.finetune.warmup);
      read_opt(f, "epochs", cfg.finetune.epochs);
      read_opt(f, "lora_rank", cfg.finetune.lora_rank);
      read_opt(f, "lora_alpha", cfg.finetune.lora_alpha);
      read_opt(f, "head_init_std", cfg.finetune.head_init_std);
      if (f.contains("pooling")) cfg.finetune.pooling = parse_pooling_mode(f.at("pooling").get<std::string>());
    }
    if (doc.contains("split")) {
      const json& s = doc.at("split");
      if (s.contains("train_end")) cfg.train_end = Date::parse(s.at("train_end").get<std::string>());
      if (s.contains("val_end")) cfg.val_end = Date::parse(s.at("val_end").get<std::string>());
    }
    if (doc.contains("portfolios")) {
      cfg.portfolios.clear();
      for (const auto& k : doc.at("portfolios")) {
        const auto name = k.get<std::string>();
        if (name == "long_only") {
          cfg.portfolios.push_back(PortfolioKind::kLongOnly);
        } else if (name == "long_short") {
          cfg.portfolios.push_back(PortfolioKind::kLongShort);
        } else {
          fail(ErrorCode::kConfig, "unknown portfolio kind '" + name + "'");
        }
      }
    }
    read_opt(doc, "strategy_name", cfg.strategy_name);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("run config: ") + e.what());
  }
  if (cfg.window_days <= 0) fail(ErrorCode::kConfig, "window_days must be positive");
  if (!(cfg.train_end < cfg.val_end)) fail(ErrorCode::kConfig, "split.train_end must precede split.val_end");
  if (cfg.strategy_name.empty() || cfg.strategy_name == kSentimentStrategy || cfg.strategy_name == kBenchmarkName) {
    fail(ErrorCode::kConfig, "strategy_name must be non-empty and distinct from the baselines");
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kUsage, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), seed_override);
}

fs::path RunConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : out_dir / p; }

void run_stage(Stage stage, const RunConfig& config) {
  fs::create_directories(config.out_dir);
  switch (stage) {
    case Stage::kGenData: return gen_data(config);
    case Stage::kPretrain: return pretrain_stage(config);
    case Stage::kFinetune: return finetune_stage(config);
    case Stage::kPredict: return predict_stage(config);
    case Stage::kEvaluate: return evaluate_stage(config);
    case Stage::kBacktest: return backtest_stage(config);
    case Stage::kReport: emit_report(config.out_dir); return;
  }
}

void run_command(std::string_view command, const fs::path& config_path, const std::optional<fs::path>& out_dir,
                 std::optional<std::uint64_t> seed) {
  const Stage stage = parse_stage(command);
  RunConfig cfg = RunConfig::load(config_path, seed);
  if (out_dir) cfg.out_dir = *out_dir;
  run_stage(stage, cfg);
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kUsage:
    case ErrorCode::kConfig:
      return 1;
    case ErrorCode::kDependency:
      return 3;
    default:
      return 2;
  }
}

void write_forecasts_csv(const fs::path& path, std::span<const ForecastRecord> rows) {
  std::string out = "date,stock_id,forecast\n";
  for (const auto& r : rows) out += r.date.to_string() + ',' + r.stock_id + ',' + format_decimal(r.forecast) + '\n';
  write_text(path, out);
}

std::vector<ForecastRecord> load_forecasts_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "date,stock_id,forecast") {
    fail(ErrorCode::kParse, path.string() + ": expected header date,stock_id,forecast");
  }
  std::vector<ForecastRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    ForecastRecord r;
    r.date = Date::parse(std::string_view(line).substr(0, c1));
    r.stock_id = line.substr(c1 + 1, c2 - c1 - 1);
    const std::string_view v = std::string_view(line).substr(c2 + 1);
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), r.forecast);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": bad forecast value");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string emit_report(const fs::path& out_dir) {
  const fs::path decile_path = out_dir / artifacts::kDecileTable;
  const fs::path comparison_path = out_dir / artifacts::kComparison;
  const fs::path manifest_path = out_dir / kBacktestManifest;
  for (const auto& p : {decile_path, comparison_path, manifest_path}) require_file(p);
  const json manifest = json::parse(read_text(manifest_path));
  for (const auto& entry : manifest) {
    for (const char* key : {"returns", "curve", "stats"}) require_file(out_dir / entry.at(key).get<std::string>());
  }

  std::string md = "# News-to-return forecasting run\n\n";
  md += "## Decile performance (test period)\n\nSource: `" + std::string(artifacts::kDecileTable) + "`\n\n";
  md += markdown_table(read_text(decile_path)) + "\n";
  md += "## Portfolio comparison\n\nSource: `" + std::string(artifacts::kComparison) +
        "`. Annualized returns in percent; Sharpe ratios annualized with zero risk-free rate.\n\n";
  md += markdown_table(read_text(comparison_path)) + "\n";
  md += "## Monthly series\n\n| strategy | portfolio | monthly returns | cumulative curve |\n| --- | --- | --- | --- |\n";
  for (const auto& entry : manifest) {
    md += "| " + entry.at("strategy").get<std::string>() + " | " + entry.at("kind").get<std::string>() + " | `" +
          entry.at("returns").get<std::string>() + "` | `" + entry.at("curve").get<std::string>() + "` |\n";
  }
  write_text(out_dir / artifacts::kReport, md);
  return md;
}

std::vector<TokenSequence> pretraining_corpus(std::span<const Instance> instances) {
  std::vector<TokenSequence> corpus;
  for (const auto& inst : instances) {
    TokenSequence seq;
    for (TokenId id : inst.sequence) {
      if (id == tokens::kBos || id == tokens::kEos || id == tokens::kMask || id == tokens::kPad) continue;
      seq.push_back(id);
    }
    const bool has_content = std::any_of(seq.begin(), seq.end(), [](TokenId id) { return !Vocabulary::is_special(id); });
    if (has_content) corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace newsret
