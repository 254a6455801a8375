// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "newsret/newsret.h"

int main(int argc, char** argv) {
  CLI::App app{"News-driven monthly return forecasting pipeline"};
  app.require_subcommand(1, 1);

  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  const char* commands[][2] = {
      {"gen-data", "Generate the synthetic news and return universe"},
      {"pretrain", "Pretrain the language model on training-period news"},
      {"finetune", "Fine-tune the return forecaster with LoRA adapters"},
      {"predict", "Forecast returns for the test period"},
      {"evaluate", "Write the decile performance table"},
      {"backtest", "Run the portfolio backtests and strategy comparison"},
      {"report", "Write the markdown report"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Run configuration (JSON)")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    sub->add_option("--seed", seed, "Random seed (overrides the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const nr_status status = nr_run_command(command.c_str(), config.c_str(), out_dir ? out_dir->c_str() : nullptr,
                                          seed.has_value() ? 1 : 0, seed.value_or(0));
  if (status != NR_OK) {
    std::fprintf(stderr, "error [%s]: %s\n", nr_status_name(status), nr_last_error());
    return nr_exit_code(status);
  }
  return 0;
}
