// Command-line driver for the multi-domain recommender pipeline.
//
//   mmrec <synth|pretrain|finetune|evaluate|robustness|ablate>
//         [--config FILE] [--seed N] [--<key> VALUE ...]
//
// Unrecognized `--key value` pairs override config entries; dotted keys
// reach nested blocks (`--training.lr 0.003`). Exit codes: 0 success,
// 1 runtime failure, 2 bad configuration.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmrec/experiment.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) throw mmrec::ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw mmrec::ConfigError("override '" + a + "' has no value");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void print_report(const std::string& title, const mmrec::MetricReport& r) {
  std::cout << title;
  for (std::size_t k : r.ks) std::cout << "  recall@" << k << "=" << mmrec::format_metric(r.recall_at(k));
  for (std::size_t k : r.ks) std::cout << "  ndcg@" << k << "=" << mmrec::format_metric(r.ndcg_at(k));
  std::cout << "  users=" << r.users << "\n";
}

int run(const std::string& command, const mmrec::ExperimentConfig& c) {
  using namespace mmrec;
  if (command == "synth") {
    run_synth(c);
    std::cout << "wrote dataset to " << c.data_dir << "\n";
  } else if (command == "pretrain") {
    run_pretrain(c, log_line);
    std::cout << "wrote " << c.pretrained_path() << "\n";
  } else if (command == "finetune") {
    run_finetune(c, log_line);
    std::cout << "wrote " << c.finetuned_path() << "\n";
  } else if (command == "evaluate") {
    print_report("test", run_evaluate(c));
  } else if (command == "robustness") {
    for (const auto& [name, rep] : run_robustness(c, log_line)) print_report(name, rep);
  } else if (command == "ablate") {
    const Dataset data = load_experiment_data(c);
    for (const auto& [v, rep] : run_ablation(c, data, selected_variants(c), log_line)) print_report(variant_name(v), rep);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal multi-domain sequential recommender"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"synth", "pretrain", "finetune", "evaluate", "robustness", "ablate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", config_path, "experiment config (JSON)");
    sub->add_option("--seed", seed, "seed for data generation, initialization and shuffling");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  try {
    auto overrides = parse_overrides(sub->remaining());
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    const mmrec::ExperimentConfig c = mmrec::load_experiment_config(config_path, overrides);
    return run(sub->get_name(), c);
  } catch (const mmrec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
