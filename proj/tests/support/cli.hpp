#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <sys/wait.h>

namespace mmrec::testing {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr, interleaved
};

/// Runs `command` through the shell and captures both output streams.
inline CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) r.output += buf.data();
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

/// Config JSON for a tiny end-to-end run writing under `dir`.
inline std::string tiny_cli_config(const std::string& dir) {
  return R"({
  "data_dir": ")" + dir + R"(/data",
  "output_dir": ")" + dir + R"(/out",
  "synth": {"n_users": 40, "n_items_per_domain": 30, "n_domains": 4, "latent_dim": 4,
            "interactions_per_user": 20, "dim_text": 6, "dim_image": 8, "dim_cross": 6},
  "training": {"d": 4, "experts": 2, "layers": 1, "heads": 2, "n_max": 12,
               "batch_size": 32, "finetune_batch_size": 16,
               "pretrain_epochs": 2, "max_epochs": 2, "patience": 2}
})";
}

struct PipelineRun {
  bool ok = false;
  std::string log;                            // output of the failing step
  std::map<std::string, std::string> files;   // path relative to dir -> bytes
};

/// Writes the tiny config into `dir`, runs synth, pretrain, finetune and
/// evaluate with `cli` from inside `dir` (so every recorded path is
/// relative), and collects every file the run produced.
inline PipelineRun run_cli_pipeline(const std::string& cli, const std::string& dir) {
  PipelineRun run;
  const std::string config = dir + "/config.json";
  {
    std::ofstream out(config);
    out << tiny_cli_config(".");
  }
  for (const char* step : {"synth", "pretrain", "finetune", "evaluate"}) {
    const CommandResult r = run_command("cd '" + dir + "' && '" + cli + "' " + step + " --config config.json");
    if (r.exit_code != 0) {
      run.log = std::string(step) + " exited with " + std::to_string(r.exit_code) + ": " + r.output;
      return run;
    }
  }
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    run.files[std::filesystem::relative(e.path(), dir).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  run.ok = true;
  return run;
}

}  // namespace mmrec::testing
