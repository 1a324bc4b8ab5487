#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "patchguard/errors.hpp"
#include "patchguard/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<std::string> out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", flags.seed, "Override the master seed");
  cmd->add_option("--threads", flags.threads, "Worker threads; 1 is bitwise reproducible")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", flags.out,
                  "Run directory (default: config output.dir, else $PATCHGUARD_OUT/<name>)");
  cmd->add_flag("--force", flags.force, "Rerun even when outputs are up to date");
}

void report_error(std::string_view category, const std::string& message) {
  const nlohmann::json j{{"error", {{"category", category}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning, patch-processing detection and evaluation for tiny vision "
               "transformers"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  CommonFlags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"poison", "Build the dataset splits and poison the training split"},
      {"train", "Train a model on the (possibly poisoned) training split"},
      {"calibrate", "Set detection thresholds from clean validation samples"},
      {"detect", "Flag backdoor samples with the calibrated thresholds"},
      {"evaluate", "Clean accuracy, attack success rate and detection rates"},
      {"sweep", "Accuracy and ASR under PatchDrop and PatchShuffle sweeps"},
      {"filter-retrain", "Remove flagged training samples and retrain from scratch"},
      {"run", "Run several commands in order"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, flags);
    subs.push_back(sub);
  }
  std::optional<std::string> detect_data;
  std::vector<std::string> detect_splits;
  auto* detect = app.get_subcommand("detect");
  detect->add_option("--data", detect_data, "Dataset directory to screen (default: <run>/data)");
  detect->add_option("--split", detect_splits, "Split to screen (repeatable)");
  std::vector<std::string> steps{"poison", "train", "calibrate", "detect", "evaluate"};
  app.get_subcommand("run")
      ->add_option("--steps", steps, "Commands to run, in order")
      ->delimiter(',')
      ->check(CLI::IsMember({"poison", "train", "calibrate", "detect", "evaluate", "sweep",
                             "filter-retrain"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    auto config = patchguard::load_config(flags.config);
    if (flags.seed) config.seed = *flags.seed;
    patchguard::RunOptions run;
    run.out = patchguard::resolve_output_dir(
        config, flags.out ? std::optional<std::filesystem::path>(*flags.out) : std::nullopt);
    run.threads = flags.threads;
    run.force = flags.force;

    const std::string name = app.get_subcommands().front()->get_name();
    std::vector<patchguard::CommandResult> results;
    if (name == "run") {
      for (const auto& step : steps) results.push_back(patchguard::run_command(step, config, run));
    } else if (name == "detect") {
      std::optional<std::filesystem::path> data;
      if (detect_data) data = *detect_data;
      results.push_back(patchguard::cmd_detect(config, run, data, detect_splits));
    } else {
      results.push_back(patchguard::run_command(name, config, run));
    }
    for (const auto& r : results) {
      std::cout << r.command << (r.skipped ? " (up to date)" : "") << ":";
      for (const auto& p : r.outputs) std::cout << ' ' << p.string();
      std::cout << '\n';
    }
    return 0;
  } catch (const patchguard::Error& e) {
    report_error(patchguard::category_name(e.category()), e.what());
    return patchguard::exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io", e.what());
    return patchguard::exit_code(patchguard::ErrorCategory::io);
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
}
