// SPDX-License-Identifier: Apache-2.0
//
// flora_sim: run, compare and verify federated adapter-aggregation experiments.
//
// Exit codes: 0 success, 1 invalid configuration or failed verification,
// 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "flora/acceptance.hpp"
#include "flora/config.hpp"
#include "flora/fed_sim.hpp"
#include "flora/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

constexpr double kSweepFactors[] = {0.01, 0.05, 0.1, 0.2};

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

constexpr Flag kFlags[] = {
    {"--preset", "preset", "Preset: homo16 or hetero"},
    {"--strategy", "strategies", "Strategy (flora, fedit, zero_padding, standalone, centralized)"},
    {"--strategies", "strategies", "Comma-separated strategy list"},
    {"--clients", "clients", "Number of clients K"},
    {"--ranks", "ranks", "Comma-separated adapter rank per client"},
    {"--rounds", "rounds", "Communication rounds T"},
    {"--epochs", "epochs", "Local epochs E per round"},
    {"--lr", "lr", "Learning rate"},
    {"--batch-size", "batch_size", "Mini-batch size"},
    {"--loss", "loss", "squared-error or softmax-cross-entropy"},
    {"--skew", "skew", "Comma-separated skews: iid, feature-shift, size-skew, label-skew"},
    {"--skew-strength", "skew_strength", "One strength, or one per skew kind"},
    {"--scaling-override", "scaling_override", "Constant scaling factor p for every client, in (0, 1]"},
    {"--seed", "seed", "Experiment seed"},
    {"--out", "out", "Report output path"},
    {"--m", "m", "Output dimension m"},
    {"--n", "n", "Input dimension n"},
    {"--samples", "samples", "Total generated samples (20% held out for evaluation)"},
    {"--noise-std", "noise_std", "Target noise standard deviation"},
    {"--teacher-rank", "teacher_rank", "Rank of the teacher perturbation"},
};

struct Inputs {
  flora::Settings flags;
  std::string config_path;
};

void add_config_flags(CLI::App* app, Inputs& inputs) {
  app->add_option("--config", inputs.config_path, "key=value config file (flags override it)");
  for (const auto& f : kFlags) {
    app->add_option_function<std::string>(
        f.name, [&inputs, key = f.key](const std::string& v) { inputs.flags[key] = v; }, f.help);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw flora::ConfigError({"config: cannot read '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

flora::ExperimentConfig load_config(const Inputs& inputs) {
  flora::Settings settings;
  if (!inputs.config_path.empty()) settings = flora::parse_settings(read_file(inputs.config_path));
  for (const auto& [k, v] : inputs.flags) settings[k] = v;
  if (!settings.count("threads")) {
    if (const char* env = std::getenv("FLORA_SIM_THREADS")) settings["threads"] = env;
  }
  return flora::build_config(settings);
}

void print_summary(const flora::ComparisonReport& report, std::ostream& os) {
  for (const auto& run : report.runs) {
    os << flora::to_string(run.strategy) << ": final global loss "
       << flora::format_real(run.final_global_loss());
    if (run.comm) {
      os << ", communicated params " << run.comm->total_params << " (ratio to full fine-tuning "
         << flora::format_real(run.comm->ratio_to_full_ft) << ")";
    }
    os << "\n";
  }
}

std::filesystem::path sweep_path(const std::string& out, double factor) {
  std::filesystem::path p(out);
  char tag[32];
  std::snprintf(tag, sizeof tag, "_p%g", factor);
  return p.parent_path() / (p.stem().string() + tag + p.extension().string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning simulator for stacked low-rank adapters"};
  app.require_subcommand(1);

  Inputs inputs;
  auto* run = app.add_subcommand("run", "Run one experiment (first configured strategy)");
  auto* compare = app.add_subcommand("compare", "Run every configured strategy on the same task");
  auto* sweep = app.add_subcommand("sweep-scaling", "Re-run with scaling factors 0.01, 0.05, 0.1, 0.2");
  auto* show = app.add_subcommand("show-config", "Print the fully expanded configuration");
  auto* verify = app.add_subcommand("verify", "Run the invariant and oracle acceptance suite");
  for (auto* sub : {run, compare, sweep, show}) add_config_flags(sub, inputs);
  std::string scratch;
  verify->add_option("--scratch", scratch, "Directory for temporary report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*verify) {
      flora::acceptance::Options options;
      if (!scratch.empty()) options.scratch_dir = scratch;
      bool all = true;
      for (const auto& c : flora::acceptance::criteria()) {
        flora::acceptance::CriterionResult r;
        try {
          r = c.run(options);
        } catch (const std::exception& e) {
          r = {c.id, c.name, false, std::string("threw: ") + e.what(), 0.0};
        }
        std::cout << flora::acceptance::format_line(r) << std::endl;
        all = all && r.passed;
      }
      return all ? kExitOk : kExitInvalid;
    }

    const flora::ExperimentConfig cfg = load_config(inputs);
    if (*show) {
      std::cout << flora::serialize_config(cfg);
      return kExitOk;
    }
    if (*run) {
      flora::ComparisonReport report;
      report.runs.push_back(flora::run_experiment(cfg));
      flora::emit_report(flora::to_table(report), cfg.out);
      print_summary(report, std::cout);
      std::cout << "report written to " << cfg.out << "\n";
    } else if (*compare) {
      const auto report = flora::compare_strategies(cfg, cfg.strategies);
      flora::emit_report(flora::to_table(report), cfg.out);
      print_summary(report, std::cout);
      std::cout << "report written to " << cfg.out << "\n";
    } else if (*sweep) {
      for (double factor : kSweepFactors) {
        flora::ExperimentConfig swept = cfg;
        swept.scaling_override = factor;
        const auto report = flora::compare_strategies(swept, swept.strategies);
        const auto path = sweep_path(cfg.out, factor);
        flora::emit_report(flora::to_table(report), path);
        std::cout << "p = " << factor << "\n";
        print_summary(report, std::cout);
        std::cout << "report written to " << path.string() << "\n";
      }
    }
    return kExitOk;
  } catch (const flora::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
