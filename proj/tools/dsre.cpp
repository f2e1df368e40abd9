// Command-line driver: dsre <subcommand> --config <file> [--seed S] [--threads T]
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "dsre/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Doubly stochastic random-environment lab"};
  app.require_subcommand(1, 1);

  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool quiet = false;

  for (const auto& name : dsre::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the environment seed");
    sub->add_option("--threads", threads, "maximum worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("-q,--quiet", quiet, "print only the exit message");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // CLI11 uses 0 for --help; anything else is a usage error.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  dsre::RunOptions opts;
  opts.seed = seed;
  opts.threads = threads;
  const std::string sub = app.get_subcommands().front()->get_name();
  const dsre::RunResult r = dsre::run_experiment(std::filesystem::path(config), sub, opts);

  if (!quiet && r.manifest.contains("verdicts")) {
    for (const auto& v : r.manifest["verdicts"]) {
      std::cout << (v["pass"].get<bool>() ? "PASS " : "FAIL ") << v["check"].get<std::string>()
                << "  statistic=" << v["statistic"].dump() << "  threshold=" << v["threshold"].dump() << '\n';
    }
    for (const auto& w : r.manifest.value("warnings", nlohmann::json::array())) {
      std::cout << "warning: " << w.get<std::string>() << '\n';
    }
  }
  (r.exit_code == 2 ? std::cerr : std::cout) << "dsre " << sub << ": " << r.message << " (exit " << r.exit_code
                                             << ")\n";
  return r.exit_code;
}
