// priq command-line tool: synth, train, eval, ablate, gradcheck, selftest.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
// (NaN, divergence, failed check), 3 I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "priq/priq.hpp"
#include "priq/testing/suites.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

priq::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? priq::RunConfig{} : priq::load_run_config(path);
}

void print_suite(const char* title, const priq::testing::SuiteReport& r) {
  std::printf("%s (%.1f s)\n", title, r.seconds);
  for (const auto& c : r.checks) {
    std::printf("  %-4s %-58s %.3e (bound %.0e) %s\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.value, c.threshold,
                c.detail.c_str());
  }
}

int run_synth(const std::string& config_path, const std::string& out) {
  const auto cfg = config_or_default(config_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = priq::synth::build_dataset(cfg.dataset.params);
  priq::synth::export_dataset(ds, out);
  std::printf("wrote %zu scenes, %zu images to %s (%.1f s)\n", ds.scenes.size(), ds.num_images(), out.c_str(),
              seconds_since(t0));
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed, bool quiet) {
  const auto cfg = priq::load_run_config(config_path);
  const auto ds = priq::synth::build_dataset(cfg.dataset.params);
  const auto split = priq::synth::split_scenes(ds, cfg.dataset.train_fraction, cfg.dataset.split_seed);
  const std::uint64_t s = seed.value_or(cfg.seeds.front());
  std::printf("training %s (%s), seed %llu, %zu train images, %zu steps/epoch\n",
              std::string(priq::to_string(cfg.variant)).c_str(), cfg.model_config(s).toggles().c_str(),
              static_cast<unsigned long long>(s), split.train.num_images(), priq::steps_per_epoch(cfg, split.train));
  const auto t0 = std::chrono::steady_clock::now();
  auto progress = [&](std::size_t epoch, double loss) {
    if (!quiet) std::printf("epoch %3zu  loss %.6f  lr %.3g  (%.0f s)\n", epoch + 1, loss, priq::learning_rate_at(cfg, epoch), seconds_since(t0));
    std::fflush(stdout);
  };
  const auto result = priq::train(cfg, split.train, s, progress);
  priq::checkpoint_save(result, out);
  std::printf("initial loss %.6f, final loss %.6f; checkpoint %s\n", result.initial_loss, result.loss_curve.back(),
              out.c_str());
  return kExitOk;
}

int run_eval(const std::string& ckpt, const std::vector<std::size_t>& Ts, std::optional<std::uint64_t> seed,
             const std::string& config_path) {
  std::optional<priq::RunConfig> expected;
  if (!config_path.empty()) expected = priq::load_run_config(config_path);
  const auto run = priq::checkpoint_load(ckpt, expected ? &*expected : nullptr);
  const auto& cfg = run.config;
  const auto ds = priq::synth::build_dataset(cfg.dataset.params);
  const auto split = priq::synth::split_scenes(ds, cfg.dataset.train_fraction, cfg.dataset.split_seed);
  const std::uint64_t pseed = seed.value_or(cfg.partition_seed);
  std::printf("T,lcc,srocc\n");
  for (std::size_t T : Ts) {
    try {
      const auto r = priq::evaluate(run.model, split.test, T, pseed, cfg.crop_size);
      std::printf("%zu,%.6f,%.6f\n", T, r.lcc, r.srocc);
    } catch (const priq::UndefinedMetricError& e) {
      std::printf("%zu,nan,nan  # %s\n", T, e.what());
    }
  }
  return kExitOk;
}

int run_ablate(const std::string& config_path, const std::string& out, std::size_t jobs) {
  auto grid = priq::parse_ablation_grid(priq::read_text_file(config_path));
  if (jobs > 0) grid.jobs = jobs;
  const auto ds = priq::synth::build_dataset(grid.base.dataset.params);
  std::printf("ablation: %zu arms x %zu seeds, T in {%s}, %zu parallel runs\n", grid.arms.size(), grid.base.seeds.size(),
              priq::config_detail::join(grid.base.T_values).c_str(), grid.jobs);
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = priq::ablation_run(grid, ds, [&](const priq::AblationProgress& p) {
    std::printf("  done %-32s seed %llu  final loss %.5f  (%.0f s)\n", p.arm.c_str(),
                static_cast<unsigned long long>(p.seed), p.final_loss, seconds_since(t0));
    std::fflush(stdout);
  });
  priq::write_report(report, out);
  std::printf("variant,toggles,T,median_lcc,median_srocc\n");
  for (const auto& m : report.medians()) {
    std::printf("%s,%s,%zu,%.4f,%.4f\n", m.variant.c_str(), m.toggles.c_str(), m.T, m.lcc, m.srocc);
  }
  std::printf("report written to %s\n", out.c_str());
  return kExitOk;
}

int run_gradcheck() {
  const auto r = priq::testing::gradient_suite();
  print_suite("gradient checks", r);
  return r.passed() ? kExitOk : kExitNumerical;
}

int run_selftest() {
  const auto oracles = priq::testing::oracle_suite();
  const auto pseudo = priq::testing::pseudo_reference_suite();
  const auto arch = priq::testing::architecture_suite();
  print_suite("oracle comparisons", oracles);
  print_suite("pseudo-reference properties", pseudo);
  print_suite("architecture properties", arch);
  return oracles.passed() && pseudo.passed() && arch.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-wise no-reference image quality assessment"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> Ts;
  std::size_t jobs = 0;
  bool quiet = false;

  auto* synth = app.add_subcommand("synth", "Build the synthetic corpus (manifest.csv + PFM images)");
  synth->add_option("--config", config_path, "Config file (dataset.* keys); defaults apply when omitted")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model and write a checkpoint");
  train->add_option("--config", config_path, "Run config file")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--seed", seed, "Run seed (default: first entry of seeds)");
  train->add_flag("--quiet", quiet, "Only print the summary");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", ckpt, "Checkpoint path")->required();
  eval->add_option("--T", Ts, "Test set sizes")->required()->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "Partition seed (default: partition_seed of the run)");
  eval->add_option("--config", config_path, "Check that the checkpoint architecture matches this config");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid; writes CSV tables and an SVG plot");
  ablate->add_option("--config", config_path, "Grid config file")->required();
  ablate->add_option("--out", out, "Report directory")->required();
  ablate->add_option("--jobs", jobs, "Concurrent runs (overrides grid.jobs)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* selftest = app.add_subcommand("selftest", "Oracle and property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return run_synth(config_path, out);
    if (*train) return run_train(config_path, out, seed, quiet);
    if (*eval) return run_eval(ckpt, Ts, seed, config_path);
    if (*ablate) return run_ablate(config_path, out, jobs);
    if (*gradcheck) return run_gradcheck();
    if (*selftest) return run_selftest();
  } catch (const priq::IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const priq::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const priq::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
