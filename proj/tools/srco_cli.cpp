// Command-line front end: every stage and experiment of the pipeline behind
// one binary. Exit codes: 0 success, 2 configuration error, 3 stage failure,
// 4 assertion-mode violation.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srco/pipeline.hpp"

namespace {

using namespace srco;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitAssert = 4;

struct Overrides {
  std::string config_path;
  std::string out_dir;
  std::string benchmark;
  std::string csv_path;
  std::string csv_target;
  std::uint64_t seed = 0;
  int jobs = 0;
  bool seed_set = false;
  bool jobs_set = false;
  bool holdout = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Config file (structured text)");
  cmd->add_option("--out-dir", o.out_dir, "Artifact directory");
  cmd->add_option("--benchmark", o.benchmark, "Built-in benchmark name");
  cmd->add_option("--csv", o.csv_path, "CSV dataset path (overrides --benchmark)");
  cmd->add_option("--csv-target", o.csv_target, "Target column for --csv");
  cmd->add_option("--seed", o.seed, "Global seed")->each([&](const std::string&) {
    o.seed_set = true;
  });
  cmd->add_option("--jobs", o.jobs, "Worker count (stages currently run serially)")
      ->each([&](const std::string&) { o.jobs_set = true; });
  cmd->add_flag("--holdout", o.holdout,
                "Select on a validation split carved from training data");
}

RunConfig build_config(const Overrides& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_run_config(o.config_path);
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (!o.benchmark.empty()) c.benchmark = o.benchmark;
  if (!o.csv_path.empty()) c.csv_path = o.csv_path;
  if (!o.csv_target.empty()) c.csv_target = o.csv_target;
  if (o.seed_set) c.seed = o.seed;
  if (o.jobs_set) c.jobs = o.jobs;
  if (o.holdout) c.holdout_selection = true;
  c.validate();
  return c;
}

void print_selected(const RunConfig& config, const FittedEquation& selected) {
  const Vocab vocab = make_vocab(config);
  std::printf("selected: %s\n", selected.infix(vocab).c_str());
  std::printf("  tokens:     %s\n", vocab.tokens_to_string(selected.tmpl.tokens).c_str());
  std::printf("  complexity: %d\n", selected.complexity_value);
  std::printf("  test MSE:   %s\n", format_double(selected.test_mse).c_str());
  std::printf("  test R^2:   %s\n", format_double(selected.test_r2).c_str());
  if (selected.test_pearson)
    std::printf("  test rho:   %s\n", format_double(*selected.test_pearson).c_str());
  std::printf("  results:    %s\n", config.results_path().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic regression with a learned structural prior over equation templates"};
  app.require_subcommand(1);

  Overrides o;

  CLI::App* bootstrap = app.add_subcommand(
      "bootstrap", "Evolve equation templates on the bootstrap benchmarks into a corpus");
  add_common(bootstrap, o);

  CLI::App* train_prior =
      app.add_subcommand("train-prior", "Train the autoregressive prior on the corpus");
  add_common(train_prior, o);

  CLI::App* search = app.add_subcommand(
      "search", "Sample and filter candidate templates from the trained prior");
  add_common(search, o);

  CLI::App* fitcmd =
      app.add_subcommand("fit", "Fit coefficients for every pool candidate and select");
  add_common(fitcmd, o);

  CLI::App* run = app.add_subcommand("run", "Full pipeline: bootstrap, train, search, fit");
  add_common(run, o);

  CLI::App* noise = app.add_subcommand(
      "noise-sweep", "Re-evaluate the selected equation under test-input perturbations");
  add_common(noise, o);
  std::vector<double> etas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double jitter = 0.005;
  bool assert_monotone = false;
  noise->add_option("--etas", etas, "Noise levels to sweep");
  noise->add_option("--jitter", jitter, "Tolerance for the monotone-degradation check");
  noise->add_flag("--assert-monotone", assert_monotone,
                  "Exit nonzero when degradation is non-monotone beyond the jitter");

  CLI::App* sweep =
      app.add_subcommand("sweep", "Rerun search+fit while varying one sampler knob");
  add_common(sweep, o);
  std::string knob_name;
  std::vector<double> knob_values;
  sweep->add_option("--knob", knob_name, "max_term | max_trig_vars | temperature | top_k")
      ->required();
  sweep->add_option("--values", knob_values, "Values to sweep")->required();

  CLI::App* ablate = app.add_subcommand(
      "ablate-coeff", "Compare gradient fitting against budget-matched hill-climbing");
  add_common(ablate, o);
  std::string ablate_template = "COF x0 mul COF x1 mul sin add";
  int ablate_pairs = 10;
  ablate->add_option("--template", ablate_template, "Postfix template under ablation");
  ablate->add_option("--pairs", ablate_pairs, "Number of paired seeds");

  CLI::App* timing =
      app.add_subcommand("timing", "Median per-equation evaluation time on the test split");
  add_common(timing, o);
  int repeats = 5;
  timing->add_option("--repeats", repeats, "Timing repetitions per equation");

  CLI::App* validate =
      app.add_subcommand("validate", "Re-check every artifact in the output directory");
  add_common(validate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig config = build_config(o);

    if (bootstrap->parsed()) {
      const auto corpus = cmd_bootstrap(config);
      std::printf("corpus: %zu templates -> %s\n", corpus.size(),
                  config.corpus_path().c_str());
    } else if (train_prior->parsed()) {
      const TrainResult r = cmd_train_prior(config);
      std::printf("trained %d epochs on %d templates (%d held out)\n",
                  static_cast<int>(r.history.size()), r.train_count, r.heldout_count);
      std::printf("  held-out CE: %s -> %s\n", format_double(r.init_heldout_ce).c_str(),
                  format_double(r.history.empty() ? r.init_heldout_ce
                                                  : r.history.back().heldout_ce)
                      .c_str());
      std::printf("  checkpoint:  %s\n", config.checkpoint_path().c_str());
    } else if (search->parsed()) {
      const PoolResult pool = cmd_search(config);
      std::printf("pool: %d survivors of %d samples -> %s\n", pool.stats.survivors,
                  pool.stats.sampled, config.pool_path().c_str());
      std::printf(
          "  rejected: syntax %d, semantic %d, complexity %d, budget %d, overlength %d; "
          "merged %d duplicates\n",
          pool.stats.syntax_rejected, pool.stats.semantic_rejected,
          pool.stats.complexity_rejected, pool.stats.budget_rejected,
          pool.stats.overlength_rejected, pool.stats.duplicates_merged);
    } else if (fitcmd->parsed()) {
      const FitOutcome outcome = cmd_fit(config);
      std::printf("fitted %zu candidates\n", outcome.fitted.size());
      print_selected(config, outcome.selected);
    } else if (run->parsed()) {
      const RunOutcome outcome = cmd_run(config);
      std::printf("corpus %d templates; held-out CE %s -> %s; pool %d survivors\n",
                  outcome.corpus_size, format_double(outcome.init_heldout_ce).c_str(),
                  format_double(outcome.final_heldout_ce).c_str(),
                  outcome.pool_stats.survivors);
      print_selected(config, outcome.selected);
    } else if (noise->parsed()) {
      const NoiseSweepOutcome outcome = cmd_noise_sweep(config, etas, jitter, assert_monotone);
      std::printf("eta,ln_mse,r2,pearson\n");
      for (const NoiseSweepRow& r : outcome.rows)
        std::printf("%s,%s,%s,%s\n", format_double(r.eta).c_str(),
                    format_double(r.metrics.log_mse).c_str(),
                    format_double(r.metrics.r2).c_str(),
                    r.metrics.pearson ? format_double(*r.metrics.pearson).c_str() : "nan");
      if (assert_monotone && !outcome.monotone_ok) {
        std::fprintf(stderr, "assertion failed: degradation is not monotone within jitter\n");
        return kExitAssert;
      }
    } else if (sweep->parsed()) {
      const auto table = cmd_sweep(config, parse_sweep_knob(knob_name), knob_values);
      std::printf("value,test_r2,test_pearson,selected_complexity,status\n");
      for (const SweepRow& r : table)
        std::printf("%s,%s,%s,%d,%s\n", format_double(r.value).c_str(),
                    format_double(r.test_r2).c_str(),
                    r.test_pearson ? format_double(*r.test_pearson).c_str() : "nan",
                    r.selected_complexity, r.status.c_str());
    } else if (ablate->parsed()) {
      const AblationOutcome outcome = cmd_ablate_coeff(config, ablate_template, ablate_pairs);
      std::printf("gradient wins %d of %zu paired seeds (strictly lower train MSE)\n",
                  outcome.gradient_wins, outcome.pairs.size());
      for (size_t i = 0; i < outcome.pairs.size(); ++i) {
        const AblationPair& p = outcome.pairs[i];
        std::printf("  pair %zu: gradient MSE %s (R^2 %s) vs hillclimb MSE %s (R^2 %s)\n", i,
                    format_double(p.gradient.train_mse).c_str(),
                    format_double(p.gradient.test_r2).c_str(),
                    format_double(p.hillclimb.train_mse).c_str(),
                    format_double(p.hillclimb.test_r2).c_str());
      }
    } else if (timing->parsed()) {
      const auto table = cmd_timing(config, repeats);
      std::printf("tokens,complexity,test_n,median_seconds\n");
      for (const TimingRow& r : table)
        std::printf("%s,%d,%d,%s\n", r.tokens.c_str(), r.complexity, r.test_n,
                    format_double(r.median_seconds).c_str());
    } else if (validate->parsed()) {
      const int checks = cmd_validate(config);
      std::printf("ok: %d checks passed in %s\n", checks, config.out_dir.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", error_code_name(e.code()), e.what());
    return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitStage;
  }
  return kExitOk;
}
