#pragma once
// End-to-end orchestration: one RunConfig drives bootstrap -> prior training
// -> constrained search -> coefficient fitting -> selection, persisting every
// stage artifact under out_dir with a checksum manifest. Each experiment
// (noise sweep, hyperparameter sweeps, optimizer ablation, timing) is exposed
// as a cmd_* entry point that the CLI maps one-to-one onto subcommands.
//
// Determinism contract: the global seed derives every stage seed (bootstrap,
// data generation, prior init/shuffle, sampling, fitting) through the shared
// seed-derivation hash, so identical configs reproduce every artifact
// byte-for-byte. Wall-clock timings live only in the manifest, never in the
// stage artifacts.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srco/artifacts.hpp"
#include "srco/common.hpp"
#include "srco/dataset.hpp"
#include "srco/fit.hpp"
#include "srco/gp.hpp"
#include "srco/prior.hpp"
#include "srco/sampler.hpp"
#include "srco/vocab.hpp"

namespace srco {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::string out_dir = "out";

  // Target problem: a built-in benchmark by default, or a CSV file when
  // csv_path is set (csv_target names the target column; the remaining
  // columns become features; rows are shuffled into train/test).
  std::string benchmark = "easy_linsin";
  std::string csv_path;
  std::string csv_target;
  double csv_test_fraction = 0.25;

  // Benchmarks whose bootstrap runs populate the template corpus.
  std::vector<std::string> bootstrap_benchmarks = {"easy_linsin", "easy_linlin", "easy_mulcos"};
  int corpus_per_dataset = 200;  // M harvested per dataset

  GpConfig gp;
  PriorConfig prior;
  SamplerConfig sampler;  // its c_max is overridden by the run-level c_max
  FitConfig fit;

  int c_max = 12;  // complexity budget for both the sampling filter and selection
  std::uint64_t seed = 0;

  // Leakage-free selection: carve a validation split out of the training data
  // and select on it instead of the test split (final metrics still reported
  // on the untouched test split).
  bool holdout_selection = false;
  double holdout_fraction = 0.2;

  int jobs = 1;  // accepted for interface stability; stages run serially

  void validate() const;

  std::string corpus_path() const { return out_dir + "/corpus.jsonl"; }
  std::string checkpoint_path() const { return out_dir + "/prior.ckpt"; }
  std::string pool_path() const { return out_dir + "/pool.jsonl"; }
  std::string results_path() const { return out_dir + "/results.jsonl"; }
  std::string loss_csv_path() const { return out_dir + "/loss.csv"; }
  std::string datasets_path() const { return out_dir + "/datasets.jsonl"; }
  std::string manifest_path() const { return out_dir + "/manifest.json"; }
};

// Structured-text config file; unknown keys are rejected with ConfigError.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string write_config_json(const RunConfig& config);  // canonical snapshot

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_json;  // canonical snapshot of the RunConfig
  std::vector<std::pair<std::string, std::string>> artifact_checksums;  // (file, hex digest)
  std::vector<StageTiming> timings;
};

void write_manifest(const std::string& path, const RunManifest& manifest);

// ---------------------------------------------------------------------------
// Shared plumbing

// Number of input variables the shared vocabulary must cover: the max
// dimensionality over the bootstrap benchmarks and the target problem.
int vocab_vars(const RunConfig& config);
Vocab make_vocab(const RunConfig& config);

struct TargetData {
  Dataset train;
  Dataset test;
};

// Deterministic target data: synthetic benchmarks are regenerated from a seed
// derived from the global seed, CSV data is split by a derived shuffle.
TargetData load_target(const RunConfig& config, const Vocab& vocab);

// Benchmark specs (bootstrap set plus synthetic target) with derived seeds.
std::vector<BenchmarkSpec> pipeline_benchmarks(const RunConfig& config);

// ---------------------------------------------------------------------------
// Stage commands. Each writes its artifacts plus an updated manifest listing
// checksums of everything currently in out_dir, and returns its in-memory
// product for callers that keep going.

std::vector<CorpusEntry> cmd_bootstrap(const RunConfig& config);
TrainResult cmd_train_prior(const RunConfig& config);   // reads the corpus file
PoolResult cmd_search(const RunConfig& config);         // reads the checkpoint

struct FitOutcome {
  std::vector<FittedEquation> fitted;
  FittedEquation selected;
};

FitOutcome cmd_fit(const RunConfig& config);            // reads the pool file

struct RunOutcome {
  int corpus_size = 0;
  double init_heldout_ce = 0.0;
  double final_heldout_ce = 0.0;
  PoolStats pool_stats;
  int fitted_count = 0;
  FittedEquation selected;
};

// The full pipeline from scratch: bootstrap -> train -> search -> fit ->
// select, writing corpus/checkpoint/pool/results/loss-CSV/manifest.
RunOutcome cmd_run(const RunConfig& config);

// ---------------------------------------------------------------------------
// Experiment commands

// Freezes the selected equation from the results file and re-evaluates it on
// feature-perturbed test inputs; writes noise_sweep.csv (eta, ln_mse, r2,
// pearson). With assert_monotone, returns false when R^2 increases or ln(MSE)
// decreases along the eta grid by more than jitter.
struct NoiseSweepOutcome {
  std::vector<NoiseSweepRow> rows;
  bool monotone_ok = true;
};
NoiseSweepOutcome cmd_noise_sweep(const RunConfig& config, std::span<const double> etas,
                                  double jitter, bool assert_monotone);

enum class SweepKnob { MaxTerm, MaxTrigVars, Temperature, TopK };
SweepKnob parse_sweep_knob(const std::string& name);  // throws ConfigError
const char* sweep_knob_name(SweepKnob knob);

struct SweepRow {
  double value = 0.0;
  double test_r2 = 0.0;
  std::optional<double> test_pearson;
  int selected_complexity = 0;
  std::string status = "ok";  // error code name when the cell failed
};

// Reruns search + fit per knob value against the existing checkpoint, holding
// every other stage seed fixed; writes sweep_<knob>.csv. Failed cells get a
// status instead of aborting the table.
std::vector<SweepRow> cmd_sweep(const RunConfig& config, SweepKnob knob,
                                std::span<const double> values);

struct AblationArm {
  double train_mse = 0.0;
  double test_mse = 0.0;
  double test_r2 = 0.0;
  std::optional<double> test_pearson;
  long evals_used = 0;
  long budget = 0;
};

struct AblationPair {
  std::uint64_t pair_seed = 0;
  AblationArm gradient;
  AblationArm hillclimb;
};

struct AblationOutcome {
  std::vector<AblationPair> pairs;
  int gradient_wins = 0;  // pairs with strictly lower gradient train MSE
};

// Paired-seed comparison of the gradient fitter against budget-matched
// hill-climbing on a fixed template over the target data; writes ablation.csv.
AblationOutcome cmd_ablate_coeff(const RunConfig& config, const std::string& template_tokens,
                                 int num_pairs);

struct TimingRow {
  std::string tokens;
  int complexity = 0;
  int test_n = 0;
  double median_seconds = 0.0;
};

// Median wall-clock time of evaluating each fitted equation over the test
// split, repeated `repeats` times; writes timing.csv.
std::vector<TimingRow> cmd_timing(const RunConfig& config, int repeats);

// Re-validates every artifact in out_dir: corpus templates parse, the
// checkpoint loads, pool survivors re-pass the filter pipeline and their
// proxy scores recompute to 1e-9, results metrics recompute from stored
// coefficients to 1e-9, and manifest checksums match the files on disk.
// Throws on the first violation; returns the number of checks performed.
int cmd_validate(const RunConfig& config);

}  // namespace srco
