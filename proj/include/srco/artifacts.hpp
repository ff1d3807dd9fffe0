#pragma once
// Artifact files: line-delimited structured-text corpora, pools, and results
// with schema-version headers, plus CSV tables for plots. Writers format
// numbers with shortest round-trip notation and fixed field order so reruns
// with identical configs produce byte-identical files; readers re-validate
// content (templates must parse, fingerprints must match).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srco/fit.hpp"
#include "srco/gp.hpp"
#include "srco/prior.hpp"
#include "srco/sampler.hpp"

namespace srco {

inline constexpr int kArtifactSchemaVersion = 1;

std::string json_escape(std::string_view s);
std::string hex64(uint64_t v);

// ---------------------------------------------------------------------------
// Corpus: header record, then {"dataset","tokens","train_r2"} per template.

void write_corpus_file(const std::string& path, std::span<const CorpusEntry> corpus,
                       const Vocab& vocab);
std::vector<CorpusEntry> read_corpus_file(const std::string& path, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Pool: header record, {"tokens","proxy_score","complexity"} per survivor,
// then a trailing rejection-stats record.

void write_pool_file(const std::string& path, const PoolResult& pool, const Vocab& vocab);
PoolResult read_pool_file(const std::string& path, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Results: header record, one record per fitted candidate, then the selected
// equation. Wall-clock cost is recorded as deterministic evaluation counts
// (fit_evals); wall times live in the run manifest, keeping this file
// byte-stable across reruns.

struct ResultsFile {
  std::vector<FittedEquation> fitted;
  FittedEquation selected;
  int c_max = 0;
};

void write_results_file(const std::string& path, std::span<const FittedEquation> fitted,
                        const FittedEquation& selected, int c_max, const Vocab& vocab);
ResultsFile read_results_file(const std::string& path, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Prior training log: "epoch,train_ce,heldout_ce", one row per epoch.

void write_loss_csv(const std::string& path, const TrainResult& result);

// ---------------------------------------------------------------------------
// Benchmark spec file: one {"name","tier","d","expression","box","seed"}
// record per benchmark.

void write_benchmark_specs(const std::string& path, std::span<const BenchmarkSpec> specs);
std::vector<BenchmarkSpec> read_benchmark_specs(const std::string& path);

// ---------------------------------------------------------------------------
// Generic CSV (sweep / noise / ablation / timing tables)

void write_csv(const std::string& path, std::span<const std::string> header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace srco
