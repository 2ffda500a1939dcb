#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyncfg/bench.hpp"
#include "dyncfg/cfg.hpp"
#include "dyncfg/engine.hpp"
#include "dyncfg/solver.hpp"
#include "dyncfg/tracker.hpp"

namespace dyncfg {

struct PipelineOptions {
    std::vector<std::string> search_paths;
    ExplorationLimits limits;
    std::uint64_t seed = default_seed();
    std::size_t cff_threshold = 8;
    std::size_t timed_runs = 3;
    std::size_t max_rounds = 2;  // re-exploration rounds after the recursive scan
    std::vector<std::string> extra_candidates;
    std::optional<Witness> witness;
};

struct Discovery {
    std::string path;
    std::string name;
    std::string mechanism;
    nlohmann::json chain = nlohmann::json::array();
};

enum class Validation { Pass, Fail, Skipped };

const char* to_string(Validation v);

struct ValidationResult {
    Validation status = Validation::Skipped;
    std::set<std::string> loaded;   // library names loaded during the concrete run
    std::set<std::string> invoked;  // libraries whose code wrote a marker
    std::vector<std::string> missing;
    std::string reason;
};

// Runs the binary with no symbolic inputs: environment, network bytes and time
// come from the witness. Pass iff every expected library is loaded.
ValidationResult concrete_validate(const std::string& binary, const std::optional<Witness>& witness,
                                   const std::set<std::string>& expected, const PipelineOptions& opts);

struct BenchReport {
    std::string benchmark;
    std::size_t steps = 0;
    double seconds = 0;
    CfgMetrics static_metrics;
    CfgMetrics module_metrics;
    std::vector<Discovery> discovered;
    Validation validation = Validation::Skipped;
    std::vector<DispatcherReport> dispatchers;
    std::vector<SmcReport> smc;
    std::vector<std::string> warnings;

    // Not part of the JSON report.
    std::size_t solver_unknowns = 0;
    std::size_t rounds = 0;
    Witness derived_witness;
    ValidationResult validation_detail;

    std::vector<std::string> discovered_names() const;
    nlohmann::json to_json() const;
};

// One analysis run with the recovered graphs kept.
struct Analysis {
    BenchReport report;
    Cfg static_cfg;
    Cfg module_cfg;
    std::set<RopRedirect> rop_redirects;
};

// Phase 1 alone: the main image, no libraries.
Cfg static_baseline(const std::string& binary);

// Phases 1-3 once (no validation, no repeated timing).
Analysis analyze(const std::string& binary, const PipelineOptions& opts, const std::string& name = "");

// All four phases, timing averaged over opts.timed_runs runs.
BenchReport run_pipeline(const std::string& binary, const PipelineOptions& opts, const GroundTruth& gt);

struct Growth {
    double nodes = 0;
    double edges = 0;
    double functions = 0;

    nlohmann::json to_json() const;
};

struct SuiteSummary {
    std::vector<BenchReport> reports;
    std::vector<GroundTruth> truths;
    double precision = 0;
    double recall = 0;
    Growth growth_mean;    // mean of per-benchmark relative growth
    Growth growth_pooled;  // relative growth of suite totals

    nlohmann::json to_json() const;
};

SuiteSummary summarize(std::vector<BenchReport> reports, std::vector<GroundTruth> truths);

enum class ReportFormat { Table, Json };

std::string render(const SuiteSummary& summary, ReportFormat format);

// Evaluates every benchmark directory (one holding ground_truth.json) under `dir`.
SuiteSummary evaluate_suite(const std::string& dir, const PipelineOptions& base, std::size_t jobs = 1);

// Deterministic JSON of the suite with every "seconds" field removed.
std::string strip_seconds(const nlohmann::json& j);

}  // namespace dyncfg
