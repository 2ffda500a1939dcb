#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dyncfg/bench.hpp"
#include "dyncfg/evalpipe.hpp"

namespace fs = std::filesystem;
using namespace dyncfg;

namespace {

constexpr int kOk = 0, kAnalysisError = 1, kValidationFailure = 2, kUsage = 3;

struct Common {
    std::vector<std::string> lib_paths;
    std::size_t max_states = 32;
    std::size_t steps = 10000;
    std::uint64_t seed = kDefaultSeed;
    std::size_t cff_threshold = 8;
    std::string out;
    std::string format = "json";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--lib-path", c.lib_paths, "Library search directory (repeatable)");
    cmd->add_option("--max-states", c.max_states, "Bound on simultaneously active states")->check(CLI::Range(1, 1 << 20));
    cmd->add_option("--steps", c.steps, "Exploration step budget")->check(CLI::Range(1, 1 << 30));
    cmd->add_option("--seed", c.seed, "Solver seed (DYNCFG_SEED overrides)");
    cmd->add_option("--cff-threshold", c.cff_threshold, "Successor count marking a dispatcher")->check(CLI::Range(1, 1 << 20));
    cmd->add_option("--out", c.out, "Output file (default: standard output)");
    cmd->add_option("--format", c.format, "json or table")->check(CLI::IsMember({"json", "table"}));
}

PipelineOptions options(const Common& c) {
    PipelineOptions o;
    o.search_paths = c.lib_paths;
    o.limits.max_active = c.max_states;
    o.limits.budget = c.steps;
    o.cff_threshold = c.cff_threshold;
    o.seed = c.seed;
    if (const char* s = std::getenv("DYNCFG_SEED"); s && *s) o.seed = default_seed();
    return o;
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + out);
    f << text;
}

int run_analyze(const std::string& binary, const Common& c) {
    if (!fs::is_regular_file(binary)) {
        std::cerr << "error: no such file: " << binary << "\n";
        return kAnalysisError;
    }
    PipelineOptions o = options(c);
    const fs::path dir = fs::path(binary).parent_path();
    if (o.search_paths.empty() && fs::is_directory(dir / "libs")) o.search_paths.push_back((dir / "libs").string());
    GroundTruth gt;
    gt.benchmark = fs::path(binary).stem().string();
    if (fs::exists(dir / "ground_truth.json")) gt = load_ground_truth((dir / "ground_truth.json").string());
    if (fs::exists(dir / "witness.json")) o.witness = load_witness((dir / "witness.json").string());
    BenchReport r = run_pipeline(binary, o, gt);
    if (c.format == "table") emit(c.out, render(summarize({r}, {gt}), ReportFormat::Table));
    else emit(c.out, r.to_json().dump(2) + "\n");
    if (r.validation == Validation::Fail) {
        std::cerr << "validation failed: ";
        for (const auto& m : r.validation_detail.missing) std::cerr << m << " ";
        std::cerr << "\n";
        return kValidationFailure;
    }
    return kOk;
}

int run_eval(const std::string& dir, const Common& c, std::size_t jobs) {
    if (!fs::is_directory(dir)) {
        std::cerr << "error: no such directory: " << dir << "\n";
        return kAnalysisError;
    }
    SuiteSummary s = evaluate_suite(dir, options(c), jobs);
    emit(c.out, render(s, c.format == "table" ? ReportFormat::Table : ReportFormat::Json));
    for (const auto& r : s.reports)
        if (r.validation == Validation::Fail) {
            std::cerr << "validation failed: " << r.benchmark << "\n";
            return kValidationFailure;
        }
    return kOk;
}

int run_dot(const std::string& binary, const std::string& phase, const Common& c) {
    if (!fs::is_regular_file(binary)) {
        std::cerr << "error: no such file: " << binary << "\n";
        return kAnalysisError;
    }
    PipelineOptions o = options(c);
    const fs::path dir = fs::path(binary).parent_path();
    if (o.search_paths.empty() && fs::is_directory(dir / "libs")) o.search_paths.push_back((dir / "libs").string());
    const Cfg g = phase == "static" ? static_baseline(binary) : analyze(binary, o).module_cfg;
    emit(c.out, to_dot(g));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Control flow graph recovery for programs that load code at run time"};
    app.require_subcommand(1);

    std::string gen_dir;
    auto* gen = app.add_subcommand("gen-bench", "Write the benchmark suite and fixtures");
    gen->add_option("dir", gen_dir, "Output directory")->required();

    Common ac;
    std::string binary;
    auto* analyze_cmd = app.add_subcommand("analyze", "Run the four-phase pipeline on one binary");
    analyze_cmd->add_option("binary", binary, "SBF executable")->required();
    add_common(analyze_cmd, ac);

    Common ec;
    std::string eval_dir;
    std::size_t jobs = 1;
    auto* eval = app.add_subcommand("eval", "Evaluate every benchmark under a directory");
    eval->add_option("dir", eval_dir, "Suite directory")->required();
    eval->add_option("--jobs", jobs, "Benchmarks evaluated in parallel")->check(CLI::Range(1, 256));
    add_common(eval, ec);

    Common dc;
    std::string dot_binary, phase = "module";
    auto* dot = app.add_subcommand("dot", "Write a CFG in DOT format");
    dot->add_option("binary", dot_binary, "SBF executable")->required();
    dot->add_option("--phase", phase, "static or module")->check(CLI::IsMember({"static", "module"}));
    add_common(dot, dc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen) {
            const SuiteManifest m = generate_suite(gen_dir);
            std::cout << "wrote " << m.benchmarks.size() << " benchmarks and " << m.fixtures.size() << " fixtures to "
                      << m.dir << "\n";
            return kOk;
        }
        if (*analyze_cmd) return run_analyze(binary, ac);
        if (*eval) return run_eval(eval_dir, ec, jobs);
        if (*dot) return run_dot(dot_binary, phase, dc);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kAnalysisError;
    }
    return kUsage;
}
