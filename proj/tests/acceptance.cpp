// Acceptance run: one line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "dyncfg/bench.hpp"
#include "dyncfg/evalpipe.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace dyncfg;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    if (!ok) ++failures;
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(prec);
    o << v;
    return o.str();
}

const BenchReport* find(const SuiteSummary& s, const std::string& name) {
    for (const auto& r : s.reports)
        if (r.benchmark == name) return &r;
    return nullptr;
}

}  // namespace

int main() {
    const fs::path dir = testsupport::scratch_dir("acceptance");
    generate_suite(dir.string());
    PipelineOptions base;

    // Library detection and runtime.
    const auto t0 = std::chrono::steady_clock::now();
    const SuiteSummary suite = evaluate_suite(dir.string(), base, 1);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        double slowest = 0;
        for (const auto& r : suite.reports) slowest = std::max(slowest, r.seconds);
        const bool ok = suite.reports.size() == 16 && suite.precision == 1.0 && suite.recall == 1.0 && wall < 120.0 &&
                        slowest < 10.0;
        report("detection", ok,
               std::to_string(suite.reports.size()) + " benchmarks, precision " + fmt(suite.precision) + ", recall " +
                   fmt(suite.recall) + ", suite " + fmt(wall, 2) + " s (3 timed runs each), slowest benchmark " +
                   fmt(slowest, 2) + " s");
    }

    // Structural substitutes for the absolute table values.
    {
        std::string why;
        for (std::size_t i = 0; i < suite.reports.size(); ++i) {
            const auto& r = suite.reports[i];
            const auto& g = suite.truths[i];
            if (!(r.module_metrics.nodes > r.static_metrics.nodes && r.module_metrics.edges > r.static_metrics.edges &&
                  r.module_metrics.functions > r.static_metrics.functions))
                why += " " + r.benchmark + ":no-growth";
            if (r.module_metrics.loaded_objects != 1 + g.expected_libraries.size()) why += " " + r.benchmark + ":objects";
        }
        std::size_t others = 0;
        bool uniform = true;
        for (const auto& r : suite.reports) {
            if (r.benchmark == "multi_stage" || r.benchmark == "signal_handler") continue;
            if (others == 0) others = r.module_metrics.loaded_objects;
            uniform = uniform && r.module_metrics.loaded_objects == others;
        }
        const BenchReport* ms = find(suite, "multi_stage");
        const BenchReport* sh = find(suite, "signal_handler");
        const bool extra2 = uniform && ms && sh && ms->module_metrics.loaded_objects == others + 2 &&
                            sh->module_metrics.loaded_objects == others + 2;
        if (!extra2) why += " object-pattern";
        const Growth& m = suite.growth_mean;
        const Growth& p = suite.growth_pooled;
        const bool positive = m.nodes > 0 && m.edges > 0 && m.functions > 0 && p.nodes > 0 && p.edges > 0 && p.functions > 0;
        if (!positive) why += " growth";
        const std::string table = render(suite, ReportFormat::Table);
        const bool header = table.find("29.8") != std::string::npos && table.find("26.5") != std::string::npos &&
                            table.find("41.6") != std::string::npos && table.find("per-benchmark mean") != std::string::npos &&
                            table.find("pooled") != std::string::npos;
        if (!header) why += " header";
        report("table-substitutes", why.empty(),
               why.empty() ? "module > static everywhere; objects " + std::to_string(others) + " vs " +
                                 std::to_string(others + 2) + "; growth mean nodes/edges/functions " +
                                 fmt(100 * m.nodes, 1) + "/" + fmt(100 * m.edges, 1) + "/" + fmt(100 * m.functions, 1) +
                                 " %, pooled " + fmt(100 * p.nodes, 1) + "/" + fmt(100 * p.edges, 1) + "/" +
                                 fmt(100 * p.functions, 1) + " %"
                           : "violations:" + why);
    }

    // String extraction properties.
    {
        const auto run = testsupport::extraction_properties(kDefaultSeed, 200);
        bool covered = true;
        for (const char* k : {"symbolic-pointer", "concrete", "one-candidate", "no-candidate"}) covered = covered && run.tally.count(k);
        std::string detail = std::to_string(run.instances) + " instances, " + std::to_string(run.violations) + " violations";
        for (const auto& [k, v] : run.tally) detail += ", " + k + " " + std::to_string(v);
        if (!run.ok()) detail += "; first: " + run.first_violation;
        report("string-extraction", run.ok() && covered, detail);
    }

    // Symbolic target resolution.
    {
        const auto sound = testsupport::resolution_soundness(kDefaultSeed, 500);
        const auto brute = testsupport::resolution_bruteforce(kDefaultSeed, 100);
        std::string detail = std::to_string(sound.instances) + " random instances with " +
                             std::to_string(sound.violations) + " out-of-region addresses; " +
                             std::to_string(brute.instances) + " 16-bit instances with " +
                             std::to_string(brute.violations) + " mismatches against brute force";
        if (!sound.ok()) detail += "; " + sound.first_violation;
        if (!brute.ok()) detail += "; " + brute.first_violation;
        report("target-resolution", sound.ok() && brute.ok(), detail);
    }

    // Solver against enumeration, and no Unknown answers on the suite.
    {
        const auto run = testsupport::solver_oracle(kDefaultSeed, 1000);
        std::size_t unknowns = 0;
        for (const auto& r : suite.reports) unknowns += r.solver_unknowns;
        auto tally = [&](const char* k) { return run.tally.count(k) ? run.tally.at(k) : 0; };
        std::string detail = std::to_string(run.instances) + " instances (sat " + std::to_string(tally("sat")) +
                             ", unsat " + std::to_string(tally("unsat")) + ", unknown " + std::to_string(tally("unknown")) +
                             "), " + std::to_string(run.violations) + " disagreements; suite unknowns " +
                             std::to_string(unknowns);
        if (!run.ok()) detail += "; " + run.first_violation;
        report("solver-oracle", run.ok() && unknowns == 0, detail);
    }

    // Concrete validation agrees with discovery; a wrong witness fails.
    {
        std::string why;
        for (const auto& r : suite.reports) {
            const auto names = r.discovered_names();
            const std::set<std::string> found(names.begin(), names.end());
            if (r.validation != Validation::Pass) why += " " + r.benchmark + ":" + to_string(r.validation);
            else if (r.validation_detail.loaded != found) why += " " + r.benchmark + ":loaded-set";
        }
        PipelineOptions o = base;
        o.search_paths = {(dir / "network_socket" / "libs").string()};
        Witness bad = load_witness((dir / "network_socket" / "witness.json").string());
        bad.network = {'l', 'i', 'b', 'n', 'o', 'p', 'e', '.', 's', 'o', 0};
        const ValidationResult neg =
            concrete_validate((dir / "network_socket" / "main.sbf").string(), bad, {"libnet.so"}, o);
        if (neg.status != Validation::Fail) why += " negative-control:" + std::string(to_string(neg.status));
        report("validation", why.empty(),
               why.empty() ? "16/16 pass with loaded set equal to discovered set; wrong network payload gives fail"
                           : "violations:" + why);
    }

    // Dispatcher and self-modifying code fixtures.
    {
        std::string why;
        PipelineOptions o = base;
        o.timed_runs = 1;
        const Analysis cff = analyze((dir / "fixtures" / "cff_dispatcher" / "main.sbf").string(), o);
        if (cff.report.dispatchers.size() != 1)
            why += " cff_dispatcher:" + std::to_string(cff.report.dispatchers.size());
        const BenchReport* simple = find(suite, "simple_dlopen");
        if (!simple || !simple->dispatchers.empty()) why += " simple_dlopen";

        const std::string smc_path = (dir / "fixtures" / "smc_patch" / "main.sbf").string();
        const Analysis smc = analyze(smc_path, o);
        const BinaryImage img = parse_image(*read_host_file(smc_path));
        const SymbolEntry* redirected = img.find_symbol("redirected");
        std::size_t jmp = 0, push = 0;
        for (const auto& r : smc.report.smc) {
            if (r.kind == SmcKind::JmpCallHook) {
                ++jmp;
                if (r.value != r.target + 8 + static_cast<std::uint64_t>(static_cast<std::int64_t>(r.rel)))
                    why += " jmp-target";
            }
            if (r.kind == SmcKind::PushRetRedirect) {
                ++push;
                if (!redirected || r.value != kMainBase + redirected->value) why += " push-value";
            }
        }
        if (jmp != 1) why += " jmp-count:" + std::to_string(jmp);
        if (push != 1) why += " push-count:" + std::to_string(push);
        report("dispatcher-and-smc", why.empty(),
               why.empty() ? "1 dispatcher on cff_dispatcher, 0 on simple_dlopen; one JmpCallHook and one PushRetRedirect"
                           : "violations:" + why);
    }

    // Determinism.
    {
        const SuiteSummary again = evaluate_suite(dir.string(), base, 4);
        const bool same = strip_seconds(suite.to_json()) == strip_seconds(again.to_json());
        report("determinism", same,
               same ? "two suite runs (1 and 4 workers) give identical JSON without timing fields"
                    : "suite JSON differs between runs");
    }

    // Image round trip and DOT grammar.
    {
        std::string why;
        std::size_t images = 0, graphs = 0;
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            const auto ext = e.path().extension();
            if (ext != ".sbf" && ext != ".so") continue;
            const auto bytes = *read_host_file(e.path().string());
            try {
                if (emit_image(parse_image(bytes)) != bytes) why += " " + e.path().string();
            } catch (const std::exception& ex) {
                why += " " + e.path().string() + ":" + ex.what();
            }
            ++images;
        }
        for (const auto& r : suite.reports) {
            PipelineOptions o = base;
            o.search_paths = {(dir / r.benchmark / "libs").string()};
            const std::string bin = (dir / r.benchmark / "main.sbf").string();
            for (const Cfg& g : {static_baseline(bin), analyze(bin, o).module_cfg}) {
                std::string err;
                if (!testsupport::DotChecker(to_dot(g)).ok(&err)) why += " " + r.benchmark + ":" + err;
                ++graphs;
            }
        }
        report("round-trip", why.empty() && images > 0,
               why.empty() ? std::to_string(images) + " image files byte-identical after parse and emit; " +
                                 std::to_string(graphs) + " DOT graphs accepted by the grammar check"
                           : "violations:" + why);
    }

    std::error_code ec;
    fs::remove_all(dir, ec);
    std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all criteria passed")
              << std::endl;
    return failures ? 1 : 0;
}
