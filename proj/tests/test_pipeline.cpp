#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dyncfg/bench.hpp"
#include "dyncfg/evalpipe.hpp"
#include "dyncfg/hooks.hpp"
#include "support.hpp"

using namespace dyncfg;
namespace fs = std::filesystem;

namespace {

const fs::path& suite_dir() {
    static const fs::path dir = [] {
        const fs::path d = testsupport::scratch_dir("pipeline");
        generate_suite(d.string());
        return d;
    }();
    return dir;
}

std::string main_of(const std::string& name) { return (suite_dir() / name / "main.sbf").string(); }

PipelineOptions options_for(const std::string& name) {
    PipelineOptions o;
    o.search_paths = {(suite_dir() / name / "libs").string()};
    o.timed_runs = 1;
    const fs::path w = suite_dir() / name / "witness.json";
    if (fs::exists(w)) o.witness = load_witness(w.string());
    return o;
}

BenchReport report_of(const std::string& name) {
    return run_pipeline(main_of(name), options_for(name), load_ground_truth((suite_dir() / name / "ground_truth.json").string()));
}

bool chain_has(const Discovery& d, const std::string& kind) {
    for (const auto& e : d.chain)
        if (e.value("kind", "") == kind) return true;
    return false;
}

}  // namespace

TEST_CASE("bench: suite has 16 benchmarks and 2 fixtures on disk") {
    const auto m = nlohmann::json::parse(std::ifstream(suite_dir() / "manifest.json"));
    CHECK(m["benchmarks"].size() == 16);
    CHECK(m["fixtures"].size() == 2);
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(suite_dir()))
        if (fs::exists(e.path() / "ground_truth.json")) {
            ++dirs;
            CHECK(fs::exists(e.path() / "main.sbf"));
            CHECK(fs::exists(e.path() / "witness.json"));
            CHECK(fs::is_directory(e.path() / "libs"));
        }
    CHECK(dirs == 16);
    CHECK(fs::exists(suite_dir() / "fixtures" / "cff_dispatcher" / "main.sbf"));
    CHECK(fs::exists(suite_dir() / "fixtures" / "smc_patch" / "main.sbf"));
}

TEST_CASE("bench: ground truth and witness survive a json round trip") {
    for (const auto& b : build_suite()) {
        const GroundTruth g = GroundTruth::from_json(b.truth.to_json());
        CHECK(g.expected_libraries == b.truth.expected_libraries);
        CHECK(g.expected_min_objects == b.truth.expected_min_objects);
        const Witness w = Witness::from_json(b.witness.to_json());
        CHECK(w.env == b.witness.env);
        CHECK(w.network == b.witness.network);
        CHECK(w.time == b.witness.time);
    }
    CHECK(from_hex(to_hex({0x00, 0xAB, 0x10})) == std::vector<std::uint8_t>{0x00, 0xAB, 0x10});
}

TEST_CASE("bench: every load mechanism appears in the suite") {
    std::set<std::string> mechs;
    for (const auto& b : build_suite()) mechs.insert(b.truth.mechanism);
    for (const char* m : {"dlopen-variant", "memfd-fileless", "mmap-exec", "manual-load", "internal-api"})
        CHECK_MESSAGE(mechs.count(m), m);
}

TEST_CASE("static: simple_dlopen baseline ends every import call at a stub") {
    const Cfg g = static_baseline(main_of("simple_dlopen"));
    CHECK(g.images.size() == 1);
    for (const auto& e : g.edges) {
        const auto* dst = g.block_containing(e.dst);
        REQUIRE(dst);
        if (e.kind == EdgeKind::ImportStub) CHECK(dst->stub);
        CHECK(dst->image == 0);
    }
}

TEST_CASE("pipeline: simple_dlopen") {
    const BenchReport r = report_of("simple_dlopen");
    CHECK(r.discovered_names() == std::vector<std::string>{"libpayload.so"});
    CHECK(r.validation == Validation::Pass);
    CHECK(r.module_metrics.nodes > r.static_metrics.nodes);
    CHECK(r.module_metrics.edges > r.static_metrics.edges);
    CHECK(r.module_metrics.functions > r.static_metrics.functions);
    CHECK(r.module_metrics.loaded_objects == 2);
    CHECK(r.dispatchers.empty());
    REQUIRE(r.discovered.size() == 1);
    CHECK(chain_has(r.discovered[0], "load"));
}

TEST_CASE("pipeline: multi_stage finds later stages only through earlier ones") {
    const BenchReport r = report_of("multi_stage");
    CHECK(r.discovered_names() == std::vector<std::string>{"libstage1.so", "libstage2.so", "libstage3.so"});
    CHECK(r.module_metrics.loaded_objects == 4);
    const auto suite = build_suite();
    const auto it = std::find_if(suite.begin(), suite.end(), [](const Benchmark& b) { return b.name == "multi_stage"; });
    REQUIRE(it != suite.end());
    const auto main_strings = scan_library_strings(emit_image(it->main));
    CHECK(std::find(main_strings.begin(), main_strings.end(), "libstage2.so") == main_strings.end());
}

TEST_CASE("pipeline: indirect_call records a resolved indirect edge into the payload") {
    const Analysis a = analyze(main_of("indirect_call"), options_for("indirect_call"));
    bool found = false;
    for (const auto& e : a.module_cfg.edges)
        if (e.kind == EdgeKind::ResolvedIndirect) {
            const std::size_t img = a.module_cfg.image_of(e.dst);
            if (img != static_cast<std::size_t>(-1) && a.module_cfg.images[img].name == "libindirect.so") found = true;
        }
    CHECK(found);
}

TEST_CASE("pipeline: rop_chain produces a return redirect into the library") {
    const Analysis a = analyze(main_of("rop_chain"), options_for("rop_chain"));
    REQUIRE_FALSE(a.rop_redirects.empty());
    bool into_lib = false;
    for (const auto& r : a.rop_redirects) into_lib = into_lib || r.image == "librop.so";
    CHECK(into_lib);
}

TEST_CASE("pipeline: signal_handler discovers the deferred library on the handler path") {
    const BenchReport r = report_of("signal_handler");
    const auto names = r.discovered_names();
    CHECK(std::find(names.begin(), names.end(), "libdeferred.so") != names.end());
    CHECK(r.module_metrics.loaded_objects == 4);
}

TEST_CASE("pipeline: network_socket carries a recv to dlopen flow") {
    const BenchReport r = report_of("network_socket");
    REQUIRE(r.discovered.size() == 1);
    bool flow = false;
    for (const auto& e : r.discovered[0].chain)
        if (e.value("kind", "") == "taint") {
            const auto& hops = e["payload"]["chain"]["hops"];
            flow = hops.size() >= 2 && hops.front()["kind"] == "recv" && hops.back()["kind"] == "dlopen";
        }
    CHECK(flow);
    CHECK(r.validation == Validation::Pass);
}

TEST_CASE("pipeline: mechanisms of the non-dlopen loaders") {
    CHECK(report_of("mmap_exec").discovered.at(0).mechanism == "mmap-exec");
    CHECK(report_of("manual_elf_load").discovered.at(0).mechanism == "manual-load");
    CHECK(report_of("anti_debug").discovered.at(0).mechanism == "internal-api");
    const BenchReport memfd = report_of("memfd_create");
    CHECK(memfd.discovered.at(0).mechanism == "memfd-fileless");
    CHECK(memfd.discovered.at(0).path == "/proc/self/fd/3");
}

TEST_CASE("validation: a wrong network payload fails") {
    PipelineOptions o = options_for("network_socket");
    Witness bad = *o.witness;
    bad.network = {'x', 'x', 'x', 0};
    const ValidationResult good = concrete_validate(main_of("network_socket"), o.witness, {"libnet.so"}, o);
    CHECK(good.status == Validation::Pass);
    const ValidationResult v = concrete_validate(main_of("network_socket"), bad, {"libnet.so"}, o);
    CHECK(v.status == Validation::Fail);
    CHECK(v.loaded.empty());
    CHECK(concrete_validate(main_of("network_socket"), std::nullopt, {"libnet.so"}, o).status == Validation::Skipped);
}

TEST_CASE("fixtures: dispatcher and self-modifying code") {
    PipelineOptions o;
    o.timed_runs = 1;
    const Analysis cff = analyze((suite_dir() / "fixtures" / "cff_dispatcher" / "main.sbf").string(), o);
    CHECK(cff.report.dispatchers.size() == 1);
    PipelineOptions high = o;
    high.cff_threshold = 9;
    CHECK(analyze((suite_dir() / "fixtures" / "cff_dispatcher" / "main.sbf").string(), high).report.dispatchers.empty());

    const Analysis smc = analyze((suite_dir() / "fixtures" / "smc_patch" / "main.sbf").string(), o);
    std::size_t jmp = 0, push = 0;
    const BinaryImage img = parse_image(*read_host_file((suite_dir() / "fixtures" / "smc_patch" / "main.sbf").string()));
    const SymbolEntry* redirected = img.find_symbol("redirected");
    REQUIRE(redirected);
    for (const auto& r : smc.report.smc) {
        if (r.kind == SmcKind::JmpCallHook) {
            ++jmp;
            CHECK(r.rel == 0x40);
            CHECK(r.value == r.target + 8 + 0x40);
        }
        if (r.kind == SmcKind::PushRetRedirect) {
            ++push;
            CHECK(r.value == kMainBase + redirected->value);
        }
    }
    CHECK(jmp == 1);
    CHECK(push == 1);
}

TEST_CASE("summary: growth aggregations") {
    BenchReport a;
    a.static_metrics.nodes = 10;
    a.module_metrics.nodes = 15;
    SuiteSummary one = summarize({a}, {GroundTruth{}});
    CHECK(one.growth_mean.nodes == doctest::Approx(0.5));
    CHECK(one.growth_pooled.nodes == doctest::Approx(0.5));

    BenchReport b;
    b.static_metrics.nodes = 100;
    b.module_metrics.nodes = 110;
    SuiteSummary two = summarize({a, b}, {GroundTruth{}, GroundTruth{}});
    CHECK(two.growth_mean.nodes == doctest::Approx(0.30));
    CHECK(two.growth_pooled.nodes == doctest::Approx(15.0 / 110.0));
}

TEST_CASE("summary: precision and recall pool over the suite") {
    BenchReport r1, r2;
    r1.discovered = {{"liba.so", "liba.so", "dlopen-variant"}};
    r2.discovered = {{"libb.so", "libb.so", "dlopen-variant"}, {"libz.so", "libz.so", "dlopen-variant"}};
    GroundTruth g1, g2;
    g1.expected_libraries = {"liba.so"};
    g2.expected_libraries = {"libb.so", "libc.so"};
    const SuiteSummary s = summarize({r1, r2}, {g1, g2});
    CHECK(s.precision == doctest::Approx(2.0 / 3.0));
    CHECK(s.recall == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("report: table has eleven columns and json passes the strict schema") {
    std::vector<BenchReport> rs;
    std::vector<GroundTruth> gs;
    for (const char* n : {"simple_dlopen", "xor_encrypted"}) {
        rs.push_back(report_of(n));
        gs.push_back(load_ground_truth((suite_dir() / n / "ground_truth.json").string()));
    }
    const SuiteSummary s = summarize(rs, gs);
    std::istringstream table(render(s, ReportFormat::Table));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(table, line)) {
        if (line.empty() || line[0] == '#') continue;
        ++rows;
        CHECK(std::count(line.begin(), line.end(), '|') == 10);
    }
    CHECK(rows == 3);
    const std::string header = render(s, ReportFormat::Table);
    for (const char* ref : {"29.8", "26.5", "41.6"}) CHECK(header.find(ref) != std::string::npos);

    const auto j = nlohmann::json::parse(render(s, ReportFormat::Json));
    std::string err;
    CHECK_MESSAGE(testsupport::check_suite(j, err), err);
    nlohmann::json broken = j;
    broken["benchmarks"][0]["extra"] = 1;
    CHECK_FALSE(testsupport::check_suite(broken, err));
    broken = j;
    broken["benchmarks"][0]["validation"] = "maybe";
    CHECK_FALSE(testsupport::check_suite(broken, err));
}

TEST_CASE("report: module cfg dot of every benchmark parses") {
    for (const auto& e : fs::directory_iterator(suite_dir())) {
        if (!fs::exists(e.path() / "ground_truth.json")) continue;
        const std::string name = e.path().filename().string();
        const Analysis a = analyze(main_of(name), options_for(name));
        testsupport::DotChecker chk(to_dot(a.module_cfg));
        std::string err;
        CHECK_MESSAGE(chk.ok(&err), name << ": " << err);
        CHECK(chk.edges == a.module_cfg.edges.size());
    }
}

TEST_CASE("report: analysis is deterministic apart from timing") {
    const BenchReport a = report_of("xor_encrypted");
    const BenchReport b = report_of("xor_encrypted");
    CHECK(strip_seconds(a.to_json()) == strip_seconds(b.to_json()));
}
