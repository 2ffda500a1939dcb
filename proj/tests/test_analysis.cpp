#include <doctest.h>

#include "dyncfg/asm.hpp"
#include "dyncfg/cfg.hpp"
#include "dyncfg/correlate.hpp"
#include "dyncfg/hooks.hpp"
#include "dyncfg/tracker.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace dyncfg;

namespace {

std::vector<CfgImage> single(const BinaryImage& img, const std::string& name = "main.sbf") {
    return layout_images({{std::make_shared<const BinaryImage>(img), 0, name, name}});
}

}  // namespace

// ---------------------------------------------------------------- hooks

TEST_CASE("hooks: every intercepted function has a procedure") {
    HookRegistry reg;
    const auto& names = HookRegistry::intercepted();
    CHECK(names.size() == 36);
    std::set<std::string> unique(names.begin(), names.end());
    CHECK(unique.size() == names.size());
    for (const auto& n : names) CHECK_MESSAGE(reg.has(n), n);
    for (const auto& n : HookRegistry::plumbing()) CHECK(reg.has(n));
    for (const char* n : {"dlopen", "dlsym", "mmap", "mprotect", "memfd_create", "recv", "ptrace", "__libc_dlopen_mode"})
        CHECK(unique.count(n));
}

TEST_CASE("hooks: load mechanism labels") {
    Solver solver;
    auto s = testsupport::bare_state(solver);
    CHECK(load_mechanism("dlopen", "libx.so", *s) == "dlopen-variant");
    CHECK(load_mechanism("__libc_dlopen_mode", "libx.so", *s) == "internal-api");
    FdObject m;
    m.kind = FdKind::Memfd;
    m.name = "payload";
    m.backing = std::make_shared<std::vector<Expr>>();
    const int fd = s->alloc_fd(m);
    CHECK(fd == 3);
    CHECK(load_mechanism("dlopen", "/proc/self/fd/3", *s) == "memfd-fileless");
}

TEST_CASE("hooks: library string scan finds ascii and utf16le names") {
    std::vector<std::uint8_t> blob = {0x01, 0x02};
    for (char c : std::string("libfoo.so")) blob.push_back(static_cast<std::uint8_t>(c));
    blob.push_back(0);
    blob.push_back(0x7F);
    const auto w = encode_string("libwide.so", Encoding::Utf16le);
    blob.insert(blob.end(), w.begin(), w.end());
    for (char c : std::string("notalib")) blob.push_back(static_cast<std::uint8_t>(c));
    blob.push_back(0);
    const auto found = scan_library_strings(blob);
    CHECK(std::find(found.begin(), found.end(), "libfoo.so") != found.end());
    CHECK(std::find(found.begin(), found.end(), "libwide.so") != found.end());
    CHECK(std::find(found.begin(), found.end(), "notalib") == found.end());
}

TEST_CASE("extraction: symbolic pointer is reported as such") {
    Solver solver;
    auto s = testsupport::bare_state(solver);
    CandidatePool pool;
    pool.add("libpayload.so", "extra");
    CHECK(unified_string_extraction(*s, var("ptr", 64), pool).kind == Extraction::SymbolicPointer);
}

TEST_CASE("extraction: unconstrained network bytes resolve to the single candidate") {
    Solver solver;
    auto s = testsupport::bare_state(solver);
    constexpr std::uint64_t buf = 0x600000020000;
    std::vector<Expr> net;
    for (int i = 0; i < 16; ++i) {
        net.push_back(var("net_3_" + std::to_string(i), 8));
        s->write_mem(buf + i, net.back());
    }
    const std::uint8_t zero[1] = {0};
    s->write_bytes(buf + 16, zero);
    CandidatePool pool;
    pool.add("libpayload.so", "extra");
    const std::size_t before = s->constraints().size();
    const Extraction ex = unified_string_extraction(*s, bv(buf, 64), pool);
    REQUIRE(ex.concrete());
    CHECK(ex.text == "libpayload.so");
    CHECK(s->constraints().size() == before + 1);
    const SatResult r = s->check();
    REQUIRE(r.sat());
    const auto want = encode_string("libpayload.so", Encoding::Ascii);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(eval_with_model(net[i], r.model) == want[i]);
}

TEST_CASE("extraction: concrete data without terminator is a decode error") {
    Solver solver;
    auto s = testsupport::bare_state(solver);
    const std::vector<std::uint8_t> a(64, 'a');
    s->write_bytes(0x600000030000, a);
    CHECK_THROWS_AS(unified_string_extraction(*s, bv(0x600000030000, 64), CandidatePool{}, 32), DecodeError);
}

TEST_CASE("extraction: randomized property suite") {
    const auto run = testsupport::extraction_properties(kDefaultSeed, 200);
    CHECK_MESSAGE(run.ok(), run.first_violation);
    for (const char* k : {"symbolic-pointer", "concrete", "one-candidate", "no-candidate"}) CHECK_MESSAGE(run.tally.count(k), k);
}

// ---------------------------------------------------------------- target resolution

TEST_CASE("resolution: unconstrained target gets one address per region") {
    Solver solver;
    auto s = testsupport::bare_state(solver);
    const std::vector<ExecRegion> regions = {{0x400000, 0x400FFF}, {0x500000, 0x500FFF}};
    const std::size_t before = s->constraints().size();
    const auto out = resolve_symbolic_target(*s, var("t", 64), regions);
    REQUIRE(out.size() == 2);
    CHECK((out[0] >= 0x400000 && out[0] <= 0x400FFF));
    CHECK((out[1] >= 0x500000 && out[1] <= 0x500FFF));
    CHECK(s->constraints().size() == before);
}

TEST_CASE("resolution: soundness over random instances") {
    const auto run = testsupport::resolution_soundness(kDefaultSeed, 500);
    CHECK_MESSAGE(run.ok(), run.first_violation);
    CHECK(run.tally.at("addresses") > 0);
}

TEST_CASE("resolution: matches brute force on a 16-bit space") {
    const auto run = testsupport::resolution_bruteforce(kDefaultSeed, 20);
    CHECK_MESSAGE(run.ok(), run.first_violation);
}

// ---------------------------------------------------------------- cfg

TEST_CASE("cfg: diamond has four blocks and four edges") {
    const BinaryImage img = assemble(
        ".type exe\n.entry main\n.export main func\n"
        "main: movi r1, 1\n beq r1, r0, right\n"
        "left: movi r2, 1\n jmp join\n"
        "right: movi r2, 2\n"
        "join: ret\n");
    const Cfg g = recover_static(single(img));
    const CfgMetrics m = metrics(g);
    CHECK(m.nodes == 4);
    CHECK(m.edges == 4);
    CHECK(m.functions == 1);
    CHECK(m.loaded_objects == 1);
}

TEST_CASE("cfg: dot output is deterministic and parses") {
    const BinaryImage img = assemble(
        ".type exe\n.entry main\n.import dlopen\n.export main func\n"
        "main: callimp dlopen\n call helper\n ret\nhelper: ret\n");
    const Cfg g = recover_static(single(img));
    const std::string a = to_dot(g), b = to_dot(recover_static(single(img)));
    CHECK(a == b);
    testsupport::DotChecker chk(a);
    std::string err;
    CHECK_MESSAGE(chk.ok(&err), err);
    CHECK(chk.nodes == metrics(g).nodes + 1);  // + the import stub
    CHECK(a.find("0x400") != std::string::npos);
    CHECK(a.find("main.sbf") != std::string::npos);
}

TEST_CASE("cfg: dot checker rejects malformed graphs") {
    for (const char* bad : {"digraph {", "graph g { a -> b }", "digraph g { a -> }", "digraph g { \"a [x=1]; }",
                            "digraph g { a [x] }"}) {
        testsupport::DotChecker chk(bad);
        CHECK_MESSAGE(!chk.ok(), bad);
    }
}
