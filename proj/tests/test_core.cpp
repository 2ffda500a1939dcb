#include <doctest.h>

#include <random>

#include "dyncfg/asm.hpp"
#include "dyncfg/bench.hpp"
#include "dyncfg/cfg.hpp"
#include "dyncfg/expr.hpp"
#include "dyncfg/image.hpp"
#include "dyncfg/isa.hpp"
#include "dyncfg/solver.hpp"
#include "dyncfg/state.hpp"
#include "properties.hpp"

using namespace dyncfg;

namespace {

BinaryImage one_segment_image() {
    ImageBuilder b(ImageType::Library);
    b.add_segment(kSegRead | kSegExec, std::vector<std::uint8_t>(8, 0));
    return b.finish();
}

std::unique_ptr<SimState> fresh_state(Solver& solver) { return testsupport::bare_state(solver); }

}  // namespace

// ---------------------------------------------------------------- image

TEST_CASE("image: single 8-byte segment has the packed layout length") {
    const BinaryImage img = one_segment_image();
    const auto bytes = emit_image(img);
    CHECK(bytes.size() == kHeaderSize + kSegmentEntrySize + img.string_table.size() + 8);
    CHECK(img.string_table.size() % 8 == 0);
    CHECK(img.segments.at(0).vaddr == img.segments.at(0).file_off);
}

TEST_CASE("image: parse of emit is the identity on every generated image") {
    std::vector<Benchmark> all = build_suite();
    for (auto& f : build_fixtures()) all.push_back(std::move(f));
    std::size_t images = 0;
    for (const auto& b : all) {
        CHECK(parse_image(emit_image(b.main)) == b.main);
        CHECK(emit_image(parse_image(emit_image(b.main))) == emit_image(b.main));
        ++images;
        for (const auto& [name, lib] : b.libs) {
            CHECK_MESSAGE(parse_image(emit_image(lib)) == lib, name);
            ++images;
        }
    }
    CHECK(images >= 18 + 16);
}

TEST_CASE("image: symbol rename only touches the string table and name offsets") {
    auto make = [](const char* name) {
        ImageBuilder b(ImageType::Library);
        b.intern(name);
        const std::size_t sizes[] = {8};
        const std::uint64_t at = b.plan_segments(sizes, 1).at(0);
        b.add_symbol(name, SymbolKind::Function, at);
        b.add_segment(kSegRead | kSegExec, std::vector<std::uint8_t>(8, 0));
        return b.finish();
    };
    const BinaryImage a = make("alpha"), c = make("gamma");
    const auto ea = emit_image(a), ec = emit_image(c);
    REQUIRE(ea.size() == ec.size());
    const std::size_t str_lo = ea.size() - 8 - a.string_table.size();
    const std::size_t str_hi = ea.size() - 8;
    for (std::size_t i = 0; i < ea.size(); ++i)
        if (ea[i] != ec[i]) CHECK((i >= str_lo && i < str_hi));
}

TEST_CASE("image: malformed input is rejected with a typed error") {
    auto bytes = emit_image(one_segment_image());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(parse_image(bad_magic), ImageError);
    try {
        parse_image(bad_magic);
    } catch (const ImageError& e) {
        CHECK(e.code() == ImageErrc::BadMagic);
    }
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 40);
    try {
        parse_image(cut);
        FAIL("truncated image accepted");
    } catch (const ImageError& e) {
        CHECK(e.code() == ImageErrc::TruncatedFile);
    }
    BinaryImage img = one_segment_image();
    img.symbols.push_back({0x7FFF, SymbolKind::Function, img.segments[0].vaddr});
    try {
        img.validate();
        FAIL("dangling name accepted");
    } catch (const ImageError& e) {
        CHECK(e.code() == ImageErrc::DanglingName);
    }
}

TEST_CASE("image: generated simple_dlopen imports dlopen") {
    const auto suite = build_suite();
    const auto it = std::find_if(suite.begin(), suite.end(), [](const Benchmark& b) { return b.name == "simple_dlopen"; });
    REQUIRE(it != suite.end());
    const BinaryImage img = parse_image(emit_image(it->main));
    CHECK(img.import_ordinal("dlopen").has_value());
}

// ---------------------------------------------------------------- isa and assembler

TEST_CASE("isa: encode and decode are inverse") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; ++i) {
        Instruction in;
        do in.op = static_cast<Opcode>(rng() & 0x3F);
        while (!valid_opcode(static_cast<std::uint8_t>(in.op)));
        in.rd = rng() % 16;
        in.rs1 = rng() % 16;
        in.rs2 = rng() % 16;
        in.imm = static_cast<std::int32_t>(rng());
        const auto bytes = encode(in);
        const auto back = decode(bytes);
        REQUIRE(back.has_value());
        CHECK(*back == in);
    }
    const std::uint8_t junk[8] = {0xEE, 0, 0, 0, 0, 0, 0, 0};
    CHECK_FALSE(decode(junk).has_value());
}

TEST_CASE("asm: halt encodes to eight zero bytes") {
    const BinaryImage img = assemble(".type lib\nf: halt\n.export f\n");
    REQUIRE(img.segments.size() == 1);
    CHECK(img.segments[0].data == std::vector<std::uint8_t>(8, 0));
}

TEST_CASE("asm: callimp carries the import ordinal") {
    const BinaryImage img = assemble(".type exe\n.entry main\n.import puts\n.import dlopen\nmain: callimp dlopen\n ret\n");
    const auto& seg = img.segments.at(0);
    const auto in = decode(std::span(seg.data).subspan(0, 8));
    REQUIRE(in);
    CHECK(in->op == Opcode::Callimp);
    CHECK(in->imm == 1);
    CHECK(img.import_name(1) == "dlopen");
}

TEST_CASE("asm: forward branch immediate is relative to the next instruction") {
    const BinaryImage img = assemble(".type exe\n.entry main\nmain: movi r1, 1\n beq r1, r1, done\n movi r0, 2\n movi r0, 3\ndone: ret\n");
    const auto& seg = img.segments.at(0);
    const auto in = decode(std::span(seg.data).subspan(8, 8));
    REQUIRE(in);
    CHECK(in->op == Opcode::Beq);
    const std::uint64_t site = seg.vaddr + kMainBase + 8;
    const std::uint64_t target = seg.vaddr + kMainBase + 32;
    CHECK(in->imm == static_cast<std::int32_t>(target - site - 8));
    CHECK(rel_target(site, in->imm) == target);
}

TEST_CASE("asm: errors carry code and line") {
    auto code_of = [](const char* src) {
        try {
            assemble(src);
        } catch (const AsmError& e) {
            return std::optional<std::pair<AsmErrc, std::size_t>>({e.code(), e.line()});
        }
        return std::optional<std::pair<AsmErrc, std::size_t>>();
    };
    auto undefined = code_of(".type exe\n.entry main\nmain: jmp nowhere\n");
    REQUIRE(undefined);
    CHECK(undefined->first == AsmErrc::UndefinedLabel);
    CHECK(undefined->second == 3);
    auto dup = code_of(".type lib\na: ret\na: ret\n");
    REQUIRE(dup);
    CHECK(dup->first == AsmErrc::DuplicateLabel);
    auto bad = code_of(".type lib\nf: movi r99, 1\n");
    REQUIRE(bad);
    CHECK(bad->first == AsmErrc::BadOperand);
    auto dir = code_of(".type lib\n.frobnicate\n");
    REQUIRE(dir);
    CHECK(dir->first == AsmErrc::BadDirective);
}

TEST_CASE("asm: assembled benchmark sources reproduce the generated images") {
    for (const auto& b : build_suite()) CHECK_MESSAGE(assemble(b.main_source) == b.main, b.name);
}

TEST_CASE("bench: generated code stays inside the invertible fragment") {
    for (const auto& b : build_suite()) {
        CHECK_MESSAGE(fragment_violations(b.main).empty(), b.name);
        for (const auto& [n, lib] : b.libs) CHECK_MESSAGE(fragment_violations(lib).empty(), n);
    }
    const BinaryImage mul = assemble(".type lib\nf: mul r1, r2, r3\n ret\n.export f\n");
    CHECK(fragment_violations(mul) == std::vector<Opcode>{Opcode::Mul});
}

// ---------------------------------------------------------------- expressions

TEST_CASE("expr: extract of the low half of a concatenation is the low operand") {
    const Expr hi = var("h", 8), lo = var("l", 8);
    const Expr e = extract(7, 0, concat(hi, lo));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        Model m;
        m.values["h"] = rng() & 0xFF;
        m.values["l"] = rng() & 0xFF;
        CHECK(eval_with_model(e, m) == m.values["l"]);
    }
    CHECK(e.equals(lo));
}

TEST_CASE("expr: x xor x simplifies to zero") {
    const Expr x = var("x", 32);
    const Expr e = simplify(bxor(x, x));
    CHECK(e.is_const(0));
    CHECK(simplify(eq(bxor(x, x), bv(1, 32))).is_const(0));
}

TEST_CASE("expr: unsigned and signed comparison of 0x80 and 0x7f") {
    CHECK(ult(bv(0x80, 8), bv(0x7F, 8)).is_const(0));
    CHECK(slt(bv(0x80, 8), bv(0x7F, 8)).is_const(1));
}

TEST_CASE("expr: width mismatch and unbound variables are errors") {
    CHECK_THROWS_AS(add(bv(1, 8), bv(1, 16)), ExprError);
    CHECK_THROWS_AS(eval_with_model(var("q", 8), Model{}), UnboundVariable);
}

TEST_CASE("expr: builders agree with the reference evaluator") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
        testsupport::TermGen gen(rng, 3);
        const auto t = gen.constraint(3);
        const Expr e = testsupport::to_expr(*t);
        for (int j = 0; j < 20; ++j) {
            std::uint64_t v[3] = {rng() & 0xFF, rng() & 0xFF, rng() & 0xFF};
            Model m;
            for (int k = 0; k < 3; ++k) m.values["v" + std::to_string(k)] = v[k];
            CHECK(eval_with_model(e, m) == testsupport::eval_term(*t, v));
        }
    }
}

// ---------------------------------------------------------------- solver

TEST_CASE("solver: xor constraint inverts to the unique key") {
    Solver s;
    const Expr k = var("k", 8);
    const Expr cs[] = {eq(bxor(k, bv(0x5A, 8)), bv(0x36, 8))};
    const SatResult r = s.satisfiable(cs);
    REQUIRE(r.sat());
    CHECK(r.model.at("k") == 0x6C);
    int count = 0;
    for (unsigned v = 0; v < 256; ++v) count += ((v ^ 0x5A) == 0x36);
    CHECK(count == 1);
}

TEST_CASE("solver: eval under a range constraint stays in range") {
    Solver s;
    const Expr t = var("t", 64);
    const Expr extra[] = {uge(t, bv(0x400000, 64)), ule(t, bv(0x400FFF, 64))};
    const std::uint64_t v = s.eval(t, {}, extra);
    CHECK(v >= 0x400000);
    CHECK(v <= 0x400FFF);
    const Expr none[] = {ult(t, bv(5, 64)), ugt(t, bv(10, 64))};
    CHECK_THROWS_AS(s.eval(t, none), NoModel);
}

TEST_CASE("solver: agrees with exhaustive enumeration") {
    const auto run = testsupport::solver_oracle(kDefaultSeed, 300);
    CHECK_MESSAGE(run.ok(), run.first_violation);
    CHECK(run.tally.count("sat"));
    CHECK(run.tally.count("unsat"));
}

TEST_CASE("solver: same seed, same answers") {
    const auto a = testsupport::solver_oracle(42, 60);
    const auto b = testsupport::solver_oracle(42, 60);
    CHECK(a.tally == b.tally);
}

// ---------------------------------------------------------------- state

TEST_CASE("state: symbolic address pinned to one value reads like the concrete address") {
    Solver solver;
    auto s = fresh_state(solver);
    const std::uint8_t bytes[] = {1, 2, 3, 4, 5, 6, 7, 8};
    s->write_bytes(0x600000000100, bytes);
    const Expr a = var("a", 64);
    s->add_constraint(eq(a, bv(0x600000000100, 64)));
    const std::size_t before = s->constraints().size();
    const Expr sym = s->read_mem(a, 8);
    const Expr conc = s->read_mem(0x600000000100, 8);
    CHECK(s->eval(sym) == s->eval(conc));
    CHECK(s->constraints().size() <= before + 1);
}

TEST_CASE("state: overlapping writes resolve per byte to the later one") {
    Solver solver;
    auto s = fresh_state(solver);
    std::uint8_t shadow[16] = {};
    bool written[16] = {};
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const std::uint64_t off = rng() % 9;
        const std::uint64_t v = rng();
        s->write_mem(0x600000000000 + off, bv(v, 64));
        for (int j = 0; j < 8; ++j) {
            shadow[off + j] = static_cast<std::uint8_t>(v >> (8 * j));
            written[off + j] = true;
        }
    }
    for (int j = 0; j < 16; ++j) {
        if (!written[j]) continue;
        const auto b = s->concrete_byte(0x600000000000 + j);
        REQUIRE(b);
        CHECK(*b == shadow[j]);
    }
}

TEST_CASE("state: fork on an equality fixes the value in the child") {
    Solver solver;
    auto s = fresh_state(solver);
    const Expr v = var("v", 32);
    s->set_reg(1, v);
    SimState child = s->fork(eq(v, bv(3, 32)), 2);
    CHECK(child.constraints().size() == s->constraints().size() + 1);
    CHECK(child.concretize(child.reg(1), "test") == 3);
}

TEST_CASE("state: second image lands on the next 1 MiB boundary") {
    Solver solver;
    auto s = fresh_state(solver);
    auto main = std::make_shared<const BinaryImage>(assemble(".type exe\n.entry main\nmain: ret\n"));
    auto lib = std::make_shared<const BinaryImage>(one_segment_image());
    const LoadedImage m = load_image(*s, main, "main", "main", "main");
    const LoadedImage l = load_image(*s, lib, "lib.so", "lib.so", "dlopen-variant");
    CHECK(m.base == 0x400000);
    CHECK(l.base == 0x500000);
    const auto regions = exec_regions(*s);
    CHECK(std::any_of(regions.begin(), regions.end(), [&](const ExecRegion& r) { return r.start == l.base + lib->segments[0].vaddr; }));
}

TEST_CASE("state: mprotect from W to X adds an executable region") {
    Solver solver;
    auto s = fresh_state(solver);
    s->map_region(0x600000002000, 0x1000, kSegRead | kSegWrite, "anon");
    auto has_exec = [&] {
        for (const auto& r : exec_regions(*s))
            if (r.start <= 0x600000002000 && r.end >= 0x600000002FFF) return true;
        return false;
    };
    CHECK_FALSE(has_exec());
    s->protect(0x600000002000, 0x1000, kSegRead | kSegExec);
    CHECK(has_exec());
}
