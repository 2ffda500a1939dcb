#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dyncfg/hooks.hpp"
#include "dyncfg/solver.hpp"
#include "dyncfg/state.hpp"
#include "dyncfg/tracker.hpp"
#include "support.hpp"

namespace testsupport {

struct PropertyRun {
    std::size_t instances = 0;
    std::size_t violations = 0;
    std::map<std::string, std::size_t> tally;
    std::string first_violation;

    void violate(const std::string& what) {
        if (violations++ == 0) first_violation = what;
    }
    bool ok() const { return violations == 0; }
};

// ---------------------------------------------------------------- solver against enumeration

// Evaluates `t` for v0 = 0..255 at once, with v1 and v2 fixed.
inline void eval_row(const Term& t, std::uint32_t v1, std::uint32_t v2, std::uint32_t* out) {
    constexpr int N = 256;
    if (t.kind == Term::Const) {
        std::fill(out, out + N, static_cast<std::uint32_t>(t.k));
        return;
    }
    if (t.kind == Term::Var) {
        for (int i = 0; i < N; ++i) out[i] = t.var == 0 ? static_cast<std::uint32_t>(i) : t.var == 1 ? v1 : v2;
        return;
    }
    std::uint32_t a[N], b[N];
    eval_row(*t.kids[0], v1, v2, a);
    if (t.kids.size() > 1) eval_row(*t.kids[1], v1, v2, b);
    const auto m = static_cast<std::uint32_t>(mask(t.width));
    const unsigned ow = t.kids[0]->width;
    switch (t.kind) {
        case Term::Add: for (int i = 0; i < N; ++i) out[i] = (a[i] + b[i]) & m; break;
        case Term::Sub: for (int i = 0; i < N; ++i) out[i] = (a[i] - b[i]) & m; break;
        case Term::Xor: for (int i = 0; i < N; ++i) out[i] = a[i] ^ b[i]; break;
        case Term::And: for (int i = 0; i < N; ++i) out[i] = a[i] & b[i]; break;
        case Term::Or: for (int i = 0; i < N; ++i) out[i] = a[i] | b[i]; break;
        case Term::Not: for (int i = 0; i < N; ++i) out[i] = ~a[i] & m; break;
        case Term::Extract: for (int i = 0; i < N; ++i) out[i] = (a[i] >> t.lo) & m; break;
        case Term::Concat: for (int i = 0; i < N; ++i) out[i] = (a[i] << t.kids[1]->width) | b[i]; break;
        case Term::Eq: for (int i = 0; i < N; ++i) out[i] = a[i] == b[i]; break;
        case Term::Ne: for (int i = 0; i < N; ++i) out[i] = a[i] != b[i]; break;
        case Term::Ult: for (int i = 0; i < N; ++i) out[i] = a[i] < b[i]; break;
        case Term::Ule: for (int i = 0; i < N; ++i) out[i] = a[i] <= b[i]; break;
        case Term::Slt: for (int i = 0; i < N; ++i) out[i] = sext(a[i], ow) < sext(b[i], ow); break;
        case Term::LAnd: for (int i = 0; i < N; ++i) out[i] = a[i] && b[i]; break;
        case Term::LOr: for (int i = 0; i < N; ++i) out[i] = a[i] || b[i]; break;
        case Term::LNot: for (int i = 0; i < N; ++i) out[i] = !a[i]; break;
        default: break;
    }
}

inline bool exists_assignment(const std::vector<TermP>& cs, int nvars) {
    const std::uint64_t outer = 1ull << (8 * (nvars - 1));
    std::uint32_t row[256];
    for (std::uint64_t o = 0; o < outer; ++o) {
        std::uint32_t all[256];
        std::fill(all, all + 256, 1u);
        bool alive = true;
        for (std::size_t k = 0; k < cs.size() && alive; ++k) {
            eval_row(*cs[k], o & 0xFF, (o >> 8) & 0xFF, row);
            std::uint32_t seen = 0;
            for (int i = 0; i < 256; ++i) seen |= (all[i] &= (row[i] != 0));
            alive = seen != 0;
        }
        if (alive) return true;
    }
    return false;
}

inline PropertyRun solver_oracle(std::uint64_t seed, std::size_t n = 1000) {
    PropertyRun run;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int nvars = 1 + static_cast<int>(rng() % 3);
        TermGen gen(rng, nvars);
        std::vector<TermP> cs;
        const int ncs = 1 + static_cast<int>(rng() % 3);
        for (int j = 0; j < ncs; ++j) cs.push_back(gen.constraint(2));
        std::vector<dyncfg::Expr> exprs;
        for (const auto& c : cs) exprs.push_back(to_expr(*c));

        dyncfg::Solver solver(seed + i);
        const dyncfg::SatResult r = solver.satisfiable(exprs);
        ++run.instances;
        if (r.kind == dyncfg::SatKind::Unknown) {
            ++run.tally["unknown"];
            continue;
        }
        if (r.kind == dyncfg::SatKind::Sat) {
            ++run.tally["sat"];
            std::uint64_t v[3] = {0, 0, 0};
            for (int k = 0; k < nvars; ++k) {
                auto it = r.model.values.find("v" + std::to_string(k));
                if (it != r.model.values.end()) v[k] = it->second;
            }
            for (std::size_t k = 0; k < cs.size(); ++k)
                if (!eval_term(*cs[k], v)) {
                    run.violate("instance " + std::to_string(i) + ": model falsifies " + exprs[k].to_string());
                    break;
                }
            continue;
        }
        ++run.tally["unsat"];
        if (exists_assignment(cs, nvars)) run.violate("instance " + std::to_string(i) + ": Unsat but enumeration finds a model");
    }
    return run;
}

// ---------------------------------------------------------------- string extraction

inline std::vector<std::uint8_t> ref_encode(const std::string& s, dyncfg::Encoding enc) {
    std::vector<std::uint8_t> out;
    for (char c : s) {
        out.push_back(static_cast<std::uint8_t>(c));
        if (enc == dyncfg::Encoding::Utf16le) out.push_back(0);
    }
    out.push_back(0);
    if (enc == dyncfg::Encoding::Utf16le) out.push_back(0);
    return out;
}

inline std::string random_name(std::mt19937_64& rng) {
    std::string s = "lib";
    const std::size_t len = 1 + rng() % 10;
    for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + rng() % 26);
    return s + ".so";
}

inline std::unique_ptr<dyncfg::SimState> bare_state(dyncfg::Solver& solver) {
    auto cfg = std::make_shared<dyncfg::SessionConfig>();
    return std::make_unique<dyncfg::SimState>(1, cfg, &solver);
}

inline PropertyRun extraction_properties(std::uint64_t seed, std::size_t n = 200) {
    using namespace dyncfg;
    PropertyRun run;
    std::mt19937_64 rng(seed);
    constexpr std::uint64_t kAddr = 0x600000010000;
    for (std::size_t i = 0; i < n; ++i) {
        Solver solver(seed);
        auto s = bare_state(solver);
        const Encoding enc = rng() % 2 ? Encoding::Utf16le : Encoding::Ascii;
        const std::size_t unit = enc == Encoding::Ascii ? 1 : 2;
        const std::string tag = "instance " + std::to_string(i) + ": ";
        const int kind = static_cast<int>(rng() % 4);
        ++run.instances;

        if (kind == 0) {
            Expr p = add(var("ptr", 64), bv(kAddr, 64));
            CandidatePool pool;
            pool.add(random_name(rng), "extra");
            const Extraction ex = unified_string_extraction(*s, p, pool, 256, enc);
            ++run.tally["symbolic-pointer"];
            if (ex.kind != Extraction::SymbolicPointer) run.violate(tag + "symbolic pointer not reported");
            continue;
        }

        const std::string target = random_name(rng);
        const std::vector<std::uint8_t> bytes = ref_encode(target, enc);
        if (kind == 1) {
            s->write_bytes(kAddr, bytes);
            const Extraction ex = unified_string_extraction(*s, bv(kAddr, 64), CandidatePool{}, 256, enc);
            ++run.tally["concrete"];
            if (!ex.concrete() || ex.text != target) run.violate(tag + "concrete decode gave '" + ex.text + "'");
            continue;
        }

        // Symbolic data: every byte is key ^ c_i, followed by a concrete terminator unit.
        const std::uint8_t key0 = static_cast<std::uint8_t>(rng());
        std::vector<std::uint8_t> c(bytes.size());
        for (std::size_t j = 0; j < bytes.size(); ++j) c[j] = bytes[j] ^ key0;
        const Expr k = var("key", 8);
        for (std::size_t j = 0; j < bytes.size(); ++j) s->write_mem(kAddr + j, bxor(k, bv(c[j], 8)));
        s->write_bytes(kAddr + bytes.size(), std::vector<std::uint8_t>(unit, 0));
        auto data_at = [&](std::size_t j, std::uint64_t kv) -> std::optional<std::uint8_t> {
            if (j < c.size()) return static_cast<std::uint8_t>(kv ^ c[j]);
            if (j < c.size() + unit) return 0;
            return std::nullopt;
        };

        // Constraint on the key, mirrored on the oracle side.
        std::uint64_t bound = 256;
        if (rng() % 2) {
            bound = 1 + rng() % 256;
            s->add_constraint(ult(zext(k, 16), bv(bound, 16)));
        }

        CandidatePool pool;
        std::vector<std::string> names;
        const int others = 1 + static_cast<int>(rng() % 4);
        for (int j = 0; j < others; ++j) names.push_back(random_name(rng));
        if (kind == 2) names.push_back(target);
        std::shuffle(names.begin(), names.end(), rng);
        for (const auto& nm : names) pool.add(nm, "extra");

        std::vector<std::string> satisfying;
        for (const auto& cand : pool.items()) {
            const auto want = ref_encode(cand.text, enc);
            for (std::uint64_t kv = 0; kv < bound; ++kv) {
                bool all = true;
                for (std::size_t j = 0; j < want.size() && all; ++j) {
                    auto d = data_at(j, kv);
                    all = d && *d == want[j];
                }
                if (all) {
                    satisfying.push_back(cand.text);
                    break;
                }
            }
        }

        const Extraction ex = unified_string_extraction(*s, bv(kAddr, 64), pool, 256, enc);
        if (satisfying.empty()) {
            ++run.tally["no-candidate"];
            if (ex.kind != Extraction::SymbolicString) run.violate(tag + "expected SymbolicString, got '" + ex.text + "'");
            continue;
        }
        if (satisfying.size() > 1) {
            ++run.tally["several-candidates"];
            if (!ex.concrete() || std::find(satisfying.begin(), satisfying.end(), ex.text) == satisfying.end())
                run.violate(tag + "returned a non-satisfying candidate");
            continue;
        }
        ++run.tally["one-candidate"];
        if (!ex.concrete() || ex.text != satisfying.front()) {
            run.violate(tag + "expected '" + satisfying.front() + "', got '" + ex.text + "'");
            continue;
        }
        const SatResult after = s->check();
        if (!after.sat()) {
            run.violate(tag + "state infeasible after extraction");
            continue;
        }
        const auto want = ref_encode(ex.text, enc);
        for (std::size_t j = 0; j < want.size(); ++j) {
            Model m = after.model;
            m.values.emplace("key", 0);
            if (eval_with_model(s->read_byte(kAddr + j), m) != want[j]) {
                run.violate(tag + "data byte " + std::to_string(j) + " does not evaluate to the candidate");
                break;
            }
        }
    }
    return run;
}

// ---------------------------------------------------------------- symbolic target resolution

inline std::vector<dyncfg::ExecRegion> random_regions(std::mt19937_64& rng, std::size_t count, std::uint64_t space) {
    std::set<std::uint64_t> cuts;
    while (cuts.size() < 2 * count) cuts.insert(rng() % space);
    std::vector<std::uint64_t> v(cuts.begin(), cuts.end());
    std::vector<dyncfg::ExecRegion> out;
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) out.push_back({v[i], v[i + 1]});
    return out;
}

inline PropertyRun resolution_soundness(std::uint64_t seed, std::size_t n = 500) {
    using namespace dyncfg;
    PropertyRun run;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Solver solver(seed);
        auto s = bare_state(solver);
        const unsigned w = (rng() % 2) ? 64 : 32;
        const std::uint64_t space = w == 64 ? (1ull << 48) : (1ull << 32);
        const auto regions = random_regions(rng, 1 + rng() % 6, space);
        const Expr x = var("x", w);
        Expr t = x;
        switch (rng() % 4) {
            case 0: t = add(x, bv(rng() % space, w)); break;
            case 1: t = bxor(x, bv(rng() % space, w)); break;
            case 2: t = sub(x, bv(rng() % 4096, w)); break;
            default: break;
        }
        const std::uint64_t lo = rng() % space;
        const std::uint64_t hi = lo + rng() % (space - lo);
        if (rng() % 3) s->add_constraint(land(uge(x, bv(lo, w)), ule(x, bv(hi, w))));
        if (rng() % 2) s->add_constraint(ne(extract(7, 0, x), bv(rng() & 0xFF, 8)));

        const auto out = resolve_symbolic_target(*s, t, regions);
        ++run.instances;
        run.tally["addresses"] += out.size();
        if (out.size() > regions.size()) run.violate("instance " + std::to_string(i) + ": more addresses than regions");
        for (std::uint64_t a : out) {
            const bool inside = std::any_of(regions.begin(), regions.end(),
                                            [&](const ExecRegion& r) { return a >= r.start && a <= r.end; });
            if (!inside) run.violate("instance " + std::to_string(i) + ": address outside every region");
        }
    }
    return run;
}

// On a 16-bit space: exactly one representative per feasible region, each reachable.
inline PropertyRun resolution_bruteforce(std::uint64_t seed, std::size_t n = 40) {
    using namespace dyncfg;
    PropertyRun run;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Solver solver(seed);
        auto s = bare_state(solver);
        const auto regions = random_regions(rng, 1 + rng() % 4, 1u << 16);
        const Expr x = var("x", 16);
        const int shape = static_cast<int>(rng() % 5);
        const std::uint64_t c = rng() & 0xFFFF;
        Expr t = x;
        switch (shape) {
            case 1: t = add(x, bv(c, 16)); break;
            case 2: t = bxor(x, bv(c, 16)); break;
            case 3: t = sub(x, bv(c, 16)); break;
            case 4: t = concat(extract(7, 0, x), extract(15, 8, x)); break;
            default: break;
        }
        auto ref_t = [&](std::uint64_t xv) -> std::uint64_t {
            switch (shape) {
                case 1: return (xv + c) & 0xFFFF;
                case 2: return xv ^ c;
                case 3: return (xv - c) & 0xFFFF;
                case 4: return ((xv & 0xFF) << 8) | (xv >> 8);
                default: return xv;
            }
        };
        std::uint64_t lo = 0, hi = 0xFFFF;
        if (rng() % 2) {
            lo = rng() & 0xFFFF;
            hi = lo + rng() % (0x10000 - lo);
            s->add_constraint(land(uge(x, bv(lo, 16)), ule(x, bv(hi, 16))));
        }
        std::optional<std::uint64_t> banned;
        if (rng() % 2) {
            banned = rng() & 0xFF;
            s->add_constraint(ne(extract(7, 0, x), bv(*banned, 8)));
        }
        auto admissible = [&](std::uint64_t xv) { return xv >= lo && xv <= hi && (!banned || (xv & 0xFF) != *banned); };

        std::vector<bool> feasible(regions.size(), false);
        std::set<std::uint64_t> reachable;
        for (std::uint64_t xv = 0; xv < 0x10000; ++xv) {
            if (!admissible(xv)) continue;
            const std::uint64_t tv = ref_t(xv);
            reachable.insert(tv);
            for (std::size_t r = 0; r < regions.size(); ++r)
                if (tv >= regions[r].start && tv <= regions[r].end) feasible[r] = true;
        }

        const auto out = resolve_symbolic_target(*s, t, regions);
        ++run.instances;
        const std::string tag = "instance " + std::to_string(i) + ": ";
        std::vector<std::size_t> hits(regions.size(), 0);
        for (std::uint64_t a : out) {
            if (!reachable.count(a)) run.violate(tag + "unreachable address returned");
            for (std::size_t r = 0; r < regions.size(); ++r)
                if (a >= regions[r].start && a <= regions[r].end) ++hits[r];
        }
        for (std::size_t r = 0; r < regions.size(); ++r) {
            const std::size_t want = feasible[r] ? 1 : 0;
            if (hits[r] != want)
                run.violate(tag + "region " + std::to_string(r) + " has " + std::to_string(hits[r]) +
                            " representatives, oracle says " + std::to_string(want));
        }
        run.tally["feasible-regions"] += std::count(feasible.begin(), feasible.end(), true);
    }
    return run;
}

}  // namespace testsupport
