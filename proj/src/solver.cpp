#include "dyncfg/solver.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>

namespace dyncfg {

std::uint64_t default_seed() {
    if (const char* s = std::getenv("DYNCFG_SEED"); s && *s) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(s, &end, 0);
        if (end && *end == '\0') return v;
    }
    return kDefaultSeed;
}

const char* to_string(SatKind k) {
    switch (k) {
        case SatKind::Sat: return "sat";
        case SatKind::Unsat: return "unsat";
        case SatKind::Unknown: return "unknown";
    }
    return "?";
}

namespace {

std::uint64_t eval_node(Op op, unsigned w, unsigned aux, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    const std::uint64_t m = width_mask(w);
    switch (op) {
        case Op::Neg: return (0 - a) & m;
        case Op::Not: return ~a & m;
        case Op::Add: return (a + b) & m;
        case Op::Sub: return (a - b) & m;
        case Op::Mul: return (a * b) & m;
        case Op::Xor: return a ^ b;
        case Op::And: return a & b;
        case Op::Or: return a | b;
        case Op::Shl: return b >= w ? 0 : (a << b) & m;
        case Op::Shr: return b >= w ? 0 : a >> b;
        case Op::Eq: return a == b;
        case Op::Ne: return a != b;
        case Op::Ult: return a < b;
        case Op::Ule: return a <= b;
        case Op::Slt: return sign_extend(a, aux) < sign_extend(b, aux);
        case Op::Extract: return (a >> aux) & m;
        case Op::Concat: return (a << aux) | b;
        case Op::Ite: return a ? b : c;
        default: return 0;
    }
}

unsigned aux_of(const Expr& e) {
    switch (e.op()) {
        case Op::Extract: return e.lo();
        case Op::Concat: return e.operand(1).width();
        case Op::Slt: return e.operand(0).width();
        default: return 0;
    }
}

}  // namespace

CompiledExprs::CompiledExprs(std::span<const Expr> roots, const std::map<std::string, std::size_t>& slots) {
    std::unordered_map<const ExprNode*, std::uint32_t> seen;
    // Iterative post-order so deep chains do not exhaust the stack.
    auto compile = [&](const Expr& root) -> std::uint32_t {
        std::vector<std::pair<const Expr*, bool>> stack{{&root, false}};
        while (!stack.empty()) {
            auto [e, expanded] = stack.back();
            stack.pop_back();
            if (seen.count(e->node())) continue;
            if (!expanded) {
                stack.push_back({e, true});
                for (std::size_t i = 0; i < e->arity(); ++i)
                    if (!seen.count(e->operand(i).node())) stack.push_back({&e->operand(i), false});
                continue;
            }
            Ins ins{e->op(), static_cast<std::uint8_t>(e->width()), static_cast<std::uint8_t>(aux_of(*e))};
            if (e->op() == Op::Const) {
                ins.k = e->value();
            } else if (e->op() == Op::Var) {
                auto it = slots.find(e->name());
                if (it == slots.end()) throw UnboundVariable(e->name());
                ins.k = it->second;
            } else {
                std::uint32_t* dst[3] = {&ins.a, &ins.b, &ins.c};
                for (std::size_t i = 0; i < e->arity(); ++i) *dst[i] = seen.at(e->operand(i).node());
            }
            seen.emplace(e->node(), static_cast<std::uint32_t>(prog_.size()));
            prog_.push_back(ins);
        }
        return seen.at(root.node());
    };
    for (const auto& r : roots) roots_.push_back(compile(r));
    vals_.resize(prog_.size());
}

void CompiledExprs::run(const std::uint64_t* vars) const {
    for (std::size_t i = 0; i < prog_.size(); ++i) {
        const Ins& in = prog_[i];
        switch (in.op) {
            case Op::Const: vals_[i] = in.k; break;
            case Op::Var: vals_[i] = vars[in.k] & width_mask(in.width); break;
            default: vals_[i] = eval_node(in.op, in.width, in.aux, vals_[in.a], vals_[in.b], vals_[in.c]);
        }
    }
}

std::uint64_t CompiledExprs::value(std::size_t root, const std::uint64_t* vars) const {
    run(vars);
    return vals_[roots_[root]];
}

bool CompiledExprs::all_true(const std::uint64_t* vars) const {
    run(vars);
    for (auto r : roots_)
        if (vals_[r] == 0) return false;
    return true;
}

namespace {

using Assign = std::map<std::string, std::uint64_t>;

bool has_var(const Expr& e, const std::string& x) {
    if (!e.has_vars()) return false;
    if (e.is_var()) return e.name() == x;
    for (std::size_t i = 0; i < e.arity(); ++i)
        if (has_var(e.operand(i), x)) return true;
    return false;
}

std::optional<std::uint64_t> peval(const Expr& e, const Assign& a) {
    if (e.is_const()) return e.value();
    if (e.is_var()) {
        auto it = a.find(e.name());
        if (it == a.end()) return std::nullopt;
        return it->second & width_mask(e.width());
    }
    std::uint64_t v[3] = {0, 0, 0};
    for (std::size_t i = 0; i < e.arity(); ++i) {
        auto r = peval(e.operand(i), a);
        if (!r) return std::nullopt;
        v[i] = *r;
    }
    return eval_node(e.op(), e.width(), aux_of(e), v[0], v[1], v[2]);
}

std::uint64_t odd_inverse(std::uint64_t k) {
    std::uint64_t inv = k;
    for (int i = 0; i < 6; ++i) inv *= 2 - k * inv;
    return inv;
}

enum class Inv { Ok, Fail, No };

// Solves e == target for the single unassigned variable x through a chain of
// injective operators. Fail means no value of x can work.
Inv invert(const Expr& e, std::uint64_t target, const Assign& a, const std::string& x, std::uint64_t& out) {
    target &= width_mask(e.width());
    switch (e.op()) {
        case Op::Var:
            if (e.name() != x) return Inv::No;
            out = target;
            return Inv::Ok;
        case Op::Not: return invert(e.operand(0), ~target, a, x, out);
        case Op::Neg: return invert(e.operand(0), 0 - target, a, x, out);
        case Op::Xor:
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Eq:
        case Op::Ne:
        case Op::Concat: {
            const bool in0 = has_var(e.operand(0), x);
            const bool in1 = has_var(e.operand(1), x);
            if (in0 == in1) return Inv::No;
            const Expr& side = in0 ? e.operand(0) : e.operand(1);
            auto kv = peval(in0 ? e.operand(1) : e.operand(0), a);
            if (!kv) return Inv::No;
            const std::uint64_t k = *kv;
            switch (e.op()) {
                case Op::Xor: return invert(side, target ^ k, a, x, out);
                case Op::Add: return invert(side, target - k, a, x, out);
                case Op::Sub: return in0 ? invert(side, target + k, a, x, out) : invert(side, k - target, a, x, out);
                case Op::Mul:
                    if ((k & 1) == 0) return Inv::No;
                    return invert(side, target * odd_inverse(k), a, x, out);
                case Op::Eq:
                    if (target != 1) return Inv::No;
                    return invert(side, k, a, x, out);
                case Op::Ne:
                    if (target != 0) return Inv::No;
                    return invert(side, k, a, x, out);
                default: {
                    const unsigned wl = e.operand(1).width();
                    if (in0) {
                        if ((target & width_mask(wl)) != k) return Inv::Fail;
                        return invert(side, target >> wl, a, x, out);
                    }
                    if ((target >> wl) != k) return Inv::Fail;
                    return invert(side, target, a, x, out);
                }
            }
        }
        default: return Inv::No;
    }
}

// Assigns every unassigned variable of `t` so that t == target, when t is an
// injective combination of them. Returns false if that is not possible.
bool solve_term(const Expr& t, std::uint64_t target, Assign& a) {
    target &= width_mask(t.width());
    if (auto v = peval(t, a)) return *v == target;
    switch (t.op()) {
        case Op::Var: a[t.name()] = target; return true;
        case Op::Not: return solve_term(t.operand(0), ~target, a);
        case Op::Neg: return solve_term(t.operand(0), 0 - target, a);
        case Op::Concat: {
            const unsigned wl = t.operand(1).width();
            return solve_term(t.operand(1), target & width_mask(wl), a) && solve_term(t.operand(0), target >> wl, a);
        }
        case Op::Xor:
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            auto k0 = peval(t.operand(0), a);
            auto k1 = peval(t.operand(1), a);
            if (k0.has_value() == k1.has_value()) return false;
            const std::uint64_t k = k0 ? *k0 : *k1;
            const Expr& side = k0 ? t.operand(1) : t.operand(0);
            switch (t.op()) {
                case Op::Xor: return solve_term(side, target ^ k, a);
                case Op::Add: return solve_term(side, target - k, a);
                case Op::Sub: return k1 ? solve_term(side, target + k, a) : solve_term(side, k - target, a);
                default:
                    if ((k & 1) == 0) return false;
                    return solve_term(side, target * odd_inverse(k), a);
            }
        }
        default: return false;
    }
}

void collect_consts(const Expr& e, std::set<std::uint64_t>& out) {
    if (e.is_const()) {
        out.insert(e.value());
        return;
    }
    if (!e.has_vars()) return;
    for (std::size_t i = 0; i < e.arity(); ++i) collect_consts(e.operand(i), out);
}

// Splits conjunctions and equalities over concatenations. Returns false if a
// constraint is constant false.
bool normalize(const Expr& c, std::vector<Expr>& out) {
    if (!c.valid() || c.width() != 1) throw ExprError("constraint must have width 1");
    if (c.is_const()) return c.value() != 0;
    if (c.op() == Op::And) return normalize(c.operand(0), out) && normalize(c.operand(1), out);
    if (c.op() == Op::Eq) {
        const Expr* cat = nullptr;
        const Expr* k = nullptr;
        if (c.operand(0).op() == Op::Concat && c.operand(1).is_const()) cat = &c.operand(0), k = &c.operand(1);
        if (c.operand(1).op() == Op::Concat && c.operand(0).is_const()) cat = &c.operand(1), k = &c.operand(0);
        if (cat) {
            const unsigned wl = cat->operand(1).width();
            return normalize(make_raw(Op::Eq, 1, {cat->operand(0), bv(k->value() >> wl, cat->operand(0).width())}), out) &&
                   normalize(make_raw(Op::Eq, 1, {cat->operand(1), bv(k->value(), wl)}), out);
        }
    }
    if (!c.has_vars()) return eval_with_model(c, Model{}) != 0;
    out.push_back(c);
    return true;
}

struct Component {
    std::vector<Expr> cons;
    std::vector<std::set<std::string>> cons_vars;
    std::map<std::string, unsigned> vars;
};

struct SolveParams {
    std::uint64_t seed;
    std::size_t samples;
    unsigned exhaustive_bits;
    std::size_t budget;
};

std::map<std::string, std::size_t> slot_map(const std::map<std::string, unsigned>& vars) {
    std::map<std::string, std::size_t> slots;
    for (auto& [n, _] : vars) slots.emplace(n, slots.size());
    return slots;
}

bool check_assign(const Component& comp, const Assign& a) {
    auto slots = slot_map(comp.vars);
    std::vector<std::uint64_t> vals(slots.size(), 0);
    for (auto& [n, i] : slots)
        if (auto it = a.find(n); it != a.end()) vals[i] = it->second;
    CompiledExprs prog(comp.cons, slots);
    return prog.all_true(vals.data());
}

// Interval reasoning when all remaining constraints compare one term with constants.
std::optional<SatKind> try_interval(const std::vector<Expr>& rest, Assign& a) {
    Expr term;
    std::uint64_t lo = 0, hi = 0;
    std::set<std::uint64_t> excluded;
    for (const Expr& c : rest) {
        Op op = c.op();
        if (op != Op::Eq && op != Op::Ne && op != Op::Ult && op != Op::Ule) return std::nullopt;
        auto k0 = peval(c.operand(0), a);
        auto k1 = peval(c.operand(1), a);
        if (k0.has_value() == k1.has_value()) return std::nullopt;
        const Expr& t = k0 ? c.operand(1) : c.operand(0);
        const std::uint64_t k = k0 ? *k0 : *k1;
        if (!term.valid()) {
            term = t;
            hi = width_mask(t.width());
        } else if (!term.equals(t)) {
            return std::nullopt;
        }
        const std::uint64_t m = width_mask(t.width());
        const bool term_left = !k0;
        switch (op) {
            case Op::Eq: lo = std::max(lo, k), hi = std::min(hi, k); break;
            case Op::Ne: excluded.insert(k); break;
            case Op::Ult:
                if (term_left) {
                    if (k == 0) return SatKind::Unsat;
                    hi = std::min(hi, k - 1);
                } else {
                    if (k == m) return SatKind::Unsat;
                    lo = std::max(lo, k + 1);
                }
                break;
            default:
                if (term_left) hi = std::min(hi, k);
                else lo = std::max(lo, k);
        }
    }
    if (!term.valid()) return std::nullopt;
    if (lo > hi) return SatKind::Unsat;
    std::uint64_t v = lo;
    while (excluded.count(v)) {
        if (v == hi) return SatKind::Unsat;
        ++v;
    }
    Assign trial = a;
    if (!solve_term(term, v, trial)) return std::nullopt;
    a = std::move(trial);
    return SatKind::Sat;
}

SatKind solve_component(const Component& comp, const Model* hint, const SolveParams& p, Assign& out) {
    Assign forced;
    // Forced propagation.
    std::vector<bool> done(comp.cons.size(), false);
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = 0; i < comp.cons.size(); ++i) {
            if (done[i]) continue;
            std::vector<const std::string*> free;
            for (const auto& v : comp.cons_vars[i])
                if (!forced.count(v)) free.push_back(&v);
            if (free.empty()) {
                if (peval(comp.cons[i], forced).value_or(0) == 0) return SatKind::Unsat;
                done[i] = true;
                continue;
            }
            if (free.size() != 1) continue;
            std::uint64_t val = 0;
            Inv r = invert(comp.cons[i], 1, forced, *free[0], val);
            if (r == Inv::Fail) return SatKind::Unsat;
            if (r == Inv::Ok) {
                forced[*free[0]] = val & width_mask(comp.vars.at(*free[0]));
                changed = true;
            }
        }
    }
    std::vector<Expr> rest;
    std::map<std::string, unsigned> free_vars;
    for (std::size_t i = 0; i < comp.cons.size(); ++i) {
        if (done[i]) continue;
        rest.push_back(comp.cons[i]);
        for (const auto& v : comp.cons_vars[i])
            if (!forced.count(v)) free_vars.emplace(v, comp.vars.at(v));
    }
    if (rest.empty()) {
        out = std::move(forced);
        return SatKind::Sat;
    }

    auto slots = slot_map(comp.vars);
    std::vector<std::uint64_t> vals(slots.size(), 0);
    for (auto& [n, v] : forced) vals[slots.at(n)] = v;
    auto hint_value = [&](const std::string& n) -> std::uint64_t {
        if (hint && hint->has(n)) return hint->at(n) & width_mask(comp.vars.at(n));
        return 0;
    };
    auto to_assign = [&]() {
        Assign a;
        for (auto& [n, i] : slots) a[n] = vals[i];
        return a;
    };
    CompiledExprs all(rest, slots);

    // Hint completion.
    for (auto& [n, _] : free_vars) vals[slots.at(n)] = hint_value(n);
    if (all.all_true(vals.data())) {
        out = to_assign();
        return SatKind::Sat;
    }

    // Interval over a single term.
    {
        Assign a = forced;
        if (auto r = try_interval(rest, a)) {
            if (*r == SatKind::Unsat) return SatKind::Unsat;
            for (auto& [n, _] : free_vars) vals[slots.at(n)] = a.count(n) ? a.at(n) : hint_value(n);
            if (all.all_true(vals.data())) {
                out = to_assign();
                return SatKind::Sat;
            }
        }
    }

    // Exhaustive search over few free bits.
    unsigned bits = 0;
    for (auto& [_, w] : free_vars) bits += w;
    if (bits <= p.exhaustive_bits) {
        std::vector<std::string> order;
        std::map<std::string, std::size_t> occurrences;
        for (const auto& c : rest)
            for (const auto& v : vars_of(c))
                if (free_vars.count(v)) ++occurrences[v];
        for (auto& [n, _] : free_vars) order.push_back(n);
        std::stable_sort(order.begin(), order.end(),
                         [&](const std::string& x, const std::string& y) { return occurrences[x] > occurrences[y]; });
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
        std::vector<std::vector<Expr>> at_level(order.size());
        for (const auto& c : rest) {
            std::size_t lvl = 0;
            for (const auto& v : vars_of(c))
                if (auto it = pos.find(v); it != pos.end()) lvl = std::max(lvl, it->second);
            at_level[lvl].push_back(c);
        }
        std::vector<CompiledExprs> checks;
        for (auto& cs : at_level) checks.emplace_back(cs, slots);
        std::size_t visited = 0;
        bool aborted = false;
        std::vector<std::size_t> order_slots;
        for (auto& n : order) order_slots.push_back(slots.at(n));
        auto dfs = [&](auto&& self, std::size_t level) -> bool {
            if (level == order.size()) return true;
            const std::uint64_t m = width_mask(free_vars.at(order[level]));
            std::uint64_t& slot = vals[order_slots[level]];
            for (std::uint64_t v = 0;; ++v) {
                if (++visited > p.budget) {
                    aborted = true;
                    return false;
                }
                slot = v;
                if (checks[level].all_true(vals.data()) && self(self, level + 1)) return true;
                if (aborted || v == m) return false;
            }
        };
        if (dfs(dfs, 0)) {
            out = to_assign();
            return SatKind::Sat;
        }
        if (!aborted) return SatKind::Unsat;
    }

    // Seeded random search.
    std::set<std::uint64_t> consts;
    for (const auto& c : rest) collect_consts(c, consts);
    std::vector<std::uint64_t> pool(consts.begin(), consts.end());
    for (auto k : consts) {
        pool.push_back(k + 1);
        pool.push_back(k - 1);
    }
    std::mt19937_64 rng(p.seed);
    std::vector<std::pair<std::size_t, std::uint64_t>> free_slots;
    for (auto& [n, w] : free_vars) free_slots.push_back({slots.at(n), width_mask(w)});
    for (std::size_t s = 0; s < p.samples; ++s) {
        for (auto& [slot, m] : free_slots) {
            std::uint64_t r = rng();
            switch (r % 4) {
                case 0: vals[slot] = pool.empty() ? 0 : pool[(r >> 8) % pool.size()] & m; break;
                case 1: vals[slot] = (r >> 8) & 1 ? m : 0; break;
                default: vals[slot] = rng() & m;
            }
        }
        if (all.all_true(vals.data())) {
            out = to_assign();
            return SatKind::Sat;
        }
    }
    return SatKind::Unknown;
}

}  // namespace

SatResult Solver::satisfiable(std::span<const Expr> cs, std::span<const Expr> extra, const Model* hint) {
    ++queries_;
    SatResult res;
    std::vector<Expr> flat;
    bool ok = true;
    for (const auto& c : cs) ok = normalize(c, flat) && ok;
    for (const auto& c : extra) ok = normalize(c, flat) && ok;
    if (!ok) {
        res.kind = SatKind::Unsat;
        return res;
    }

    // Partition variables into independent components.
    std::map<std::string, unsigned> widths;
    std::vector<std::set<std::string>> cvars(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        std::map<std::string, unsigned> w;
        collect_vars(flat[i], w);
        for (auto& [n, wd] : w) {
            auto [it, inserted] = widths.emplace(n, wd);
            if (!inserted && it->second != wd) throw ExprError("variable '" + n + "' used at two widths");
            cvars[i].insert(n);
        }
    }
    auto slots = slot_map(widths);
    std::vector<std::size_t> parent(slots.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& vs : cvars) {
        if (vs.empty()) continue;
        std::size_t r = find(slots.at(*vs.begin()));
        for (const auto& v : vs) parent[find(slots.at(v))] = r;
    }
    std::map<std::size_t, Component> comps;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        Component& c = comps[find(slots.at(*cvars[i].begin()))];
        c.cons.push_back(flat[i]);
        c.cons_vars.push_back(cvars[i]);
        for (const auto& v : cvars[i]) c.vars.emplace(v, widths.at(v));
    }

    SatKind overall = SatKind::Sat;
    Assign model;
    SolveParams params{seed_, random_samples, exhaustive_bits, exhaustive_budget};
    for (auto& [_, comp] : comps) {
        Assign hinted;
        for (auto& [n, w] : comp.vars) hinted[n] = hint && hint->has(n) ? hint->at(n) & width_mask(w) : 0;
        if (check_assign(comp, hinted)) {
            model.insert(hinted.begin(), hinted.end());
            continue;
        }
        Assign part;
        SatKind k = solve_component(comp, hint, params, part);
        if (k == SatKind::Unsat) {
            res.kind = SatKind::Unsat;
            return res;
        }
        if (k == SatKind::Unknown) {
            overall = SatKind::Unknown;
            continue;
        }
        for (auto& [n, w] : comp.vars) {
            auto it = part.find(n);
            model[n] = it != part.end() ? it->second & width_mask(w) : hinted[n];
        }
    }
    if (overall == SatKind::Sat) {
        std::vector<std::uint64_t> vals(slots.size(), 0);
        for (auto& [n, i] : slots) vals[i] = model.at(n);
        CompiledExprs verify(flat, slots);
        if (!verify.all_true(vals.data())) overall = SatKind::Unknown;
    }
    res.kind = overall;
    if (overall == SatKind::Sat) res.model.values = std::move(model);
    else ++unknowns_;
    return res;
}

std::uint64_t Solver::eval(const Expr& e, std::span<const Expr> cs, std::span<const Expr> extra, const Model* hint) {
    SatResult r = satisfiable(cs, extra, hint);
    if (!r.sat()) throw NoModel();
    std::map<std::string, unsigned> vars;
    collect_vars(e, vars);
    for (auto& [n, w] : vars)
        if (!r.model.has(n)) r.model.values[n] = hint && hint->has(n) ? hint->at(n) & width_mask(w) : 0;
    return eval_with_model(e, r.model);
}

}  // namespace dyncfg
