#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyncfg/expr.hpp"

namespace testsupport {

// ---------------------------------------------------------------- reference expressions
//
// A second, independent expression representation. Terms are generated here, evaluated
// here with their own semantics, and only translated to library expressions for the
// solver under test.

struct Term {
    enum Kind { Const, Var, Add, Sub, Xor, And, Or, Not, Extract, Concat, Eq, Ne, Ult, Ule, Slt, LAnd, LOr, LNot };
    Kind kind = Const;
    unsigned width = 8;
    std::uint64_t k = 0;
    int var = 0;
    unsigned lo = 0;
    std::vector<std::shared_ptr<Term>> kids;
};
using TermP = std::shared_ptr<Term>;

inline std::uint64_t mask(unsigned w) { return w >= 64 ? ~0ull : (1ull << w) - 1; }

inline std::int64_t sext(std::uint64_t v, unsigned w) {
    if (w >= 64) return static_cast<std::int64_t>(v);
    const std::uint64_t sign = 1ull << (w - 1);
    return static_cast<std::int64_t>((v ^ sign) - sign);
}

inline std::uint64_t eval_term(const Term& t, const std::uint64_t* vars) {
    auto a = [&] { return eval_term(*t.kids[0], vars); };
    auto b = [&] { return eval_term(*t.kids[1], vars); };
    const unsigned ow = t.kids.empty() ? 0 : t.kids[0]->width;
    switch (t.kind) {
        case Term::Const: return t.k;
        case Term::Var: return vars[t.var] & 0xFF;
        case Term::Add: return (a() + b()) & mask(t.width);
        case Term::Sub: return (a() - b()) & mask(t.width);
        case Term::Xor: return a() ^ b();
        case Term::And: return a() & b();
        case Term::Or: return a() | b();
        case Term::Not: return ~a() & mask(t.width);
        case Term::Extract: return (a() >> t.lo) & mask(t.width);
        case Term::Concat: return (a() << t.kids[1]->width) | b();
        case Term::Eq: return a() == b();
        case Term::Ne: return a() != b();
        case Term::Ult: return a() < b();
        case Term::Ule: return a() <= b();
        case Term::Slt: return sext(a(), ow) < sext(b(), ow);
        case Term::LAnd: return a() && b();
        case Term::LOr: return a() || b();
        case Term::LNot: return !a();
    }
    return 0;
}

inline dyncfg::Expr to_expr(const Term& t) {
    using namespace dyncfg;
    auto a = [&] { return to_expr(*t.kids[0]); };
    auto b = [&] { return to_expr(*t.kids[1]); };
    switch (t.kind) {
        case Term::Const: return bv(t.k, t.width);
        case Term::Var: return var("v" + std::to_string(t.var), 8);
        case Term::Add: return add(a(), b());
        case Term::Sub: return sub(a(), b());
        case Term::Xor: return bxor(a(), b());
        case Term::And: return band(a(), b());
        case Term::Or: return bor(a(), b());
        case Term::Not: return bnot(a());
        case Term::Extract: return extract(t.lo + t.width - 1, t.lo, a());
        case Term::Concat: return concat(a(), b());
        case Term::Eq: return eq(a(), b());
        case Term::Ne: return ne(a(), b());
        case Term::Ult: return ult(a(), b());
        case Term::Ule: return ule(a(), b());
        case Term::Slt: return slt(a(), b());
        case Term::LAnd: return land(a(), b());
        case Term::LOr: return lor(a(), b());
        case Term::LNot: return lnot(a());
    }
    return {};
}

class TermGen {
public:
    TermGen(std::mt19937_64& rng, int nvars) : rng_(rng), nvars_(nvars) {}

    // Width-8 value term.
    TermP value(int depth) {
        auto t = std::make_shared<Term>();
        const int pick = depth <= 0 ? static_cast<int>(rng_() % 2) : static_cast<int>(rng_() % 9);
        switch (pick) {
            case 0:
                t->kind = Term::Var;
                t->var = static_cast<int>(rng_() % nvars_);
                return t;
            case 1:
                t->kind = Term::Const;
                t->k = rng_() & 0xFF;
                return t;
            case 2: t->kind = Term::Add; break;
            case 3: t->kind = Term::Sub; break;
            case 4: t->kind = Term::Xor; break;
            case 5: t->kind = Term::And; break;
            case 6: t->kind = Term::Or; break;
            case 7: {
                // low or high byte of a 16-bit concatenation
                auto c = std::make_shared<Term>();
                c->kind = Term::Concat;
                c->width = 16;
                c->kids = {value(depth - 1), value(depth - 1)};
                t->kind = Term::Extract;
                t->lo = (rng_() % 2) ? 8 : 0;
                t->kids = {c};
                return t;
            }
            default:
                t->kind = Term::Not;
                t->kids = {value(depth - 1)};
                return t;
        }
        t->kids = {value(depth - 1), value(depth - 1)};
        return t;
    }

    // Width-1 constraint.
    TermP constraint(int depth) {
        auto t = std::make_shared<Term>();
        t->width = 1;
        const int pick = static_cast<int>(rng_() % 10);
        if (pick < 5 || depth <= 0) {
            static constexpr Term::Kind cmp[] = {Term::Eq, Term::Ne, Term::Ult, Term::Ule, Term::Slt};
            t->kind = cmp[rng_() % 5];
            t->kids = {value(2), value(1)};
        } else if (pick < 7) {
            t->kind = Term::LAnd;
            t->kids = {constraint(depth - 1), constraint(depth - 1)};
        } else if (pick < 9) {
            t->kind = Term::LOr;
            t->kids = {constraint(depth - 1), constraint(depth - 1)};
        } else {
            t->kind = Term::LNot;
            t->kids = {constraint(depth - 1)};
        }
        return t;
    }

private:
    std::mt19937_64& rng_;
    int nvars_;
};

// ---------------------------------------------------------------- DOT grammar

// Recursive-descent check of the DOT language subset: digraph with node, edge,
// attribute and assignment statements; identifiers, numerals and quoted strings.
class DotChecker {
public:
    explicit DotChecker(std::string text) : s_(std::move(text)) {}

    bool ok(std::string* err = nullptr) {
        try {
            graph();
            ws();
            if (i_ != s_.size()) fail("trailing input");
            return true;
        } catch (const std::runtime_error& e) {
            if (err) *err = e.what();
            return false;
        }
    }

    std::size_t nodes = 0;
    std::size_t edges = 0;

private:
    [[noreturn]] void fail(const std::string& what) {
        throw std::runtime_error(what + " at offset " + std::to_string(i_));
    }
    void ws() {
        while (i_ < s_.size()) {
            if (std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
            else if (s_.compare(i_, 2, "//") == 0) while (i_ < s_.size() && s_[i_] != '\n') ++i_;
            else break;
        }
    }
    bool peek(const std::string& t) {
        ws();
        return s_.compare(i_, t.size(), t) == 0;
    }
    void expect(const std::string& t) {
        if (!peek(t)) fail("expected '" + t + "'");
        i_ += t.size();
    }
    bool keyword(const std::string& k) {
        ws();
        if (s_.compare(i_, k.size(), k) != 0) return false;
        const std::size_t j = i_ + k.size();
        if (j < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '_')) return false;
        i_ = j;
        return true;
    }
    std::string id() {
        ws();
        if (i_ >= s_.size()) fail("expected identifier");
        const std::size_t b = i_;
        if (s_[i_] == '"') {
            ++i_;
            while (i_ < s_.size() && s_[i_] != '"') {
                if (s_[i_] == '\\') ++i_;
                ++i_;
            }
            if (i_ >= s_.size()) fail("unterminated string");
            ++i_;
            return s_.substr(b, i_ - b);
        }
        if (std::isalpha(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_') {
            while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
            return s_.substr(b, i_ - b);
        }
        if (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '-' || s_[i_] == '.') {
            if (s_[i_] == '-') ++i_;
            bool digits = false;
            while (i_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.')) {
                digits = digits || s_[i_] != '.';
                ++i_;
            }
            if (!digits) fail("bad numeral");
            return s_.substr(b, i_ - b);
        }
        fail("expected identifier");
    }
    void attr_list() {
        while (peek("[")) {
            expect("[");
            while (!peek("]")) {
                id();
                expect("=");
                id();
                if (peek(",") || peek(";")) ++i_;
            }
            expect("]");
        }
    }
    void stmt() {
        if (keyword("graph") || keyword("node") || keyword("edge")) {
            if (!peek("[")) fail("expected attribute list");
            attr_list();
            return;
        }
        id();
        if (peek("=")) {
            expect("=");
            id();
            return;
        }
        if (peek("->")) {
            while (peek("->")) {
                expect("->");
                id();
                ++edges;
            }
        } else {
            ++nodes;
        }
        attr_list();
    }
    void graph() {
        keyword("strict");
        if (!keyword("digraph")) fail("expected digraph");
        if (!peek("{")) id();
        expect("{");
        while (!peek("}")) {
            if (i_ >= s_.size()) fail("unterminated graph");
            stmt();
            if (peek(";")) ++i_;
        }
        expect("}");
    }

    std::string s_;
    std::size_t i_ = 0;
};

// ---------------------------------------------------------------- report schema

inline bool exact_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, std::string& err,
                       const std::string& where) {
    if (!j.is_object()) {
        err = where + ": not an object";
        return false;
    }
    if (j.size() != keys.size()) {
        err = where + ": expected " + std::to_string(keys.size()) + " keys, got " + std::to_string(j.size());
        return false;
    }
    for (const char* k : keys)
        if (!j.contains(k)) {
            err = where + ": missing key " + k;
            return false;
        }
    return true;
}

inline bool check_metrics(const nlohmann::json& j, std::string& err, const std::string& where) {
    if (!exact_keys(j, {"nodes", "edges", "functions", "objects"}, err, where)) return false;
    for (auto& [k, v] : j.items())
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            err = where + "." + k + ": not a non-negative integer";
            return false;
        }
    return true;
}

// Strict check of one benchmark report.
inline bool check_report(const nlohmann::json& j, std::string& err) {
    if (!exact_keys(j, {"benchmark", "steps", "seconds", "static", "module", "discovered", "validation", "dispatchers",
                        "smc", "warnings"},
                    err, "report"))
        return false;
    if (!j["benchmark"].is_string()) return err = "benchmark: not a string", false;
    if (!j["steps"].is_number_integer()) return err = "steps: not an integer", false;
    if (!j["seconds"].is_number()) return err = "seconds: not a number", false;
    if (!check_metrics(j["static"], err, "static") || !check_metrics(j["module"], err, "module")) return false;
    if (!j["discovered"].is_array()) return err = "discovered: not an array", false;
    for (const auto& d : j["discovered"]) {
        if (!exact_keys(d, {"path", "mechanism", "chain"}, err, "discovered[]")) return false;
        if (!d["path"].is_string() || !d["mechanism"].is_string() || !d["chain"].is_array())
            return err = "discovered[]: bad field type", false;
        for (const auto& e : d["chain"])
            if (!e.is_object() || !e.contains("kind")) return err = "chain event: no kind", false;
    }
    const auto& v = j["validation"];
    if (!v.is_string() || (v != "pass" && v != "fail" && v != "skipped")) return err = "validation: bad value", false;
    for (const char* k : {"dispatchers", "smc", "warnings"})
        if (!j[k].is_array()) return err = std::string(k) + ": not an array", false;
    for (const auto& w : j["warnings"])
        if (!w.is_string()) return err = "warnings[]: not a string", false;
    return true;
}

inline bool check_growth(const nlohmann::json& j, std::string& err, const std::string& where) {
    if (!exact_keys(j, {"nodes", "edges", "functions"}, err, where)) return false;
    for (auto& [k, v] : j.items())
        if (!v.is_number()) return err = where + "." + k + ": not a number", false;
    return true;
}

inline bool check_suite(const nlohmann::json& j, std::string& err) {
    if (!exact_keys(j, {"benchmarks", "precision", "recall", "growth_mean", "growth_pooled"}, err, "suite")) return false;
    if (!j["benchmarks"].is_array()) return err = "benchmarks: not an array", false;
    for (const auto& r : j["benchmarks"])
        if (!check_report(r, err)) return false;
    if (!j["precision"].is_number() || !j["recall"].is_number()) return err = "precision/recall: not numbers", false;
    return check_growth(j["growth_mean"], err, "growth_mean") && check_growth(j["growth_pooled"], err, "growth_pooled");
}

// ---------------------------------------------------------------- misc

// Fresh directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    std::random_device rd;
    auto p = std::filesystem::temp_directory_path() / ("dyncfg-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testsupport
