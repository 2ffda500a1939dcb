#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dyncfg/expr.hpp"

namespace dyncfg {

inline constexpr std::uint64_t kDefaultSeed = 0x5BF1;

// kDefaultSeed unless DYNCFG_SEED is set in the environment.
std::uint64_t default_seed();

enum class SatKind { Sat, Unsat, Unknown };

const char* to_string(SatKind k);

struct SatResult {
    SatKind kind = SatKind::Unknown;
    Model model;  // total over the variables of the query when kind == Sat

    bool sat() const { return kind == SatKind::Sat; }
};

class NoModel : public std::runtime_error {
public:
    NoModel() : std::runtime_error("NoModel: constraints are not satisfiable") {}
};

// Evaluates a fixed set of expressions over a dense vector of variable values.
// Shared subterms are computed once.
class CompiledExprs {
public:
    CompiledExprs(std::span<const Expr> roots, const std::map<std::string, std::size_t>& slots);

    std::uint64_t value(std::size_t root, const std::uint64_t* vars) const;
    bool all_true(const std::uint64_t* vars) const;
    std::size_t size() const { return roots_.size(); }

private:
    struct Ins {
        Op op;
        std::uint8_t width;
        std::uint8_t aux;  // operand width for comparisons, low width for concat, lo for extract
        std::uint32_t a = 0, b = 0, c = 0;
        std::uint64_t k = 0;  // constant value or variable slot
    };
    void run(const std::uint64_t* vars) const;

    std::vector<Ins> prog_;
    std::vector<std::uint32_t> roots_;
    mutable std::vector<std::uint64_t> vals_;
};

// Decision procedure for the bitvector fragment used by the analysis. Sat answers
// are always re-verified against every constraint; anything that fails the check
// is reported as Unknown. Results depend only on the inputs and the seed.
class Solver {
public:
    explicit Solver(std::uint64_t seed = default_seed()) : seed_(seed) {}

    SatResult satisfiable(std::span<const Expr> cs, std::span<const Expr> extra = {},
                          const Model* hint = nullptr);

    // Value of `e` under a model of cs ∪ extra. Throws NoModel if there is none.
    std::uint64_t eval(const Expr& e, std::span<const Expr> cs, std::span<const Expr> extra = {},
                       const Model* hint = nullptr);

    std::uint64_t seed() const { return seed_; }
    std::size_t unknown_count() const { return unknowns_; }
    std::size_t query_count() const { return queries_; }
    void reset_counters() { unknowns_ = queries_ = 0; }

    std::size_t random_samples = 4096;
    unsigned exhaustive_bits = 24;
    std::size_t exhaustive_budget = std::size_t{1} << 23;

private:
    std::uint64_t seed_;
    std::size_t unknowns_ = 0;
    std::size_t queries_ = 0;
};

}  // namespace dyncfg
