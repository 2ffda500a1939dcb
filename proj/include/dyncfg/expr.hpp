#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyncfg {

// Bitvector expressions. Widths are 1..64 bits; comparison operators yield
// width 1. Nodes are immutable and shared. Every builder below applies local
// constant folding and algebraic rewrites, so expressions built through them
// are already in simplified form; `make_raw` skips the rewrites.

enum class Op : std::uint8_t {
    Const,
    Var,
    Neg,
    Not,
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
    Extract,
    Concat,
    Ite,
};

const char* to_string(Op op);

struct ExprNode;
class Expr;
Expr make_node(ExprNode node);

class Expr {
public:
    Expr() = default;

    bool valid() const { return static_cast<bool>(n_); }
    unsigned width() const;
    Op op() const;
    std::uint64_t value() const;      // Const only
    const std::string& name() const;  // Var only
    const std::string& origin() const;
    unsigned hi() const;  // Extract only
    unsigned lo() const;
    std::size_t arity() const;
    const Expr& operand(std::size_t i) const;

    bool is_const() const { return valid() && op() == Op::Const; }
    bool is_const(std::uint64_t v) const { return is_const() && value() == v; }
    bool is_var() const { return valid() && op() == Op::Var; }
    bool has_vars() const;
    std::size_t hash() const;

    // Structural equality.
    bool equals(const Expr& o) const;
    const ExprNode* node() const { return n_.get(); }

    std::string to_string() const;

private:
    friend Expr make_node(ExprNode node);
    std::shared_ptr<const ExprNode> n_;
};

struct ExprNode {
    Op op = Op::Const;
    std::uint8_t width = 0;
    std::uint8_t hi = 0;
    std::uint8_t lo = 0;
    bool has_vars = false;
    std::uint64_t value = 0;
    std::string name;
    std::string origin;
    Expr kids[3];
    std::size_t hash = 0;
};

inline unsigned Expr::width() const { return n_->width; }
inline Op Expr::op() const { return n_->op; }
inline std::uint64_t Expr::value() const { return n_->value; }
inline const std::string& Expr::name() const { return n_->name; }
inline const std::string& Expr::origin() const { return n_->origin; }
inline unsigned Expr::hi() const { return n_->hi; }
inline unsigned Expr::lo() const { return n_->lo; }
inline const Expr& Expr::operand(std::size_t i) const { return n_->kids[i]; }
inline bool Expr::has_vars() const { return n_->has_vars; }
inline std::size_t Expr::hash() const { return n_->hash; }

class ExprError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UnboundVariable : public std::runtime_error {
public:
    explicit UnboundVariable(const std::string& name)
        : std::runtime_error("UnboundVariable: " + name), name_(name) {}
    const std::string& var() const { return name_; }

private:
    std::string name_;
};

constexpr std::uint64_t width_mask(unsigned w) { return w >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << w) - 1; }
std::int64_t sign_extend(std::uint64_t v, unsigned w);

// Builders.
Expr bv(std::uint64_t value, unsigned width);
Expr var(std::string name, unsigned width, std::string origin = {});
Expr make_raw(Op op, unsigned width, std::vector<Expr> kids, unsigned hi = 0, unsigned lo = 0);

Expr neg(const Expr& a);
Expr bnot(const Expr& a);
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr bxor(const Expr& a, const Expr& b);
Expr band(const Expr& a, const Expr& b);
Expr bor(const Expr& a, const Expr& b);
Expr shl(const Expr& a, const Expr& b);
Expr shr(const Expr& a, const Expr& b);
Expr eq(const Expr& a, const Expr& b);
Expr ne(const Expr& a, const Expr& b);
Expr ult(const Expr& a, const Expr& b);
Expr ule(const Expr& a, const Expr& b);
Expr slt(const Expr& a, const Expr& b);
Expr extract(unsigned hi, unsigned lo, const Expr& e);
Expr concat(const Expr& high, const Expr& low);
Expr ite(const Expr& cond, const Expr& t, const Expr& f);

inline Expr uge(const Expr& a, const Expr& b) { return ule(b, a); }
inline Expr ugt(const Expr& a, const Expr& b) { return ult(b, a); }
inline Expr land(const Expr& a, const Expr& b) { return band(a, b); }
inline Expr lor(const Expr& a, const Expr& b) { return bor(a, b); }
inline Expr lnot(const Expr& a) { return bnot(a); }
Expr zext(const Expr& e, unsigned width);
Expr low_bits(const Expr& e, unsigned width);

// Generic binary builder dispatching on op.
Expr apply(Op op, const Expr& a, const Expr& b);

Expr simplify(const Expr& e);
bool is_symbolic(const Expr& e);

struct Model {
    std::map<std::string, std::uint64_t> values;

    bool has(const std::string& n) const { return values.count(n) != 0; }
    std::uint64_t at(const std::string& n) const;
    bool operator==(const Model&) const = default;
};

std::uint64_t eval_with_model(const Expr& e, const Model& m);

// Variable name -> width for every Var in `e`.
void collect_vars(const Expr& e, std::map<std::string, unsigned>& out);
std::set<std::string> vars_of(const Expr& e);
bool contains_var(const Expr& e, const std::set<std::string>& names);
std::size_t node_count(const Expr& e);

}  // namespace dyncfg
