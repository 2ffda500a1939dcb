#include "dyncfg/expr.hpp"

#include <array>
#include <functional>
#include <sstream>
#include <utility>

namespace dyncfg {

namespace {

std::size_t mix(std::size_t h, std::size_t v) { return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)); }

bool is_comparison(Op op) {
    return op == Op::Eq || op == Op::Ne || op == Op::Ult || op == Op::Ule || op == Op::Slt;
}

std::uint64_t fold_binary(Op op, std::uint64_t a, std::uint64_t b, unsigned w) {
    const std::uint64_t m = width_mask(w);
    switch (op) {
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
        case Op::Slt: return sign_extend(a, w) < sign_extend(b, w);
        default: throw ExprError("fold_binary: not a binary operator");
    }
}

void check_width(unsigned w) {
    if (w < 1 || w > 64) throw ExprError("width out of range: " + std::to_string(w));
}

void check_same(const Expr& a, const Expr& b, const char* what) {
    if (!a.valid() || !b.valid()) throw ExprError(std::string(what) + ": null operand");
    if (a.width() != b.width())
        throw ExprError(std::string(what) + ": width mismatch " + std::to_string(a.width()) + " vs " +
                        std::to_string(b.width()));
}

const std::array<Expr, 256>& byte_consts();
const std::array<Expr, 2>& bool_consts();

Expr const_node(std::uint64_t value, unsigned width) {
    ExprNode n;
    n.op = Op::Const;
    n.width = static_cast<std::uint8_t>(width);
    n.value = value & width_mask(width);
    return make_node(std::move(n));
}

const std::array<Expr, 256>& byte_consts() {
    static const std::array<Expr, 256> table = [] {
        std::array<Expr, 256> t;
        for (unsigned i = 0; i < 256; ++i) t[i] = const_node(i, 8);
        return t;
    }();
    return table;
}

const std::array<Expr, 2>& bool_consts() {
    static const std::array<Expr, 2> table = {const_node(0, 1), const_node(1, 1)};
    return table;
}

Expr raw2(Op op, unsigned w, const Expr& a, const Expr& b) {
    ExprNode n;
    n.op = op;
    n.width = static_cast<std::uint8_t>(w);
    n.kids[0] = a;
    n.kids[1] = b;
    return make_node(std::move(n));
}

Expr raw1(Op op, unsigned w, const Expr& a) {
    ExprNode n;
    n.op = op;
    n.width = static_cast<std::uint8_t>(w);
    n.kids[0] = a;
    return make_node(std::move(n));
}

// Split a constant against a concat shape: returns (high part, low part).
std::pair<Expr, Expr> split_const(const Expr& c, unsigned low_width) {
    unsigned hw = c.width() - low_width;
    return {bv(c.value() >> low_width, hw), bv(c.value() & width_mask(low_width), low_width)};
}

}  // namespace

const char* to_string(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Var: return "var";
        case Op::Neg: return "neg";
        case Op::Not: return "not";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Xor: return "xor";
        case Op::And: return "and";
        case Op::Or: return "or";
        case Op::Shl: return "shl";
        case Op::Shr: return "shr";
        case Op::Eq: return "eq";
        case Op::Ne: return "ne";
        case Op::Ult: return "ult";
        case Op::Ule: return "ule";
        case Op::Slt: return "slt";
        case Op::Extract: return "extract";
        case Op::Concat: return "concat";
        case Op::Ite: return "ite";
    }
    return "?";
}

std::int64_t sign_extend(std::uint64_t v, unsigned w) {
    if (w >= 64) return static_cast<std::int64_t>(v);
    std::uint64_t sign = std::uint64_t{1} << (w - 1);
    v &= width_mask(w);
    return static_cast<std::int64_t>((v ^ sign) - sign);
}

Expr make_node(ExprNode node) {
    std::size_t h = std::hash<int>{}(static_cast<int>(node.op));
    h = mix(h, node.width);
    h = mix(h, node.hi);
    h = mix(h, node.lo);
    h = mix(h, std::hash<std::uint64_t>{}(node.value));
    if (node.op == Op::Var) {
        h = mix(h, std::hash<std::string>{}(node.name));
        node.has_vars = true;
    }
    for (const auto& k : node.kids) {
        if (!k.valid()) continue;
        h = mix(h, k.hash());
        node.has_vars = node.has_vars || k.has_vars();
    }
    node.hash = h;
    Expr e;
    e.n_ = std::make_shared<const ExprNode>(std::move(node));
    return e;
}

std::size_t Expr::arity() const {
    std::size_t n = 0;
    while (n < 3 && n_->kids[n].valid()) ++n;
    return n;
}

bool Expr::equals(const Expr& o) const {
    if (n_ == o.n_) return true;
    if (!n_ || !o.n_) return false;
    if (hash() != o.hash()) return false;
    const ExprNode& a = *n_;
    const ExprNode& b = *o.n_;
    if (a.op != b.op || a.width != b.width || a.hi != b.hi || a.lo != b.lo || a.value != b.value || a.name != b.name)
        return false;
    for (int i = 0; i < 3; ++i) {
        if (a.kids[i].valid() != b.kids[i].valid()) return false;
        if (a.kids[i].valid() && !a.kids[i].equals(b.kids[i])) return false;
    }
    return true;
}

std::string Expr::to_string() const {
    if (!n_) return "<null>";
    std::ostringstream os;
    switch (op()) {
        case Op::Const: os << "0x" << std::hex << value() << std::dec << ":" << width(); break;
        case Op::Var: os << name() << ":" << width(); break;
        case Op::Extract: os << "(extract " << hi() << " " << lo() << " " << operand(0).to_string() << ")"; break;
        default:
            os << "(" << dyncfg::to_string(op());
            for (std::size_t i = 0; i < arity(); ++i) os << " " << operand(i).to_string();
            os << ")";
    }
    return os.str();
}

Expr bv(std::uint64_t value, unsigned width) {
    check_width(width);
    value &= width_mask(width);
    if (width == 8) return byte_consts()[value];
    if (width == 1) return bool_consts()[value];
    return const_node(value, width);
}

Expr var(std::string name, unsigned width, std::string origin) {
    check_width(width);
    if (name.empty()) throw ExprError("variable needs a name");
    ExprNode n;
    n.op = Op::Var;
    n.width = static_cast<std::uint8_t>(width);
    n.name = std::move(name);
    n.origin = std::move(origin);
    return make_node(std::move(n));
}

Expr make_raw(Op op, unsigned width, std::vector<Expr> kids, unsigned hi, unsigned lo) {
    check_width(width);
    switch (op) {
        case Op::Const:
        case Op::Var: throw ExprError("make_raw: use bv()/var() for leaves");
        case Op::Neg:
        case Op::Not:
            if (kids.size() != 1 || kids[0].width() != width) throw ExprError("make_raw: unary shape");
            return raw1(op, width, kids[0]);
        case Op::Extract: {
            if (kids.size() != 1 || hi < lo || hi >= kids[0].width() || width != hi - lo + 1)
                throw ExprError("make_raw: extract shape");
            ExprNode n;
            n.op = op;
            n.width = static_cast<std::uint8_t>(width);
            n.hi = static_cast<std::uint8_t>(hi);
            n.lo = static_cast<std::uint8_t>(lo);
            n.kids[0] = kids[0];
            return make_node(std::move(n));
        }
        case Op::Concat:
            if (kids.size() != 2 || kids[0].width() + kids[1].width() != width)
                throw ExprError("make_raw: concat shape");
            return raw2(op, width, kids[0], kids[1]);
        case Op::Ite: {
            if (kids.size() != 3 || kids[0].width() != 1 || kids[1].width() != width || kids[2].width() != width)
                throw ExprError("make_raw: ite shape");
            ExprNode n;
            n.op = op;
            n.width = static_cast<std::uint8_t>(width);
            n.kids[0] = kids[0];
            n.kids[1] = kids[1];
            n.kids[2] = kids[2];
            return make_node(std::move(n));
        }
        default:
            if (kids.size() != 2) throw ExprError("make_raw: binary shape");
            check_same(kids[0], kids[1], to_string(op));
            if (is_comparison(op) ? width != 1 : width != kids[0].width())
                throw ExprError("make_raw: result width");
            return raw2(op, width, kids[0], kids[1]);
    }
}

// ---------------------------------------------------------------------------
// Smart builders

Expr neg(const Expr& a) {
    if (a.is_const()) return bv(0 - a.value(), a.width());
    if (a.op() == Op::Neg) return a.operand(0);
    return raw1(Op::Neg, a.width(), a);
}

Expr bnot(const Expr& a) {
    const unsigned w = a.width();
    if (a.is_const()) return bv(~a.value(), w);
    switch (a.op()) {
        case Op::Not: return a.operand(0);
        case Op::Eq: return ne(a.operand(0), a.operand(1));
        case Op::Ne: return eq(a.operand(0), a.operand(1));
        case Op::Ult: return ule(a.operand(1), a.operand(0));
        case Op::Ule: return ult(a.operand(1), a.operand(0));
        case Op::Concat: return concat(bnot(a.operand(0)), bnot(a.operand(1)));
        default: return raw1(Op::Not, w, a);
    }
}

Expr add(const Expr& a0, const Expr& b0) {
    check_same(a0, b0, "add");
    Expr a = a0, b = b0;
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(a.value() + b.value(), w);
    if (a.is_const()) std::swap(a, b);
    if (b.is_const(0)) return a;
    if (b.is_const() && a.op() == Op::Add && a.operand(1).is_const())
        return add(a.operand(0), bv(a.operand(1).value() + b.value(), w));
    return raw2(Op::Add, w, a, b);
}

Expr sub(const Expr& a, const Expr& b) {
    check_same(a, b, "sub");
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(a.value() - b.value(), w);
    if (b.is_const()) return add(a, bv(0 - b.value(), w));
    if (a.equals(b)) return bv(0, w);
    return raw2(Op::Sub, w, a, b);
}

Expr mul(const Expr& a0, const Expr& b0) {
    check_same(a0, b0, "mul");
    Expr a = a0, b = b0;
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(a.value() * b.value(), w);
    if (a.is_const()) std::swap(a, b);
    if (b.is_const(0)) return b;
    if (b.is_const(1)) return a;
    if (b.is_const() && a.op() == Op::Mul && a.operand(1).is_const())
        return mul(a.operand(0), bv(a.operand(1).value() * b.value(), w));
    return raw2(Op::Mul, w, a, b);
}

namespace {

// Shared logic for xor/and/or.
Expr bitwise(Op op, const Expr& a0, const Expr& b0) {
    check_same(a0, b0, to_string(op));
    Expr a = a0, b = b0;
    const unsigned w = a.width();
    const std::uint64_t m = width_mask(w);
    if (a.is_const() && b.is_const()) return bv(fold_binary(op, a.value(), b.value(), w), w);
    if (a.is_const()) std::swap(a, b);
    if (b.is_const()) {
        const std::uint64_t c = b.value();
        if (op == Op::Xor && c == 0) return a;
        if (op == Op::And && c == 0) return b;
        if (op == Op::And && c == m) return a;
        if (op == Op::Or && c == 0) return a;
        if (op == Op::Or && c == m) return b;
        if (op == Op::Xor && c == m) return bnot(a);
        if (a.op() == op && a.operand(1).is_const())
            return bitwise(op, a.operand(0), bv(fold_binary(op, a.operand(1).value(), c, w), w));
        if (a.op() == Op::Concat) {
            auto [hi, lo] = split_const(b, a.operand(1).width());
            return concat(bitwise(op, a.operand(0), hi), bitwise(op, a.operand(1), lo));
        }
    }
    if (a.equals(b)) return op == Op::Xor ? bv(0, w) : a;
    return raw2(op, w, a, b);
}

Expr shift(Op op, const Expr& a, const Expr& b) {
    check_same(a, b, to_string(op));
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(fold_binary(op, a.value(), b.value(), w), w);
    if (b.is_const()) {
        if (b.value() >= w) return bv(0, w);
        if (b.value() == 0) return a;
    }
    if (a.is_const(0)) return a;
    return raw2(op, w, a, b);
}

// a is concat(Const 0, x) with a known zero prefix: returns x, else invalid.
Expr strip_zero_prefix(const Expr& a) {
    if (a.op() == Op::Concat && a.operand(0).is_const(0)) return a.operand(1);
    return {};
}

}  // namespace

Expr bxor(const Expr& a, const Expr& b) { return bitwise(Op::Xor, a, b); }
Expr band(const Expr& a, const Expr& b) { return bitwise(Op::And, a, b); }
Expr bor(const Expr& a, const Expr& b) { return bitwise(Op::Or, a, b); }
Expr shl(const Expr& a, const Expr& b) { return shift(Op::Shl, a, b); }
Expr shr(const Expr& a, const Expr& b) { return shift(Op::Shr, a, b); }

Expr eq(const Expr& a0, const Expr& b0) {
    check_same(a0, b0, "eq");
    Expr a = a0, b = b0;
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(a.value() == b.value(), 1);
    if (a.equals(b)) return bv(1, 1);
    if (a.is_const()) std::swap(a, b);
    if (b.is_const()) {
        const std::uint64_t c = b.value();
        if (w == 1) return c ? a : bnot(a);
        if (a.op() == Op::Xor && a.operand(1).is_const()) return eq(a.operand(0), bv(c ^ a.operand(1).value(), w));
        if (a.op() == Op::Add && a.operand(1).is_const()) return eq(a.operand(0), bv(c - a.operand(1).value(), w));
        if (a.op() == Op::Not) return eq(a.operand(0), bv(~c, w));
        if (a.op() == Op::Neg) return eq(a.operand(0), bv(0 - c, w));
        if (a.op() == Op::Concat) {
            auto [hi, lo] = split_const(b, a.operand(1).width());
            return land(eq(a.operand(0), hi), eq(a.operand(1), lo));
        }
    }
    return raw2(Op::Eq, 1, a, b);
}

Expr ne(const Expr& a0, const Expr& b0) {
    check_same(a0, b0, "ne");
    Expr a = a0, b = b0;
    const unsigned w = a.width();
    if (a.is_const() && b.is_const()) return bv(a.value() != b.value(), 1);
    if (a.equals(b)) return bv(0, 1);
    if (a.is_const()) std::swap(a, b);
    if (b.is_const()) {
        const std::uint64_t c = b.value();
        if (w == 1) return c ? bnot(a) : a;
        if (a.op() == Op::Xor && a.operand(1).is_const()) return ne(a.operand(0), bv(c ^ a.operand(1).value(), w));
        if (a.op() == Op::Add && a.operand(1).is_const()) return ne(a.operand(0), bv(c - a.operand(1).value(), w));
        if (a.op() == Op::Concat) {
            auto [hi, lo] = split_const(b, a.operand(1).width());
            return lor(ne(a.operand(0), hi), ne(a.operand(1), lo));
        }
    }
    return raw2(Op::Ne, 1, a, b);
}

Expr ult(const Expr& a, const Expr& b) {
    check_same(a, b, "ult");
    if (a.is_const() && b.is_const()) return bv(a.value() < b.value(), 1);
    if (a.equals(b)) return bv(0, 1);
    if (b.is_const(0)) return bv(0, 1);
    if (b.is_const()) {
        if (Expr x = strip_zero_prefix(a); x.valid()) {
            if (b.value() > width_mask(x.width())) return bv(1, 1);
            return ult(x, bv(b.value(), x.width()));
        }
    }
    if (a.is_const()) {
        if (a.value() == width_mask(a.width())) return bv(0, 1);
        if (Expr x = strip_zero_prefix(b); x.valid()) {
            if (a.value() >= width_mask(x.width())) return bv(0, 1);
            return ult(bv(a.value(), x.width()), x);
        }
    }
    return raw2(Op::Ult, 1, a, b);
}

Expr ule(const Expr& a, const Expr& b) {
    check_same(a, b, "ule");
    if (a.is_const() && b.is_const()) return bv(a.value() <= b.value(), 1);
    if (a.equals(b)) return bv(1, 1);
    if (a.is_const(0)) return bv(1, 1);
    if (b.is_const() && b.value() == width_mask(b.width())) return bv(1, 1);
    if (b.is_const()) {
        if (Expr x = strip_zero_prefix(a); x.valid()) {
            if (b.value() >= width_mask(x.width())) return bv(1, 1);
            return ule(x, bv(b.value(), x.width()));
        }
    }
    if (a.is_const()) {
        if (Expr x = strip_zero_prefix(b); x.valid()) {
            if (a.value() > width_mask(x.width())) return bv(0, 1);
            return ule(bv(a.value(), x.width()), x);
        }
    }
    return raw2(Op::Ule, 1, a, b);
}

Expr slt(const Expr& a, const Expr& b) {
    check_same(a, b, "slt");
    if (a.is_const() && b.is_const()) return bv(sign_extend(a.value(), a.width()) < sign_extend(b.value(), b.width()), 1);
    if (a.equals(b)) return bv(0, 1);
    return raw2(Op::Slt, 1, a, b);
}

Expr extract(unsigned hi, unsigned lo, const Expr& e) {
    if (!e.valid()) throw ExprError("extract: null operand");
    if (hi < lo || hi >= e.width()) throw ExprError("extract: bad range");
    const unsigned w = hi - lo + 1;
    if (lo == 0 && hi == e.width() - 1) return e;
    if (e.is_const()) return bv(e.value() >> lo, w);
    switch (e.op()) {
        case Op::Extract: return extract(hi + e.lo(), lo + e.lo(), e.operand(0));
        case Op::Concat: {
            const unsigned wl = e.operand(1).width();
            if (hi < wl) return extract(hi, lo, e.operand(1));
            if (lo >= wl) return extract(hi - wl, lo - wl, e.operand(0));
            return concat(extract(hi - wl, 0, e.operand(0)), extract(wl - 1, lo, e.operand(1)));
        }
        case Op::Not: return bnot(extract(hi, lo, e.operand(0)));
        case Op::Xor:
        case Op::And:
        case Op::Or:
            if (e.operand(1).is_const())
                return apply(e.op(), extract(hi, lo, e.operand(0)), extract(hi, lo, e.operand(1)));
            break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
            // low bits of a ring operation depend only on low bits of the operands
            if (lo == 0 && (e.operand(0).is_const() || e.operand(1).is_const()))
                return apply(e.op(), extract(hi, 0, e.operand(0)), extract(hi, 0, e.operand(1)));
            break;
        case Op::Neg:
            if (lo == 0) return neg(extract(hi, 0, e.operand(0)));
            break;
        default: break;
    }
    ExprNode n;
    n.op = Op::Extract;
    n.width = static_cast<std::uint8_t>(w);
    n.hi = static_cast<std::uint8_t>(hi);
    n.lo = static_cast<std::uint8_t>(lo);
    n.kids[0] = e;
    return make_node(std::move(n));
}

Expr concat(const Expr& a, const Expr& b) {
    if (!a.valid() || !b.valid()) throw ExprError("concat: null operand");
    const unsigned w = a.width() + b.width();
    if (w > 64) throw ExprError("concat: result wider than 64 bits");
    if (a.is_const() && b.is_const()) return bv((a.value() << b.width()) | b.value(), w);
    if (a.is_const() && b.op() == Op::Concat && b.operand(0).is_const()) {
        const Expr& bc = b.operand(0);
        return concat(bv((a.value() << bc.width()) | bc.value(), a.width() + bc.width()), b.operand(1));
    }
    if (a.op() == Op::Extract && b.op() == Op::Extract && a.lo() == b.hi() + 1 &&
        a.operand(0).equals(b.operand(0)))
        return extract(a.hi(), b.lo(), a.operand(0));
    if (b.op() == Op::Extract && a.op() == Op::Concat && a.operand(1).op() == Op::Extract) {
        const Expr& mid = a.operand(1);
        if (mid.lo() == b.hi() + 1 && mid.operand(0).equals(b.operand(0)))
            return concat(a.operand(0), extract(mid.hi(), b.lo(), b.operand(0)));
    }
    return raw2(Op::Concat, w, a, b);
}

Expr ite(const Expr& c, const Expr& t, const Expr& f) {
    if (c.width() != 1) throw ExprError("ite: condition must be width 1");
    check_same(t, f, "ite");
    if (c.is_const()) return c.value() ? t : f;
    if (t.equals(f)) return t;
    ExprNode n;
    n.op = Op::Ite;
    n.width = static_cast<std::uint8_t>(t.width());
    n.kids[0] = c;
    n.kids[1] = t;
    n.kids[2] = f;
    return make_node(std::move(n));
}

Expr zext(const Expr& e, unsigned width) {
    if (width == e.width()) return e;
    if (width < e.width()) throw ExprError("zext: narrowing");
    return concat(bv(0, width - e.width()), e);
}

Expr low_bits(const Expr& e, unsigned width) {
    if (width == e.width()) return e;
    return extract(width - 1, 0, e);
}

Expr apply(Op op, const Expr& a, const Expr& b) {
    switch (op) {
        case Op::Add: return add(a, b);
        case Op::Sub: return sub(a, b);
        case Op::Mul: return mul(a, b);
        case Op::Xor: return bxor(a, b);
        case Op::And: return band(a, b);
        case Op::Or: return bor(a, b);
        case Op::Shl: return shl(a, b);
        case Op::Shr: return shr(a, b);
        case Op::Eq: return eq(a, b);
        case Op::Ne: return ne(a, b);
        case Op::Ult: return ult(a, b);
        case Op::Ule: return ule(a, b);
        case Op::Slt: return slt(a, b);
        case Op::Concat: return concat(a, b);
        default: throw ExprError(std::string("apply: not binary: ") + to_string(op));
    }
}

Expr simplify(const Expr& e) {
    switch (e.op()) {
        case Op::Const:
        case Op::Var: return e;
        case Op::Neg: return neg(simplify(e.operand(0)));
        case Op::Not: return bnot(simplify(e.operand(0)));
        case Op::Extract: return extract(e.hi(), e.lo(), simplify(e.operand(0)));
        case Op::Ite: return ite(simplify(e.operand(0)), simplify(e.operand(1)), simplify(e.operand(2)));
        default: return apply(e.op(), simplify(e.operand(0)), simplify(e.operand(1)));
    }
}

bool is_symbolic(const Expr& e) { return e.has_vars() && simplify(e).has_vars(); }

std::uint64_t Model::at(const std::string& n) const {
    auto it = values.find(n);
    if (it == values.end()) throw UnboundVariable(n);
    return it->second;
}

std::uint64_t eval_with_model(const Expr& e, const Model& m) {
    const unsigned w = e.width();
    switch (e.op()) {
        case Op::Const: return e.value();
        case Op::Var: return m.at(e.name()) & width_mask(w);
        case Op::Neg: return (0 - eval_with_model(e.operand(0), m)) & width_mask(w);
        case Op::Not: return ~eval_with_model(e.operand(0), m) & width_mask(w);
        case Op::Extract: return (eval_with_model(e.operand(0), m) >> e.lo()) & width_mask(w);
        case Op::Concat:
            return (eval_with_model(e.operand(0), m) << e.operand(1).width()) | eval_with_model(e.operand(1), m);
        case Op::Ite:
            return eval_with_model(e.operand(0), m) ? eval_with_model(e.operand(1), m) : eval_with_model(e.operand(2), m);
        default: {
            const unsigned ow = e.operand(0).width();
            return fold_binary(e.op(), eval_with_model(e.operand(0), m), eval_with_model(e.operand(1), m), ow);
        }
    }
}

void collect_vars(const Expr& e, std::map<std::string, unsigned>& out) {
    if (!e.has_vars()) return;
    if (e.is_var()) {
        auto [it, inserted] = out.emplace(e.name(), e.width());
        if (!inserted && it->second != e.width())
            throw ExprError("variable '" + e.name() + "' used at two widths");
        return;
    }
    for (std::size_t i = 0; i < e.arity(); ++i) collect_vars(e.operand(i), out);
}

std::set<std::string> vars_of(const Expr& e) {
    std::map<std::string, unsigned> m;
    collect_vars(e, m);
    std::set<std::string> out;
    for (auto& [k, _] : m) out.insert(k);
    return out;
}

bool contains_var(const Expr& e, const std::set<std::string>& names) {
    if (!e.has_vars() || names.empty()) return false;
    if (e.is_var()) return names.count(e.name()) != 0;
    for (std::size_t i = 0; i < e.arity(); ++i)
        if (contains_var(e.operand(i), names)) return true;
    return false;
}

std::size_t node_count(const Expr& e) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < e.arity(); ++i) n += node_count(e.operand(i));
    return n;
}

}  // namespace dyncfg
