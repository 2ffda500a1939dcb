#include "dyncfg/asm.hpp"

#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "dyncfg/isa.hpp"
#include "dyncfg/state.hpp"

namespace dyncfg {

const char* to_string(AsmErrc c) {
    switch (c) {
        case AsmErrc::UndefinedLabel: return "UndefinedLabel";
        case AsmErrc::DuplicateLabel: return "DuplicateLabel";
        case AsmErrc::BadOperand: return "BadOperand";
        case AsmErrc::BadDirective: return "BadDirective";
    }
    return "?";
}

namespace {

struct Item {
    std::size_t line = 0;
    std::string head;  // mnemonic or directive
    std::vector<std::string> args;
    std::string text;  // decoded string literal for .str/.wstr
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct Seg {
    std::uint32_t flags = kSegRead | kSegExec;
    std::vector<Item> items;
    std::size_t size = 0;
};

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$'; }

bool is_ident(const std::string& s) {
    if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
    for (char c : s)
        if (!ident_char(c)) return false;
    return true;
}

// Strips a trailing comment that is not inside a quoted literal.
std::string strip_comment(std::string_view line) {
    bool quoted = false, chr = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '\\' && (quoted || chr)) {
            ++i;
            continue;
        }
        if (c == '"' && !chr) quoted = !quoted;
        else if (c == '\'' && !quoted) chr = !chr;
        else if ((c == ';' || c == '#') && !quoted && !chr) return std::string(line.substr(0, i));
    }
    return std::string(line);
}

std::vector<std::string> split_args(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    bool chr = false;
    for (char c : s) {
        if (c == '\'') chr = !chr;
        if (!chr && c == '[') ++depth;
        if (!chr && c == ']') --depth;
        if (c == ',' && depth == 0 && !chr) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

std::string unquote(const std::string& s, std::size_t line) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') throw AsmError(AsmErrc::BadOperand, line, "expected string literal");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (c != '\\') {
            out += c;
            continue;
        }
        if (++i + 1 >= s.size()) throw AsmError(AsmErrc::BadOperand, line, "dangling escape");
        switch (s[i]) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case '0': out += '\0'; break;
            case '\\': out += '\\'; break;
            case '"': out += '"'; break;
            default: throw AsmError(AsmErrc::BadOperand, line, std::string("unknown escape \\") + s[i]);
        }
    }
    return out;
}

std::optional<std::int64_t> parse_number(const std::string& t) {
    std::string s = t;
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s = s.substr(2);
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return static_cast<std::int64_t>(v);
}

class Assembler {
public:
    BinaryImage run(std::string_view src);

private:
    void parse(std::string_view src);
    void directive(Item& it);
    void place(Item it);
    std::int64_t eval(const std::string& e, std::size_t line) const;
    unsigned reg(const std::string& s, std::size_t line) const;
    std::pair<unsigned, std::int32_t> mem(const std::string& s, std::size_t line) const;
    std::int32_t imm32(std::int64_t v, std::size_t line) const;
    void emit(const Item& it, std::uint64_t addr, std::vector<std::uint8_t>& out) const;

    ImageType type_ = ImageType::Executable;
    std::string entry_;
    std::size_t entry_line_ = 0;
    std::vector<std::string> imports_;
    std::vector<std::tuple<std::string, SymbolKind, std::size_t>> exports_;
    std::vector<Seg> segs_;
    std::map<std::string, std::pair<std::size_t, std::size_t>> labels_;  // name -> (segment, offset)
    std::map<std::string, std::size_t> label_lines_;
    std::map<std::string, std::uint64_t> addr_;
};

void Assembler::place(Item it) {
    if (segs_.empty()) segs_.push_back({});
    Seg& seg = segs_.back();
    it.offset = seg.size;
    seg.size += it.size;
    seg.items.push_back(std::move(it));
}

void Assembler::directive(Item& it) {
    const auto& h = it.head;
    const auto& a = it.args;
    auto need = [&](std::size_t n) {
        if (a.size() < n) throw AsmError(AsmErrc::BadDirective, it.line, h + " expects " + std::to_string(n) + " operand(s)");
    };
    if (h == ".type") {
        need(1);
        if (a[0] == "exe") type_ = ImageType::Executable;
        else if (a[0] == "lib") type_ = ImageType::Library;
        else throw AsmError(AsmErrc::BadDirective, it.line, "unknown image type " + a[0]);
    } else if (h == ".entry") {
        need(1);
        entry_ = a[0];
        entry_line_ = it.line;
    } else if (h == ".import") {
        need(1);
        for (const auto& n : imports_)
            if (n == a[0]) throw AsmError(AsmErrc::BadDirective, it.line, "duplicate import " + a[0]);
        imports_.push_back(a[0]);
    } else if (h == ".export") {
        need(1);
        SymbolKind k = SymbolKind::Function;
        if (a.size() > 1 && a[1] == "obj") k = SymbolKind::Object;
        else if (a.size() > 1 && a[1] != "func") throw AsmError(AsmErrc::BadDirective, it.line, "bad symbol kind " + a[1]);
        exports_.emplace_back(a[0], k, it.line);
    } else if (h == ".seg") {
        need(1);
        std::uint32_t f = 0;
        for (char c : a[0]) {
            if (c == 'r') f |= kSegRead;
            else if (c == 'w') f |= kSegWrite;
            else if (c == 'x') f |= kSegExec;
            else throw AsmError(AsmErrc::BadDirective, it.line, "bad segment flags " + a[0]);
        }
        if (!segs_.empty() && segs_.back().items.empty() && segs_.back().size == 0) segs_.back().flags = f;
        else segs_.push_back({f, {}, 0});
    } else if (h == ".str" || h == ".wstr") {
        need(1);
        it.text = unquote(a[0], it.line);
        it.size = h == ".str" ? it.text.size() + 1 : 2 * (it.text.size() + 1);
        place(it);
    } else if (h == ".bytes") {
        it.size = a.size();
        place(it);
    } else if (h == ".u64") {
        it.size = 8 * a.size();
        place(it);
    } else if (h == ".zero") {
        need(1);
        it.size = static_cast<std::size_t>(eval(a[0], it.line));
        place(it);
    } else if (h == ".align") {
        need(1);
        const auto n = static_cast<std::size_t>(eval(a[0], it.line));
        if (n == 0 || (n & (n - 1))) throw AsmError(AsmErrc::BadDirective, it.line, "alignment must be a power of two");
        const std::size_t at = segs_.empty() ? 0 : segs_.back().size;
        it.size = (n - at % n) % n;
        place(it);
    } else {
        throw AsmError(AsmErrc::BadDirective, it.line, "unknown directive " + h);
    }
}

void Assembler::parse(std::string_view src) {
    std::istringstream in{std::string(src)};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(strip_comment(raw));
        // leading labels
        while (true) {
            auto colon = s.find(':');
            if (colon == std::string::npos) break;
            std::string name = trim(s.substr(0, colon));
            if (!is_ident(name) || name[0] == '.') break;
            if (labels_.count(name)) throw AsmError(AsmErrc::DuplicateLabel, line, name);
            if (segs_.empty()) segs_.push_back({});
            labels_[name] = {segs_.size() - 1, segs_.back().size};
            label_lines_[name] = line;
            s = trim(s.substr(colon + 1));
        }
        if (s.empty()) continue;
        Item it;
        it.line = line;
        auto sp = s.find_first_of(" \t");
        it.head = s.substr(0, sp);
        if (sp != std::string::npos) {
            std::string rest = trim(s.substr(sp));
            if (it.head == ".str" || it.head == ".wstr") it.args = {rest};
            else if (it.head == ".bytes" || it.head == ".export") {
                std::istringstream bs(rest);
                std::string tok;
                while (bs >> tok) {
                    if (tok.back() == ',') tok.pop_back();
                    if (!tok.empty()) it.args.push_back(tok);
                }
            } else {
                it.args = split_args(rest);
            }
        }
        if (it.head[0] == '.') {
            directive(it);
            continue;
        }
        for (char& c : it.head) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (!opcode_from_mnemonic(it.head)) throw AsmError(AsmErrc::BadOperand, line, "unknown mnemonic " + it.head);
        it.size = kInsnSize;
        place(it);
    }
}

std::int64_t Assembler::eval(const std::string& e, std::size_t line) const {
    std::string s;
    for (char c : e)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    if (s.empty()) throw AsmError(AsmErrc::BadOperand, line, "empty expression");
    std::int64_t total = 0;
    std::size_t i = 0;
    int sign = 1;
    if (s[0] == '-' || s[0] == '+') {
        sign = s[0] == '-' ? -1 : 1;
        ++i;
    }
    while (i < s.size()) {
        std::size_t j = i;
        std::int64_t v = 0;
        if (s[i] == '\'') {
            if (i + 2 < s.size() && s[i + 1] == '\\' && i + 3 < s.size() && s[i + 3] == '\'') {
                const char c = s[i + 2];
                v = c == 'n' ? '\n' : c == '0' ? 0 : c == 't' ? '\t' : c;
                j = i + 4;
            } else if (i + 2 < s.size() && s[i + 2] == '\'') {
                v = static_cast<unsigned char>(s[i + 1]);
                j = i + 3;
            } else {
                throw AsmError(AsmErrc::BadOperand, line, "bad character literal in " + e);
            }
        } else {
            while (j < s.size() && s[j] != '+' && s[j] != '-') ++j;
            const std::string tok = s.substr(i, j - i);
            if (auto n = parse_number(tok)) v = *n;
            else if (is_ident(tok)) {
                auto it = addr_.find(tok);
                if (it == addr_.end()) throw AsmError(AsmErrc::UndefinedLabel, line, tok);
                v = static_cast<std::int64_t>(it->second);
            } else {
                throw AsmError(AsmErrc::BadOperand, line, "bad term '" + tok + "'");
            }
        }
        total += sign * v;
        if (j >= s.size()) break;
        if (s[j] != '+' && s[j] != '-') throw AsmError(AsmErrc::BadOperand, line, "bad expression " + e);
        sign = s[j] == '-' ? -1 : 1;
        i = j + 1;
        if (i >= s.size()) throw AsmError(AsmErrc::BadOperand, line, "trailing operator in " + e);
    }
    return total;
}

unsigned Assembler::reg(const std::string& s, std::size_t line) const {
    if (s == "sp") return kSp;
    if (s.size() >= 2 && s[0] == 'r') {
        if (auto n = parse_number(s.substr(1)); n && *n >= 0 && *n < static_cast<std::int64_t>(kNumRegs))
            return static_cast<unsigned>(*n);
    }
    throw AsmError(AsmErrc::BadOperand, line, "expected register, got '" + s + "'");
}

std::pair<unsigned, std::int32_t> Assembler::mem(const std::string& s, std::size_t line) const {
    if (s.size() < 3 || s.front() != '[' || s.back() != ']')
        throw AsmError(AsmErrc::BadOperand, line, "expected memory operand, got '" + s + "'");
    std::string inner;
    for (char c : s.substr(1, s.size() - 2))
        if (!std::isspace(static_cast<unsigned char>(c))) inner += c;
    auto p = inner.find_first_of("+-");
    if (p == std::string::npos) return {reg(inner, line), 0};
    return {reg(inner.substr(0, p), line), imm32(eval(inner.substr(p), line), line)};
}

std::int32_t Assembler::imm32(std::int64_t v, std::size_t line) const {
    if (v < INT32_MIN || v > static_cast<std::int64_t>(UINT32_MAX))
        throw AsmError(AsmErrc::BadOperand, line, "immediate out of range: " + std::to_string(v));
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(v));
}

void Assembler::emit(const Item& it, std::uint64_t addr, std::vector<std::uint8_t>& out) const {
    const auto& a = it.args;
    const std::size_t line = it.line;
    auto need = [&](std::size_t n) {
        if (a.size() != n)
            throw AsmError(AsmErrc::BadOperand, line, it.head + " expects " + std::to_string(n) + " operand(s)");
    };
    if (it.head == ".str" || it.head == ".wstr") {
        if (it.head == ".str") {
            out.insert(out.end(), it.text.begin(), it.text.end());
            out.push_back(0);
        } else {
            for (char c : it.text) {
                out.push_back(static_cast<std::uint8_t>(c));
                out.push_back(0);
            }
            out.push_back(0);
            out.push_back(0);
        }
        return;
    }
    if (it.head == ".bytes") {
        for (const auto& b : a) {
            const std::int64_t v = eval(b, line);
            if (v < -128 || v > 255) throw AsmError(AsmErrc::BadOperand, line, "byte out of range: " + b);
            out.push_back(static_cast<std::uint8_t>(v));
        }
        return;
    }
    if (it.head == ".u64") {
        for (const auto& e : a) {
            const auto v = static_cast<std::uint64_t>(eval(e, line));
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
        return;
    }
    if (it.head == ".zero" || it.head == ".align") {
        out.insert(out.end(), it.size, 0);
        return;
    }

    Instruction in;
    in.op = *opcode_from_mnemonic(it.head);
    auto rel = [&](const std::string& e) {
        const std::int64_t target = eval(e, line);
        return imm32(target - static_cast<std::int64_t>(addr) - static_cast<std::int64_t>(kInsnSize), line);
    };
    switch (in.op) {
        case Opcode::Halt:
        case Opcode::Ret: need(0); break;
        case Opcode::Movi:
            need(2);
            in.rd = static_cast<std::uint8_t>(reg(a[0], line));
            in.imm = imm32(eval(a[1], line), line);
            break;
        case Opcode::Mov:
            need(2);
            in.rd = static_cast<std::uint8_t>(reg(a[0], line));
            in.rs1 = static_cast<std::uint8_t>(reg(a[1], line));
            break;
        case Opcode::Jmp:
        case Opcode::Call:
            need(1);
            in.imm = rel(a[0]);
            break;
        case Opcode::Jmpr:
        case Opcode::Callr:
        case Opcode::Push:
            need(1);
            in.rs1 = static_cast<std::uint8_t>(reg(a[0], line));
            break;
        case Opcode::Pop:
            need(1);
            in.rd = static_cast<std::uint8_t>(reg(a[0], line));
            break;
        case Opcode::Beq:
        case Opcode::Bne:
        case Opcode::Bltu:
        case Opcode::Blts:
            need(3);
            in.rs1 = static_cast<std::uint8_t>(reg(a[0], line));
            in.rs2 = static_cast<std::uint8_t>(reg(a[1], line));
            in.imm = rel(a[2]);
            break;
        case Opcode::Callimp: {
            need(1);
            std::optional<std::size_t> ord;
            for (std::size_t i = 0; i < imports_.size(); ++i)
                if (imports_[i] == a[0]) ord = i;
            if (!ord) {
                auto n = parse_number(a[0]);
                if (!n || *n < 0 || static_cast<std::size_t>(*n) >= imports_.size())
                    throw AsmError(AsmErrc::UndefinedLabel, line, "import " + a[0]);
                ord = static_cast<std::size_t>(*n);
            }
            in.imm = static_cast<std::int32_t>(*ord);
            break;
        }
        case Opcode::Syscall:
            need(1);
            in.imm = imm32(eval(a[0], line), line);
            break;
        default:
            if (is_load(in.op)) {
                need(2);
                in.rd = static_cast<std::uint8_t>(reg(a[0], line));
                auto [r, off] = mem(a[1], line);
                in.rs1 = static_cast<std::uint8_t>(r);
                in.imm = off;
            } else if (is_store(in.op)) {
                need(2);
                auto [r, off] = mem(a[0], line);
                in.rs1 = static_cast<std::uint8_t>(r);
                in.imm = off;
                in.rs2 = static_cast<std::uint8_t>(reg(a[1], line));
            } else {
                need(3);
                in.rd = static_cast<std::uint8_t>(reg(a[0], line));
                in.rs1 = static_cast<std::uint8_t>(reg(a[1], line));
                in.rs2 = static_cast<std::uint8_t>(reg(a[2], line));
            }
    }
    auto bytes = encode(in);
    out.insert(out.end(), bytes.begin(), bytes.end());
}

BinaryImage Assembler::run(std::string_view src) {
    parse(src);
    if (segs_.empty()) segs_.push_back({});

    ImageBuilder b(type_);
    for (const auto& n : imports_) b.add_import(n);
    for (const auto& [name, kind, line] : exports_) {
        if (!labels_.count(name)) throw AsmError(AsmErrc::UndefinedLabel, line, name);
        b.intern(name);
    }
    std::vector<std::size_t> sizes;
    for (const auto& s : segs_) sizes.push_back(s.size);
    const auto vaddrs = b.plan_segments(sizes, exports_.size());
    const std::uint64_t base = type_ == ImageType::Executable ? kMainBase : 0;
    for (const auto& [name, loc] : labels_) addr_[name] = base + vaddrs[loc.first] + loc.second;

    for (const auto& [name, kind, line] : exports_) b.add_symbol(name, kind, addr_[name] - base);
    if (!entry_.empty()) {
        auto it = addr_.find(entry_);
        if (it == addr_.end()) throw AsmError(AsmErrc::UndefinedLabel, entry_line_, entry_);
        b.set_entry(it->second - base);
    } else if (type_ == ImageType::Executable) {
        throw AsmError(AsmErrc::BadDirective, 0, "executable without .entry");
    }
    for (std::size_t i = 0; i < segs_.size(); ++i) {
        std::vector<std::uint8_t> data;
        for (const auto& it : segs_[i].items) emit(it, base + vaddrs[i] + it.offset, data);
        b.add_segment(segs_[i].flags, std::move(data));
    }
    return b.finish();
}

}  // namespace

BinaryImage assemble(std::string_view src) { return Assembler{}.run(src); }

}  // namespace dyncfg
