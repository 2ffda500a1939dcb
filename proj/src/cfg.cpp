#include "dyncfg/cfg.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "dyncfg/state.hpp"

namespace dyncfg {

const char* to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::Fallthrough: return "fallthrough";
        case EdgeKind::Branch: return "branch";
        case EdgeKind::Call: return "call";
        case EdgeKind::Return: return "return";
        case EdgeKind::ResolvedIndirect: return "resolved-indirect";
        case EdgeKind::ImportStub: return "import-stub";
        case EdgeKind::Indirect: return "indirect";
    }
    return "?";
}

std::vector<CfgImage> layout_images(std::vector<CfgImage> images) {
    std::uint64_t next = kMainBase;
    for (auto& img : images) {
        img.base = next;
        const std::uint64_t span = std::max<std::uint64_t>(img.image->span(), 1);
        next += (span + kGranule - 1) / kGranule * kGranule;
    }
    return images;
}

std::optional<Instruction> fetch_instruction(const CfgImage& img, std::uint64_t addr) {
    if (addr < img.base || addr >= img.end()) return std::nullopt;
    const std::uint64_t rel = addr - img.base;
    const Segment* seg = img.image->segment_containing(rel);
    if (!seg || !seg->executable()) return std::nullopt;
    const std::uint64_t off = rel - seg->vaddr;
    if (off + kInsnSize > seg->data.size()) return std::nullopt;
    return decode(std::span<const std::uint8_t>(seg->data).subspan(off, kInsnSize));
}

const BasicBlock* Cfg::block_containing(std::uint64_t addr) const {
    auto it = blocks.upper_bound(addr);
    if (it == blocks.begin()) return nullptr;
    --it;
    const BasicBlock& b = it->second;
    if (b.stub) return addr == b.start ? &b : nullptr;
    return addr < b.end() ? &b : nullptr;
}

std::size_t Cfg::image_of(std::uint64_t addr) const {
    for (std::size_t i = 0; i < images.size(); ++i)
        if (addr >= images[i].base && addr < images[i].end()) return i;
    return static_cast<std::size_t>(-1);
}

namespace {

struct Recovery {
    const std::vector<CfgImage>& images;
    const RecoverOptions& opts;
    Cfg cfg;

    std::set<std::uint64_t> leaders;
    std::set<std::uint64_t> code;  // decoded instruction addresses
    std::map<std::uint64_t, Instruction> insns;
    std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> stubs;  // address -> (image, ordinal)
    std::deque<std::uint64_t> work;

    std::size_t image_of(std::uint64_t a) const { return cfg.image_of(a); }

    bool is_code(std::uint64_t a) const {
        const std::size_t i = image_of(a);
        return i < images.size() && fetch_instruction(images[i], a).has_value();
    }

    void enqueue(std::uint64_t a, bool function) {
        if (in_hook_window(a)) return;
        if (!is_code(a)) {
            std::ostringstream os;
            os << "target 0x" << std::hex << a << " is not code";
            cfg.warnings.push_back(os.str());
            return;
        }
        if (function) cfg.functions.insert(a);
        leaders.insert(a);
        if (!code.count(a)) work.push_back(a);
    }

    std::vector<std::pair<std::uint64_t, EdgeKind>> observed(std::uint64_t site) const {
        auto it = opts.indirect.find(site);
        if (it == opts.indirect.end()) return {};
        return {it->second.begin(), it->second.end()};
    }

    std::uint64_t stub_for(std::size_t img, std::size_t ordinal) {
        const std::uint64_t a = hook_address(img, ordinal);
        stubs.emplace(a, std::make_pair(img, ordinal));
        cfg.functions.insert(a);
        return a;
    }

    void discover() {
        while (!work.empty()) {
            std::uint64_t a = work.front();
            work.pop_front();
            const std::size_t ii = image_of(a);
            while (!code.count(a)) {
                auto in = fetch_instruction(images[ii], a);
                if (!in) break;
                code.insert(a);
                insns[a] = *in;
                const std::uint64_t next = a + kInsnSize;
                if (!is_control(*in)) {
                    a = next;
                    continue;
                }
                switch (in->op) {
                    case Opcode::Jmp: enqueue(rel_target(a, in->imm), false); break;
                    case Opcode::Beq:
                    case Opcode::Bne:
                    case Opcode::Bltu:
                    case Opcode::Blts:
                        enqueue(rel_target(a, in->imm), false);
                        enqueue(next, false);
                        break;
                    case Opcode::Call:
                        enqueue(rel_target(a, in->imm), true);
                        enqueue(next, false);
                        break;
                    case Opcode::Callimp:
                        if (in->imm >= 0 && static_cast<std::size_t>(in->imm) < images[ii].image->imports.size())
                            stub_for(ii, static_cast<std::size_t>(in->imm));
                        enqueue(next, false);
                        break;
                    case Opcode::Callr: {
                        auto targets = observed(a);
                        for (auto& [t, _] : targets) enqueue(t, true);
                        if (!targets.empty()) enqueue(next, false);
                        break;
                    }
                    case Opcode::Jmpr:
                    case Opcode::Ret:
                        for (auto& [t, _] : observed(a)) enqueue(t, false);
                        break;
                    default: break;
                }
                break;
            }
        }
    }

    void form_blocks() {
        for (std::uint64_t l : leaders) {
            if (!code.count(l)) continue;
            BasicBlock b;
            b.start = l;
            b.image = image_of(l);
            std::uint64_t a = l;
            while (code.count(a)) {
                const Instruction& in = insns.at(a);
                ++b.count;
                b.terminator = in.op;
                a += kInsnSize;
                if (is_control(in)) {
                    b.ends_in_control = true;
                    break;
                }
                if (leaders.count(a)) break;
            }
            if (!b.ends_in_control && !code.count(a) && !leaders.count(a)) {
                std::ostringstream os;
                os << "block 0x" << std::hex << l << " ends at undecodable 0x" << a;
                cfg.warnings.push_back(os.str());
            }
            cfg.blocks.emplace(l, b);
        }
        for (auto& [a, io] : stubs) {
            BasicBlock b;
            b.start = a;
            b.image = io.first;
            b.stub = true;
            b.label = images[io.first].image->import_name(io.second);
            cfg.blocks.emplace(a, b);
        }
    }

    void edge(std::uint64_t src, std::uint64_t dst, EdgeKind k) {
        if (cfg.blocks.count(src) && cfg.blocks.count(dst)) cfg.edges.insert({src, dst, k});
    }

    void connect() {
        // callee entry -> continuations of its call sites
        std::map<std::uint64_t, std::set<std::uint64_t>> continuations;
        std::map<std::uint64_t, std::vector<std::uint64_t>> intra;  // successors within a function
        for (auto& [start, b] : cfg.blocks) {
            if (b.stub) continue;
            const std::uint64_t site = b.end() - kInsnSize;
            const Instruction& in = insns.at(site);
            const std::uint64_t next = b.end();
            auto local = [&](std::uint64_t d, EdgeKind k) {
                edge(start, d, k);
                intra[start].push_back(d);
            };
            if (!b.ends_in_control) {
                if (cfg.blocks.count(next)) local(next, EdgeKind::Fallthrough);
                continue;
            }
            switch (in.op) {
                case Opcode::Jmp: local(rel_target(site, in.imm), EdgeKind::Branch); break;
                case Opcode::Beq:
                case Opcode::Bne:
                case Opcode::Bltu:
                case Opcode::Blts:
                    local(rel_target(site, in.imm), EdgeKind::Branch);
                    local(next, EdgeKind::Fallthrough);
                    break;
                case Opcode::Call: {
                    const std::uint64_t t = rel_target(site, in.imm);
                    edge(start, t, EdgeKind::Call);
                    continuations[t].insert(next);
                    local(next, EdgeKind::Fallthrough);
                    break;
                }
                case Opcode::Callimp: {
                    if (in.imm < 0 || static_cast<std::size_t>(in.imm) >= images[b.image].image->imports.size()) break;
                    edge(start, hook_address(b.image, static_cast<std::size_t>(in.imm)), EdgeKind::ImportStub);
                    if (opts.imports_resolved) {
                        const std::string name = images[b.image].image->import_name(static_cast<std::size_t>(in.imm));
                        for (const auto& other : images) {
                            const SymbolEntry* sym = other.image->find_symbol(name, SymbolKind::Function);
                            if (sym && other.image != images[b.image].image) edge(start, other.base + sym->value, EdgeKind::Call);
                        }
                    }
                    local(next, EdgeKind::Fallthrough);
                    break;
                }
                case Opcode::Callr: {
                    auto targets = observed(site);
                    for (auto& [t, k] : targets) {
                        edge(start, t, k);
                        continuations[t].insert(next);
                    }
                    if (!targets.empty()) local(next, EdgeKind::Fallthrough);
                    break;
                }
                case Opcode::Jmpr:
                    for (auto& [t, k] : observed(site)) local(t, k);
                    break;
                case Opcode::Ret:
                    for (auto& [t, k] : observed(site)) edge(start, t, k);
                    break;
                default: break;
            }
        }

        // Return edges: each RET reachable from a function entry returns to that function's continuations.
        for (const auto& [fn, conts] : continuations) {
            if (!cfg.blocks.count(fn)) continue;
            std::set<std::uint64_t> seen{fn};
            std::deque<std::uint64_t> q{fn};
            while (!q.empty()) {
                const std::uint64_t b = q.front();
                q.pop_front();
                const BasicBlock& blk = cfg.blocks.at(b);
                if (blk.ends_in_control && blk.terminator == Opcode::Ret)
                    for (std::uint64_t c : conts) edge(b, c, EdgeKind::Return);
                for (std::uint64_t d : intra[b])
                    if (seen.insert(d).second && cfg.blocks.count(d)) q.push_back(d);
            }
        }

        std::erase_if(cfg.functions, [&](std::uint64_t f) { return !cfg.blocks.count(f); });
    }
};

}  // namespace

Cfg recover_static(const std::vector<CfgImage>& images, const RecoverOptions& opts) {
    Recovery r{images, opts, {}, {}, {}, {}, {}, {}};
    r.cfg.images = images;
    for (const auto& img : images) {
        if (img.image->type == ImageType::Executable || img.image->entry != 0) r.enqueue(img.base + img.image->entry, true);
        for (const auto& sym : img.image->symbols)
            if (sym.kind == SymbolKind::Function) r.enqueue(img.base + sym.value, true);
    }
    for (std::uint64_t a : opts.extra_roots) r.enqueue(a, true);
    r.discover();
    r.form_blocks();
    r.connect();
    return std::move(r.cfg);
}

Cfg build_module_cfg(const std::vector<CfgImage>& images, const std::set<DynamicEdge>& dynamic_edges) {
    RecoverOptions opts;
    opts.imports_resolved = true;
    std::map<std::string, std::uint64_t> base;
    for (const auto& img : images) base.emplace(img.key, img.base);
    for (const auto& e : dynamic_edges) {
        auto s = base.find(e.src_key);
        auto d = base.find(e.dst_key);
        if (s == base.end() || d == base.end()) continue;
        opts.indirect[s->second + e.src_off].insert({d->second + e.dst_off, e.kind});
    }
    return recover_static(images, opts);
}

CfgMetrics metrics(const Cfg& c) {
    CfgMetrics m;
    for (const auto& [_, b] : c.blocks)
        if (!b.stub) ++m.nodes;
    m.edges = c.edges.size();
    m.functions = c.functions.size();
    m.loaded_objects = c.images.size();
    return m;
}

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch;
    }
    return out + "\"";
}

const char* edge_style(EdgeKind k) {
    switch (k) {
        case EdgeKind::Fallthrough: return "solid";
        case EdgeKind::Branch: return "bold";
        case EdgeKind::Call: return "solid";
        case EdgeKind::Return: return "dotted";
        case EdgeKind::ResolvedIndirect: return "dashed";
        case EdgeKind::ImportStub: return "dashed";
        case EdgeKind::Indirect: return "dashed";
    }
    return "solid";
}

}  // namespace

std::string to_dot(const Cfg& c) {
    std::ostringstream os;
    os << "digraph cfg {\n";
    if (!c.blocks.empty()) os << "  node [shape=box];\n";
    for (const auto& [a, b] : c.blocks) {
        std::string label = hex(a) + " " + (b.image < c.images.size() ? c.images[b.image].name : std::string("?"));
        if (b.stub) label += " " + b.label;
        os << "  " << quote(hex(a)) << " [label=" << quote(label);
        if (b.stub) os << ", shape=ellipse";
        os << "];\n";
    }
    for (const auto& e : c.edges)
        os << "  " << quote(hex(e.src)) << " -> " << quote(hex(e.dst)) << " [label=" << quote(to_string(e.kind))
           << ", style=" << edge_style(e.kind) << "];\n";
    os << "}\n";
    return os.str();
}

}  // namespace dyncfg
