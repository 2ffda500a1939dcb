#include "dyncfg/tracker.hpp"

#include <algorithm>

namespace dyncfg {

const char* to_string(SmcKind k) {
    switch (k) {
        case SmcKind::JmpCallHook: return "JmpCallHook";
        case SmcKind::PushRetRedirect: return "PushRetRedirect";
        case SmcKind::GenericSmc: return "GenericSmc";
    }
    return "?";
}

std::vector<std::uint64_t> resolve_symbolic_target(SimState& s, const Expr& t) {
    return resolve_symbolic_target(s, t, exec_regions(s));
}

std::vector<std::uint64_t> resolve_symbolic_target(SimState& s, const Expr& t, const std::vector<ExecRegion>& regions) {
    std::set<std::uint64_t> solutions;
    const unsigned w = t.width();
    for (const auto& r : regions) {
        if (r.start > width_mask(w)) continue;
        Expr c = land(uge(t, bv(r.start, w)), ule(t, bv(std::min(r.end, width_mask(w)), w)));
        Expr extra[] = {c};
        SatResult res = s.check(extra);
        if (!res.sat()) continue;
        Model m = res.model;
        std::map<std::string, unsigned> vars;
        collect_vars(t, vars);
        for (auto& [n, _] : vars) m.values.emplace(n, 0);
        const std::uint64_t a = eval_with_model(t, m);
        if (a < r.start || a > r.end) {
            s.log(EventKind::Warning, {{"what", "resolution-outside-region"}, {"addr", a}});
            continue;
        }
        solutions.insert(a);
    }
    return {solutions.begin(), solutions.end()};
}

nlohmann::json TransferEvent::to_json() const {
    return {{"site", site}, {"kind", kind}, {"target", target}, {"resolved", resolved}, {"symbol", matched_symbol}};
}

nlohmann::json DispatcherReport::to_json() const {
    return {{"block", block}, {"image", image}, {"offset", offset}, {"successors", successors}, {"variable", variable}};
}

nlohmann::json SmcReport::to_json() const {
    return {{"site", site}, {"target", target}, {"kind", to_string(kind)}, {"value", value}, {"rel", rel},
            {"old", old_bytes}, {"new", new_bytes}};
}

namespace {

std::pair<std::string, std::uint64_t> locate(const SimState& s, std::uint64_t addr) {
    if (const LoadedImage* img = s.image_containing(addr)) return {img->key, addr - img->base};
    return {"", addr};
}

}  // namespace

void Tracker::attach(ExplorationManager& m) {
    m.register_breakpoint({BreakpointKind::Call, [this](SimState& s, const TransferInfo& i) { on_call(s, i); }});
    m.register_breakpoint({BreakpointKind::Exit, [this](SimState& s, const TransferInfo& i) { on_exit(s, i); }});
    m.register_breakpoint({BreakpointKind::Return, [this](SimState& s, const TransferInfo& i) { on_return(s, i); }});
    m.register_breakpoint({BreakpointKind::ExecWrite, [this](SimState& s, const TransferInfo& i) {
                               classify_exec_write(s, i.site, i.write_addr, i.old_bytes, i.new_bytes);
                           }});
}

void Tracker::add_edge(const SimState& s, std::uint64_t site, std::uint64_t target, EdgeKind kind,
                       const std::string& sym) {
    auto [sk, so] = locate(s, site);
    auto [dk, dof] = locate(s, target);
    if (sk.empty() || dk.empty()) return;
    edges_.insert({sk, so, dk, dof, kind, sym});
}

void Tracker::on_call(SimState& s, const TransferInfo& info) {
    if (!info.indirect) return;
    TransferEvent ev{info.site, "call", info.target.to_string(), info.resolved, ""};
    for (std::uint64_t a : info.resolved) {
        indirect_[info.site].insert(a);
        if (const SymbolBinding* b = s.store.symbol_at(a)) {
            s.store.note_call_site(a, info.site);
            ev.matched_symbol = b->symbol;
            add_edge(s, info.site, a, EdgeKind::ResolvedIndirect, b->symbol);
        } else if (s.image_containing(a)) {
            add_edge(s, info.site, a, EdgeKind::Indirect, "");
        }
    }
    s.log(EventKind::Transfer, ev.to_json());
    transfers_.push_back(std::move(ev));
}

void Tracker::on_exit(SimState& s, const TransferInfo& info) {
    auto site_loc = locate(s, info.site);
    for (std::uint64_t a : info.resolved) {
        jump_targets_[info.site].insert(a);
        site_targets_[site_loc].insert(locate(s, a));
    }
    if (!info.indirect) return;
    TransferEvent ev{info.site, "jump", info.target.to_string(), info.resolved, ""};
    for (std::uint64_t a : info.resolved) {
        indirect_[info.site].insert(a);
        if (const SymbolBinding* b = s.store.symbol_at(a)) {
            ev.matched_symbol = b->symbol;
            add_edge(s, info.site, a, EdgeKind::ResolvedIndirect, b->symbol);
        } else {
            add_edge(s, info.site, a, EdgeKind::Indirect, "");
        }
    }
    s.log(EventKind::Transfer, ev.to_json());
    transfers_.push_back(std::move(ev));
}

void Tracker::on_return(SimState& s, const TransferInfo& info) {
    for (std::uint64_t a : info.resolved) {
        const LoadedImage* img = s.image_containing(a);
        if (!img || img->mechanism == "main" || a == info.continuation) continue;
        rops_.insert({info.site, a, img->name});
        add_edge(s, info.site, a, EdgeKind::Return, "");
        TransferEvent ev{info.site, "return", info.target.to_string(), {a}, ""};
        if (const SymbolBinding* b = s.store.symbol_at(a)) ev.matched_symbol = b->symbol;
        nlohmann::json j = ev.to_json();
        j["rop_redirect"] = img->name;
        s.log(EventKind::Transfer, j);
        transfers_.push_back(std::move(ev));
    }
}

SmcReport Tracker::classify_exec_write(SimState& s, std::uint64_t site, std::uint64_t addr,
                                       const std::vector<std::uint8_t>& old_bytes,
                                       const std::vector<std::uint8_t>& new_bytes) {
    SmcReport rep;
    rep.site = site;
    rep.target = addr;
    rep.old_bytes = old_bytes;
    rep.new_bytes = new_bytes;
    const std::uint64_t lo = addr & ~std::uint64_t{kInsnSize - 1};
    const std::size_t chunks = new_bytes.size() / kInsnSize;
    auto chunk = [&](std::size_t j) { return std::span<const std::uint8_t>(new_bytes).subspan(j * kInsnSize, kInsnSize); };
    bool done = false;
    for (std::size_t j = 0; j < chunks && !done; ++j) {
        auto in = decode(chunk(j));
        if (in && (in->op == Opcode::Jmp || in->op == Opcode::Call)) {
            rep.kind = SmcKind::JmpCallHook;
            rep.rel = in->imm;
            rep.value = rel_target(lo + j * kInsnSize, in->imm);
            done = true;
        }
    }
    for (std::size_t j = 0; j < chunks && !done; ++j) {
        auto in = decode(chunk(j));
        if (!in || in->op != Opcode::Push) continue;
        const std::uint64_t next_addr = lo + (j + 1) * kInsnSize;
        std::vector<std::uint8_t> next_bytes = j + 1 < chunks ? std::vector<std::uint8_t>(chunk(j + 1).begin(), chunk(j + 1).end())
                                                              : s.peek_bytes(next_addr, kInsnSize);
        auto nx = decode(next_bytes);
        if (nx && nx->op == Opcode::Ret) {
            rep.kind = SmcKind::PushRetRedirect;
            rep.value = s.eval(s.reg(in->rs1));
            done = true;
        }
    }
    smc_.insert(rep);
    s.log(EventKind::Smc, rep.to_json());
    return rep;
}

std::vector<DispatcherReport> Tracker::detect_cff_dispatchers(const Cfg& cfg) const {
    std::vector<DispatcherReport> out;
    for (const auto& [start, b] : cfg.blocks) {
        if (b.stub || b.count == 0 || b.terminator != Opcode::Jmpr) continue;
        const CfgImage& img = cfg.images[b.image];
        const std::uint64_t site = b.end() - kInsnSize;
        std::size_t successors = 0;
        if (auto it = site_targets_.find({img.key, site - img.base}); it != site_targets_.end())
            successors = it->second.size();
        if (successors < threshold_) continue;

        // Backward slice of the jump register inside the block.
        auto term = fetch_instruction(img, site);
        if (!term) continue;
        std::set<unsigned> live = {term->rs1};
        for (std::uint64_t a = site; a > b.start;) {
            a -= kInsnSize;
            auto in = fetch_instruction(img, a);
            if (!in) break;
            std::vector<unsigned> srcs;
            bool writes = true;
            switch (in->op) {
                case Opcode::Movi: break;
                case Opcode::Mov: srcs = {in->rs1}; break;
                case Opcode::Pop: srcs = {kSp}; break;
                default:
                    if (is_load(in->op)) srcs = {in->rs1};
                    else if (in->op >= Opcode::Add && in->op <= Opcode::Mul) srcs = {in->rs1, in->rs2};
                    else writes = false;
            }
            if (!writes || !live.count(in->rd)) continue;
            live.erase(in->rd);
            live.insert(srcs.begin(), srcs.end());
        }
        if (live.size() != 1) continue;
        const unsigned var = *live.begin();

        // The state variable must be assigned in at least two blocks.
        std::size_t assigning = 0;
        for (const auto& [bs, other] : cfg.blocks) {
            if (other.stub) continue;
            const CfgImage& oi = cfg.images[other.image];
            for (std::uint64_t a = other.start; a < other.end(); a += kInsnSize) {
                auto in = fetch_instruction(oi, a);
                if (!in) break;
                const bool writes_reg = in->op == Opcode::Movi || in->op == Opcode::Mov || in->op == Opcode::Pop ||
                                        is_load(in->op) || (in->op >= Opcode::Add && in->op <= Opcode::Mul);
                if (writes_reg && in->rd == var) {
                    ++assigning;
                    break;
                }
            }
        }
        if (assigning < 2) continue;
        out.push_back({start, img.name, start - img.base, successors, "r" + std::to_string(var)});
    }
    return out;
}

}  // namespace dyncfg
