#include <algorithm>

#include "dyncfg/state.hpp"

namespace dyncfg {

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::Load: return "load";
        case EventKind::SymbolResolve: return "symbol-resolve";
        case EventKind::Transfer: return "transfer";
        case EventKind::Taint: return "taint";
        case EventKind::Dispatcher: return "dispatcher";
        case EventKind::Smc: return "smc";
        case EventKind::AntiDebug: return "anti-debug";
        case EventKind::ProcessReplace: return "process-replace";
        case EventKind::Concretize: return "concretize";
        case EventKind::Warning: return "warning";
        case EventKind::Hook: return "hook";
        case EventKind::Signal: return "signal";
    }
    return "?";
}

const char* to_string(TaintOrigin o) {
    switch (o) {
        case TaintOrigin::Network: return "network";
        case TaintOrigin::File: return "file";
        case TaintOrigin::Env: return "env";
    }
    return "?";
}

nlohmann::json EventRecord::to_json() const {
    return {{"seq", seq}, {"state", state_id}, {"step", step}, {"kind", to_string(kind)}, {"payload", payload}};
}

std::optional<std::string> CorrelationStore::path_of_fd(int fd) const {
    auto it = fd_to_path_.find(fd);
    if (it == fd_to_path_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::size_t> CorrelationStore::image_of_handle(std::uint64_t handle) const {
    auto it = handle_to_lib_.find(handle);
    if (it == handle_to_lib_.end()) return std::nullopt;
    return it->second;
}

const SymbolBinding* CorrelationStore::symbol_at(std::uint64_t addr) const {
    auto it = symaddr_.find(addr);
    return it == symaddr_.end() ? nullptr : &it->second;
}

void CorrelationStore::note_call_site(std::uint64_t addr, std::uint64_t site) {
    auto it = symaddr_.find(addr);
    if (it != symaddr_.end()) it->second.call_sites.insert(site);
}

nlohmann::json FlowHop::to_json() const { return {{"kind", kind}, {"site", site}, {"seq", seq}, {"detail", detail}}; }

nlohmann::json FlowChain::to_json() const {
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : hops) hs.push_back(h.to_json());
    return {{"origin", to_string(origin.origin)}, {"source", origin.source}, {"hops", hs}};
}

namespace {

void scan_tainted(const SimState& s, const Expr& e, std::set<std::string>& out) {
    if (!e.has_vars()) return;
    if (e.is_var()) {
        if (s.taints.count(e.name())) out.insert(e.name());
        return;
    }
    for (std::size_t i = 0; i < e.arity(); ++i) scan_tainted(s, e.operand(i), out);
}

}  // namespace

std::set<std::string> tainted_vars(const SimState& s, const Expr& e) {
    std::set<std::string> out;
    if (!s.taints.empty()) scan_tainted(s, e, out);
    return out;
}

bool is_tainted(const SimState& s, const Expr& e) { return !tainted_vars(s, e).empty(); }

std::optional<FlowChain> check_taint_flow(SimState& s, const std::string& sink_fn, std::uint64_t sink_site,
                                          const Expr& arg) {
    return check_taint_flow(s, sink_fn, sink_site, std::span<const Expr>(&arg, 1));
}

std::optional<FlowChain> check_taint_flow(SimState& s, const std::string& sink_fn, std::uint64_t sink_site,
                                          std::span<const Expr> args) {
    std::set<std::string> vars;
    for (const Expr& arg : args)
        for (const auto& v : tainted_vars(s, arg))
            if (s.taints.at(v).origin == TaintOrigin::Network) vars.insert(v);
    if (vars.empty()) return std::nullopt;
    const TaintTag* first = nullptr;
    for (const auto& v : vars) {
        const TaintTag& t = s.taints.at(v);
        if (!first || t.birth_seq < first->birth_seq) first = &t;
    }
    FlowChain chain;
    chain.origin = *first;
    chain.hops.push_back({first->birth_fn, first->birth_site, first->birth_seq, "fd " + first->source});
    for (const auto& w : s.tainted_writes) {
        if (w.seq <= first->birth_seq) continue;
        bool hit = std::any_of(w.vars.begin(), w.vars.end(), [&](const std::string& v) { return vars.count(v) != 0; });
        if (hit) chain.hops.push_back({"write", w.site, w.seq, "addr " + std::to_string(w.addr)});
    }
    nlohmann::json payload = {{"sink", sink_fn}, {"site", sink_site}, {"tainted_vars", vars.size()}};
    const EventRecord& ev = s.log(EventKind::Taint, payload);
    chain.hops.push_back({sink_fn, sink_site, ev.seq, std::to_string(vars.size()) + " tainted bytes"});
    const_cast<EventRecord&>(ev).payload["chain"] = chain.to_json();
    s.flows.push_back(chain);
    return chain;
}

}  // namespace dyncfg
