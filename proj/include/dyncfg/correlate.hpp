#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyncfg/expr.hpp"

namespace dyncfg {

class SimState;

enum class EventKind {
    Load,
    SymbolResolve,
    Transfer,
    Taint,
    Dispatcher,
    Smc,
    AntiDebug,
    ProcessReplace,
    Concretize,
    Warning,
    Hook,
    Signal,
};

const char* to_string(EventKind k);

struct EventRecord {
    std::uint64_t seq = 0;
    std::uint64_t state_id = 0;
    std::uint64_t step = 0;
    EventKind kind = EventKind::Warning;
    nlohmann::json payload;

    nlohmann::json to_json() const;
};

enum class TaintOrigin { Network, File, Env };

const char* to_string(TaintOrigin o);

struct TaintTag {
    TaintOrigin origin = TaintOrigin::Network;
    std::string source;  // fd number or variable name
    std::uint64_t birth_step = 0;
    std::uint64_t birth_seq = 0;  // seq of the event that created the variable
    std::string birth_fn;         // recv, recvfrom, getenv, read
    std::uint64_t birth_site = 0;

    bool operator==(const TaintTag&) const = default;
};

struct SymbolBinding {
    std::string symbol;
    std::string library;  // identity key of the providing image
    std::uint64_t resolve_site = 0;
    std::string via;  // dlsym, dlvsym, manual
    std::set<std::uint64_t> call_sites;

    bool operator==(const SymbolBinding&) const = default;
};

// The three cross-level mappings. Lives inside a SimState and is copied on fork.
class CorrelationStore {
public:
    void bind_fd(int fd, std::string path) { fd_to_path_[fd] = std::move(path); }
    std::optional<std::string> path_of_fd(int fd) const;

    void bind_handle(std::uint64_t handle, std::size_t image_index) { handle_to_lib_[handle] = image_index; }
    std::optional<std::size_t> image_of_handle(std::uint64_t handle) const;

    void bind_symbol(std::uint64_t addr, SymbolBinding b) { symaddr_[addr] = std::move(b); }
    const SymbolBinding* symbol_at(std::uint64_t addr) const;
    void note_call_site(std::uint64_t addr, std::uint64_t site);

    const std::map<int, std::string>& fd_to_path() const { return fd_to_path_; }
    const std::map<std::uint64_t, std::size_t>& handle_to_lib() const { return handle_to_lib_; }
    const std::map<std::uint64_t, SymbolBinding>& symbols() const { return symaddr_; }

    bool operator==(const CorrelationStore&) const = default;

private:
    std::map<int, std::string> fd_to_path_;
    std::map<std::uint64_t, std::size_t> handle_to_lib_;
    std::map<std::uint64_t, SymbolBinding> symaddr_;
};

struct FlowHop {
    std::string kind;  // recv, recvfrom, write, dlopen, open, mmap, ...
    std::uint64_t site = 0;
    std::uint64_t seq = 0;
    std::string detail;

    nlohmann::json to_json() const;
};

struct FlowChain {
    TaintTag origin;
    std::vector<FlowHop> hops;

    nlohmann::json to_json() const;
};

// Memory stores whose data carried tainted variables.
struct TaintedWrite {
    std::uint64_t seq = 0;
    std::uint64_t site = 0;
    std::uint64_t addr = 0;
    std::set<std::string> vars;
};

// Tainted variable names occurring in `e`.
std::set<std::string> tainted_vars(const SimState& s, const Expr& e);
bool is_tainted(const SimState& s, const Expr& e);

// Builds the chain from the earliest network birth among the tainted variables
// of `arg`, through recorded tainted writes, to the sink. The chain is appended
// to the state's event log as a Taint event.
std::optional<FlowChain> check_taint_flow(SimState& s, const std::string& sink_fn, std::uint64_t sink_site,
                                          const Expr& arg);
std::optional<FlowChain> check_taint_flow(SimState& s, const std::string& sink_fn, std::uint64_t sink_site,
                                          std::span<const Expr> args);

}  // namespace dyncfg
