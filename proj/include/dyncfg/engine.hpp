#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dyncfg/isa.hpp"
#include "dyncfg/state.hpp"

namespace dyncfg {

// Return address pushed for the entry function and for simulated signal delivery.
inline constexpr std::uint64_t kExitSentinel = hook_address(kSigreturnImage, 0);

enum class BreakpointKind { Call, Exit, Return, ExecWrite };

const char* to_string(BreakpointKind k);

// What a breakpoint handler sees. Fired before the instruction takes effect.
struct TransferInfo {
    BreakpointKind kind = BreakpointKind::Call;
    std::uint64_t site = 0;
    Instruction insn;
    Expr target;                          // call/exit/return target expression
    std::vector<std::uint64_t> resolved;  // feasible concrete targets
    bool conditional = false;
    bool indirect = false;
    std::uint64_t continuation = 0;  // call: site + 8; return: expected continuation (0 if none)
    std::uint64_t write_addr = 0;    // exec_write only
    std::vector<std::uint8_t> old_bytes;
    std::vector<std::uint8_t> new_bytes;
};

using BreakpointHandler = std::function<void(SimState&, const TransferInfo&)>;

struct Breakpoint {
    BreakpointKind kind;
    BreakpointHandler handler;
};

// Host-side implementations of imported functions.
class HookHandler {
public:
    virtual ~HookHandler() = default;
    virtual void call(SimState& s, const std::string& name) = 0;
};

struct ExplorationLimits {
    std::size_t max_active = 32;
    std::size_t deferred_capacity = 128;
    std::size_t budget = 10000;
    std::uint32_t loop_limit = 512;
};

struct ExplorationResult {
    std::size_t steps = 0;
    double seconds = 0;
    bool budget_exhausted = false;
    std::size_t discarded = 0;
    std::size_t max_active_seen = 0;
    std::size_t unknowns = 0;
};

class ExplorationManager : public ExecWriteListener {
public:
    ExplorationManager(ExplorationLimits limits, Solver* solver);
    ExplorationManager(const ExplorationManager&) = delete;
    ExplorationManager& operator=(const ExplorationManager&) = delete;

    std::uint64_t next_id() { return next_id_++; }
    // Builds the entry state for `main`: image loaded at 0x400000, stack set up, pc at entry.
    SimState make_entry_state(std::shared_ptr<const BinaryImage> main, const std::string& path,
                              std::shared_ptr<const SessionConfig> cfg);
    void add_state(SimState s);

    void register_breakpoint(Breakpoint b) { breakpoints_.push_back(std::move(b)); }
    void set_hooks(HookHandler* h) { hooks_ = h; }

    // Executes one instruction (or one hook) of `s`.
    std::vector<SimState> step(SimState s);
    // Forks entry states for signal handlers not yet delivered in this lineage.
    void schedule_signal_paths(SimState& s, std::vector<SimState>& out);
    // One manager iteration over all active states.
    void iterate();
    ExplorationResult run();

    std::vector<SimState> active;
    std::deque<SimState> deferred;
    std::vector<SimState> finished;
    std::vector<SimState> errored;
    std::vector<std::string> warnings;

    const ExplorationLimits& limits() const { return limits_; }
    std::size_t iterations() const { return iterations_; }

    void on_exec_write(SimState& s, std::uint64_t site, std::uint64_t addr, const std::vector<std::uint8_t>& old_bytes,
                       const std::vector<std::uint8_t>& new_bytes) override;

private:
    void fire(SimState& s, const TransferInfo& info);
    void enforce_bounds();
    std::vector<std::uint64_t> targets_of(SimState& s, const Expr& t);
    void finish(SimState& s, const std::string& why);
    void fail(SimState& s, const std::string& why);

    ExplorationLimits limits_;
    Solver* solver_;
    HookHandler* hooks_ = nullptr;
    std::vector<Breakpoint> breakpoints_;
    std::uint64_t next_id_ = 1;
    std::size_t iterations_ = 0;
    std::size_t discarded_ = 0;
    std::size_t max_active_seen_ = 0;
};

}  // namespace dyncfg
