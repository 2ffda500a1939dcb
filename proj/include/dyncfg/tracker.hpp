#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyncfg/cfg.hpp"
#include "dyncfg/engine.hpp"
#include "dyncfg/state.hpp"

namespace dyncfg {

// One concrete representative per executable region the target can reach
// under the state's constraints. Never adds constraints.
std::vector<std::uint64_t> resolve_symbolic_target(SimState& s, const Expr& t);
std::vector<std::uint64_t> resolve_symbolic_target(SimState& s, const Expr& t, const std::vector<ExecRegion>& regions);

struct TransferEvent {
    std::uint64_t site = 0;
    std::string kind;  // call, jump, return
    std::string target;
    std::vector<std::uint64_t> resolved;
    std::string matched_symbol;

    nlohmann::json to_json() const;
};

struct DispatcherReport {
    std::uint64_t block = 0;
    std::string image;
    std::uint64_t offset = 0;
    std::size_t successors = 0;
    std::string variable;

    nlohmann::json to_json() const;
    auto operator<=>(const DispatcherReport&) const = default;
};

enum class SmcKind { JmpCallHook, PushRetRedirect, GenericSmc };

const char* to_string(SmcKind k);

struct SmcReport {
    std::uint64_t site = 0;    // writing instruction
    std::uint64_t target = 0;  // written address
    SmcKind kind = SmcKind::GenericSmc;
    std::uint64_t value = 0;  // JmpCallHook: absolute target; PushRetRedirect: pushed address
    std::int32_t rel = 0;     // JmpCallHook: imm field
    std::vector<std::uint8_t> old_bytes;
    std::vector<std::uint8_t> new_bytes;

    nlohmann::json to_json() const;
    auto operator<=>(const SmcReport&) const = default;
};

struct RopRedirect {
    std::uint64_t site = 0;
    std::uint64_t target = 0;
    std::string image;

    auto operator<=>(const RopRedirect&) const = default;
};

// Instruction-level monitor. Attach to a manager to receive its breakpoints.
class Tracker {
public:
    explicit Tracker(std::size_t cff_threshold = 8) : threshold_(cff_threshold) {}

    void attach(ExplorationManager& m);

    void on_call(SimState& s, const TransferInfo& info);
    void on_exit(SimState& s, const TransferInfo& info);
    void on_return(SimState& s, const TransferInfo& info);
    SmcReport classify_exec_write(SimState& s, std::uint64_t site, std::uint64_t addr,
                                  const std::vector<std::uint8_t>& old_bytes, const std::vector<std::uint8_t>& new_bytes);

    std::vector<DispatcherReport> detect_cff_dispatchers(const Cfg& cfg) const;

    const std::map<std::uint64_t, std::set<std::uint64_t>>& accumulators() const { return jump_targets_; }
    const std::set<DynamicEdge>& edges() const { return edges_; }
    const std::vector<TransferEvent>& transfers() const { return transfers_; }
    const std::set<SmcReport>& smc_reports() const { return smc_; }
    const std::set<RopRedirect>& rop_redirects() const { return rops_; }
    // Indirect-site targets in absolute addresses of the analysed run (for static recovery of the same layout).
    const std::map<std::uint64_t, std::set<std::uint64_t>>& indirect_targets() const { return indirect_; }
    std::size_t threshold() const { return threshold_; }

private:
    void add_edge(const SimState& s, std::uint64_t site, std::uint64_t target, EdgeKind kind, const std::string& sym);

    std::size_t threshold_;
    std::map<std::uint64_t, std::set<std::uint64_t>> jump_targets_;
    std::map<std::pair<std::string, std::uint64_t>, std::set<std::pair<std::string, std::uint64_t>>> site_targets_;
    std::map<std::uint64_t, std::set<std::uint64_t>> indirect_;
    std::set<DynamicEdge> edges_;
    std::vector<TransferEvent> transfers_;
    std::set<SmcReport> smc_;
    std::set<RopRedirect> rops_;
};

}  // namespace dyncfg
