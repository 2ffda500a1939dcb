#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyncfg/correlate.hpp"
#include "dyncfg/expr.hpp"
#include "dyncfg/image.hpp"
#include "dyncfg/solver.hpp"

namespace dyncfg {

// Address-space layout.
inline constexpr std::uint64_t kMainBase = 0x400000;
inline constexpr std::uint64_t kGranule = 0x100000;
inline constexpr std::uint64_t kLayoutLimit = 0x600000000000;
inline constexpr std::uint64_t kHeapBase = 0x600000000000;
inline constexpr std::uint64_t kHookWindow = 0x700000000000;
inline constexpr std::uint64_t kHookImageStride = 0x10000;
inline constexpr std::uint64_t kHookSlot = 16;
inline constexpr std::uint64_t kSigreturnImage = 0xFFFF;  // hook-window image index used as a signal return sentinel
inline constexpr std::uint64_t kStackBase = 0x7FFF00000000;
inline constexpr std::uint64_t kStackSize = 0x100000;
inline constexpr unsigned kNumRegs = 16;
inline constexpr unsigned kSp = 15;

inline constexpr std::uint64_t hook_address(std::uint64_t image_index, std::uint64_t ordinal) {
    return kHookWindow + image_index * kHookImageStride + ordinal * kHookSlot;
}
inline constexpr bool in_hook_window(std::uint64_t addr) {
    return addr >= kHookWindow && addr < kHookWindow + 0x10000 * kHookImageStride;
}

struct LoadedImage {
    std::shared_ptr<const BinaryImage> image;
    std::uint64_t base = 0;
    std::string path;       // source identifier as requested or recorded
    std::string key;        // identity: canonical host path or "memfd:<name>"
    std::string name;       // display name (basename)
    std::string mechanism;  // main, dlopen-variant, memfd-fileless, mmap-exec, manual-load, internal-api
    std::size_t index = 0;  // position in the state's image list
    std::uint64_t load_site = 0;

    std::uint64_t end() const { return base + image->span(); }
    bool contains(std::uint64_t addr) const { return addr >= base && addr < end(); }
    std::uint64_t stub(std::size_t ordinal) const { return hook_address(index, ordinal); }
};

struct Mapping {
    std::uint64_t start = 0;
    std::uint64_t end = 0;  // exclusive
    std::uint32_t perms = 0;
    std::string tag;

    bool operator==(const Mapping&) const = default;
};

enum class FdKind { File, Socket, Memfd };

struct FdObject {
    int fd = -1;
    FdKind kind = FdKind::File;
    std::string path;  // files
    std::string name;  // memfd
    int peer = -1;     // sockets
    std::shared_ptr<std::vector<Expr>> backing;
    std::size_t cursor = 0;
    std::size_t recv_count = 0;
};

// Inputs fixed for one analysis session.
struct SessionConfig {
    std::vector<std::string> search_paths;
    bool concrete = false;
    std::map<std::string, std::string> witness_env;
    std::vector<std::uint8_t> witness_network;
    std::optional<std::uint64_t> witness_time;
    std::vector<std::string> extra_candidates;
    std::size_t max_string = 256;
};

class SimState;

class ExecWriteListener {
public:
    virtual ~ExecWriteListener() = default;
    virtual void on_exec_write(SimState& s, std::uint64_t site, std::uint64_t addr, const std::vector<std::uint8_t>& old_bytes,
                               const std::vector<std::uint8_t>& new_bytes) = 0;
};

class InfeasibleBranch : public std::runtime_error {
public:
    InfeasibleBranch() : std::runtime_error("InfeasibleBranch") {}
};

class AddressSpaceExhausted : public std::runtime_error {
public:
    AddressSpaceExhausted() : std::runtime_error("AddressSpaceExhausted") {}
};

enum class StateStatus { Active, Finished, Errored };

// Copy-on-write byte memory. Unwritten bytes are absent.
class Memory {
public:
    static constexpr std::uint64_t kPageSize = 256;

    const Expr* peek(std::uint64_t addr) const;
    void poke(std::uint64_t addr, Expr byte);
    std::size_t page_count() const { return pages_.size(); }

private:
    struct Page {
        std::array<Expr, kPageSize> bytes;
    };
    std::unordered_map<std::uint64_t, std::shared_ptr<Page>> pages_;
};

class SimState {
public:
    SimState(std::uint64_t id, std::shared_ptr<const SessionConfig> cfg, Solver* solver);

    std::uint64_t id;
    std::uint64_t pc = 0;
    std::array<Expr, kNumRegs> regs;
    StateStatus status = StateStatus::Active;
    std::string status_reason;
    std::uint64_t steps = 0;
    std::uint64_t parent_id = 0;

    const SessionConfig& config() const { return *cfg_; }
    std::shared_ptr<const SessionConfig> config_ptr() const { return cfg_; }
    Solver& solver() const { return *solver_; }
    void set_solver(Solver* s) { solver_ = s; }
    void set_listener(ExecWriteListener* l) { listener_ = l; }

    // Registers.
    const Expr& reg(unsigned r) const { return regs.at(r); }
    void set_reg(unsigned r, Expr v) { regs.at(r) = std::move(v); }
    std::uint64_t sp() const;

    // Memory. Reads of unmapped, never-written bytes create fresh variables.
    Expr read_byte(std::uint64_t addr);
    Expr read_mem(std::uint64_t addr, std::size_t len);
    Expr read_mem(const Expr& addr, std::size_t len);
    void write_mem(std::uint64_t addr, const Expr& data, std::uint64_t site = 0);
    void write_mem(const Expr& addr, const Expr& data, std::uint64_t site = 0);
    void write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes);
    // Without side effects: concrete value if the byte is concrete (mapped-unwritten reads as 0).
    std::optional<std::uint8_t> concrete_byte(std::uint64_t addr) const;
    std::vector<std::uint8_t> peek_bytes(std::uint64_t addr, std::size_t len) const;
    std::optional<std::uint64_t> concrete_u64(std::uint64_t addr) const;
    std::uint64_t push(const Expr& v);
    Expr pop();

    // Constraints.
    const std::vector<Expr>& constraints() const { return constraints_; }
    const Model& model() const { return model_; }
    void add_constraint(const Expr& c);
    SatResult check(std::span<const Expr> extra = {});
    // Sat ⇒ true. Unknown is treated as infeasible and logged.
    bool feasible(const Expr& c);
    std::uint64_t concretize(const Expr& e, const char* why);
    std::uint64_t eval(const Expr& e) const;  // under the current model, no constraint added
    SimState fork(const Expr& c, std::uint64_t new_id) const;
    // Fork when `m` is already known to satisfy constraints ∪ {c}.
    SimState fork_with_model(const Expr& c, std::uint64_t new_id, const Model& m) const;

    // Mappings.
    void map_region(std::uint64_t start, std::uint64_t len, std::uint32_t perms, std::string tag);
    // Returns the previous permission of the first affected byte.
    std::uint32_t protect(std::uint64_t start, std::uint64_t len, std::uint32_t perms);
    void unmap(std::uint64_t start, std::uint64_t len);
    const Mapping* mapping_at(std::uint64_t addr) const;
    std::uint32_t perms_at(std::uint64_t addr) const;
    const std::map<std::uint64_t, Mapping>& mappings() const { return mappings_; }
    std::uint64_t reserve_layout(std::uint64_t len);
    std::uint64_t heap_alloc(std::uint64_t len);

    // Images.
    std::vector<LoadedImage> images;
    const LoadedImage* image_containing(std::uint64_t addr) const;
    const LoadedImage* image_by_key(const std::string& key) const;

    // File descriptors.
    int alloc_fd(FdObject obj);
    FdObject* fd(int n);
    const FdObject* fd(int n) const;
    bool close_fd(int n);
    const std::map<int, FdObject>& fds() const { return fds_; }
    // Writable backing for fd n (detached from any sharing state).
    std::vector<Expr>& fd_backing(int n);

    // Environment and correlation.
    std::map<std::string, std::string> env;
    std::map<std::string, std::uint64_t> symbolic_env;  // name -> buffer address
    CorrelationStore store;
    std::map<std::string, TaintTag> taints;
    std::vector<TaintedWrite> tainted_writes;
    std::vector<FlowChain> flows;

    // Events.
    const EventRecord& log(EventKind kind, nlohmann::json payload);
    const std::vector<std::shared_ptr<const EventRecord>>& events() const { return events_; }

    // Control bookkeeping.
    std::vector<std::uint64_t> shadow_stack;
    std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::size_t>> visits;  // pc -> (count, constraint count)
    std::vector<std::uint64_t> pending_signals;
    std::set<std::uint64_t> delivered_signals;
    std::vector<std::uint64_t> outputs;  // values written by the write syscall to fd 1
    std::uint64_t clone_counter = 0;
    std::uint64_t current_site = 0;

    Expr fresh_var(const std::string& prefix, unsigned width, const std::string& origin = {});

private:
    std::shared_ptr<const SessionConfig> cfg_;
    Solver* solver_;
    ExecWriteListener* listener_ = nullptr;
    Memory mem_;
    std::map<std::uint64_t, Mapping> mappings_;
    std::vector<Expr> constraints_;
    Model model_;
    std::map<int, FdObject> fds_;
    std::vector<std::shared_ptr<const EventRecord>> events_;
    std::uint64_t next_seq_ = 1;
    std::uint64_t fresh_counter_ = 0;
    std::uint64_t next_layout_ = kMainBase;
    std::uint64_t heap_next_ = kHeapBase;
};

// Loading.
class LibraryNotFound : public std::runtime_error {
public:
    explicit LibraryNotFound(const std::string& p) : std::runtime_error("LibraryNotFound: " + p) {}
};

struct ExecRegion {
    std::uint64_t start = 0;
    std::uint64_t end = 0;  // inclusive

    bool operator==(const ExecRegion&) const = default;
};

// Maps `img` at the next free layout base (or `base` if given) and appends it to the image list.
// With `map_segments` false the bytes are assumed to be in place already.
LoadedImage load_image(SimState& s, std::shared_ptr<const BinaryImage> img, const std::string& path,
                       const std::string& key, const std::string& mechanism,
                       std::optional<std::uint64_t> base = {}, bool map_segments = true);

// Resolves `path` against absolute paths, search paths and /proc/self/fd/N, then loads it.
// Idempotent per resolved identity.
LoadedImage dynamic_load(SimState& s, const std::string& path, const std::string& mechanism = "dlopen-variant",
                                std::uint64_t site = 0);

std::vector<ExecRegion> exec_regions(const SimState& s);

// Host file helpers.
std::optional<std::vector<std::uint8_t>> read_host_file(const std::string& path);
std::optional<std::string> resolve_host_path(const SessionConfig& cfg, const std::string& path);
std::string base_name(const std::string& path);

}  // namespace dyncfg
