#include "dyncfg/state.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace dyncfg {

namespace {

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::string hex(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

// Value of `e` under `m`, with variables absent from `m` taken as 0.
std::uint64_t eval_total(const Expr& e, const Model& m) {
    if (e.is_const()) return e.value();
    std::map<std::string, unsigned> vars;
    collect_vars(e, vars);
    bool complete = true;
    for (auto& [n, _] : vars)
        if (!m.has(n)) complete = false;
    if (complete) return eval_with_model(e, m);
    Model full = m;
    for (auto& [n, _] : vars) full.values.emplace(n, 0);
    return eval_with_model(e, full);
}

}  // namespace

const Expr* Memory::peek(std::uint64_t addr) const {
    auto it = pages_.find(addr / kPageSize);
    if (it == pages_.end()) return nullptr;
    const Expr& e = it->second->bytes[addr % kPageSize];
    return e.valid() ? &e : nullptr;
}

void Memory::poke(std::uint64_t addr, Expr byte) {
    auto& page = pages_[addr / kPageSize];
    if (!page) page = std::make_shared<Page>();
    else if (page.use_count() > 1) page = std::make_shared<Page>(*page);
    page->bytes[addr % kPageSize] = std::move(byte);
}

SimState::SimState(std::uint64_t id_, std::shared_ptr<const SessionConfig> cfg, Solver* solver)
    : id(id_), cfg_(std::move(cfg)), solver_(solver) {
    for (auto& r : regs) r = bv(0, 64);
    map_region(kStackBase, kStackSize, kSegRead | kSegWrite, "stack");
    regs[kSp] = bv(kStackBase + kStackSize, 64);
}

std::uint64_t SimState::sp() const {
    const Expr& e = regs[kSp];
    return e.is_const() ? e.value() : eval(e);
}

Expr SimState::read_byte(std::uint64_t addr) {
    if (const Expr* e = mem_.peek(addr)) return *e;
    if (mapping_at(addr) || cfg_->concrete) return bv(0, 8);
    Expr v = var("mem_" + hex(addr), 8, "memory");
    mem_.poke(addr, v);
    log(EventKind::Warning, {{"what", "unmapped-read"}, {"addr", addr}});
    return v;
}

Expr SimState::read_mem(std::uint64_t addr, std::size_t len) {
    std::vector<Expr> bytes;
    bytes.reserve(len);
    bool concrete = len <= 8;
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < len; ++i) {
        bytes.push_back(read_byte(addr + i));
        if (bytes.back().is_const()) value |= bytes.back().value() << (8 * i);
        else concrete = false;
    }
    if (concrete) return bv(value, static_cast<unsigned>(len * 8));
    Expr e = bytes[len - 1];
    for (std::size_t i = len - 1; i-- > 0;) e = concat(e, bytes[i]);
    return e;
}

Expr SimState::read_mem(const Expr& addr, std::size_t len) {
    return read_mem(addr.is_const() ? addr.value() : concretize(addr, "load address"), len);
}

void SimState::write_mem(std::uint64_t addr, const Expr& data, std::uint64_t site) {
    if (data.width() % 8 != 0) throw ExprError("write_mem: width must be a multiple of 8");
    const std::size_t len = data.width() / 8;
    std::vector<Expr> bytes(len);
    for (std::size_t i = 0; i < len; ++i)
        bytes[i] = data.is_const() ? bv(data.value() >> (8 * i), 8) : extract(8 * i + 7, 8 * i, data);

    bool exec = false;
    for (std::size_t i = 0; i < len && !exec; ++i) exec = (perms_at(addr + i) & kSegExec) != 0;
    if (exec && listener_) {
        const std::uint64_t lo = addr & ~std::uint64_t{7};
        const std::uint64_t hi = align_up(addr + len, 8);
        std::vector<std::uint8_t> old_bytes = peek_bytes(lo, hi - lo);
        std::vector<std::uint8_t> new_bytes = old_bytes;
        for (std::size_t i = 0; i < len; ++i)
            new_bytes[addr - lo + i] = static_cast<std::uint8_t>(bytes[i].is_const() ? bytes[i].value() : eval(bytes[i]));
        listener_->on_exec_write(*this, site, addr, old_bytes, new_bytes);
    }
    if (!taints.empty() && data.has_vars()) {
        auto tv = tainted_vars(*this, data);
        if (!tv.empty()) tainted_writes.push_back({next_seq_, site, addr, std::move(tv)});
    }
    for (std::size_t i = 0; i < len; ++i) mem_.poke(addr + i, std::move(bytes[i]));
}

void SimState::write_mem(const Expr& addr, const Expr& data, std::uint64_t site) {
    write_mem(addr.is_const() ? addr.value() : concretize(addr, "store address"), data, site);
}

void SimState::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    for (std::size_t i = 0; i < bytes.size(); ++i) mem_.poke(addr + i, bv(bytes[i], 8));
}

std::optional<std::uint8_t> SimState::concrete_byte(std::uint64_t addr) const {
    if (const Expr* e = mem_.peek(addr)) {
        if (e->is_const()) return static_cast<std::uint8_t>(e->value());
        return std::nullopt;
    }
    if (mapping_at(addr) || cfg_->concrete) return 0;
    return std::nullopt;
}

std::vector<std::uint8_t> SimState::peek_bytes(std::uint64_t addr, std::size_t len) const {
    std::vector<std::uint8_t> out(len);
    for (std::size_t i = 0; i < len; ++i) out[i] = concrete_byte(addr + i).value_or(0);
    return out;
}

std::optional<std::uint64_t> SimState::concrete_u64(std::uint64_t addr) const {
    std::uint64_t v = 0;
    for (unsigned i = 0; i < 8; ++i) {
        auto b = concrete_byte(addr + i);
        if (!b) return std::nullopt;
        v |= std::uint64_t{*b} << (8 * i);
    }
    return v;
}

std::uint64_t SimState::push(const Expr& v) {
    const std::uint64_t nsp = sp() - 8;
    regs[kSp] = bv(nsp, 64);
    write_mem(nsp, low_bits(v, 64), current_site);
    return nsp;
}

Expr SimState::pop() {
    const std::uint64_t s = sp();
    Expr v = read_mem(s, 8);
    regs[kSp] = bv(s + 8, 64);
    return v;
}

void SimState::add_constraint(const Expr& c) {
    if (c.width() != 1) throw ExprError("constraint must have width 1");
    constraints_.push_back(c);
    if (c.is_const() || eval_total(c, model_) == 1) {
        std::map<std::string, unsigned> vars;
        collect_vars(c, vars);
        for (auto& [n, _] : vars) model_.values.emplace(n, 0);
        return;
    }
    SatResult r = solver_->satisfiable(constraints_, {}, &model_);
    if (r.sat()) {
        for (auto& [n, v] : r.model.values) model_.values[n] = v;
    } else {
        log(EventKind::Warning, {{"what", "constraint-without-model"}, {"solver", to_string(r.kind)}});
    }
}

SatResult SimState::check(std::span<const Expr> extra) {
    SatResult r = solver_->satisfiable(constraints_, extra, &model_);
    if (r.kind == SatKind::Unknown) log(EventKind::Warning, {{"what", "solver-unknown"}, {"precision_loss", true}});
    return r;
}

bool SimState::feasible(const Expr& c) {
    if (c.is_const()) return c.value() != 0;
    Expr one[] = {c};
    return check(one).sat();
}

std::uint64_t SimState::eval(const Expr& e) const { return eval_total(e, model_); }

std::uint64_t SimState::concretize(const Expr& e, const char* why) {
    if (e.is_const()) return e.value();
    const std::uint64_t v = eval(e);
    std::map<std::string, unsigned> vars;
    collect_vars(e, vars);
    for (auto& [n, _] : vars) model_.values.emplace(n, 0);
    constraints_.push_back(eq(e, bv(v, e.width())));
    log(EventKind::Concretize, {{"why", why}, {"value", v}, {"expr", e.to_string()}});
    return v;
}

SimState SimState::fork(const Expr& c, std::uint64_t new_id) const {
    Expr one[] = {c};
    SatResult r = solver_->satisfiable(constraints_, one, &model_);
    if (!r.sat()) throw InfeasibleBranch();
    return fork_with_model(c, new_id, r.model);
}

SimState SimState::fork_with_model(const Expr& c, std::uint64_t new_id, const Model& m) const {
    SimState child = *this;
    child.id = new_id;
    child.parent_id = id;
    child.constraints_.push_back(c);
    for (auto& [n, v] : m.values) child.model_.values[n] = v;
    return child;
}

void SimState::map_region(std::uint64_t start, std::uint64_t len, std::uint32_t perms, std::string tag) {
    if (len == 0) return;
    unmap(start, len);
    mappings_[start] = Mapping{start, start + len, perms, std::move(tag)};
}

void SimState::unmap(std::uint64_t start, std::uint64_t len) {
    const std::uint64_t end = start + len;
    auto it = mappings_.lower_bound(start);
    if (it != mappings_.begin() && std::prev(it)->second.end > start) --it;
    std::vector<Mapping> keep;
    while (it != mappings_.end() && it->second.start < end) {
        Mapping m = it->second;
        it = mappings_.erase(it);
        if (m.start < start) keep.push_back({m.start, start, m.perms, m.tag});
        if (m.end > end) keep.push_back({end, m.end, m.perms, m.tag});
    }
    for (auto& m : keep) mappings_[m.start] = m;
}

std::uint32_t SimState::protect(std::uint64_t start, std::uint64_t len, std::uint32_t perms) {
    const std::uint32_t previous = perms_at(start);
    const std::uint64_t end = start + len;
    std::vector<Mapping> pieces;
    for (auto& [s, m] : mappings_) {
        if (m.end <= start || m.start >= end) continue;
        pieces.push_back({std::max(m.start, start), std::min(m.end, end), perms, m.tag});
    }
    for (auto& p : pieces) {
        unmap(p.start, p.end - p.start);
        mappings_[p.start] = p;
    }
    return previous;
}

const Mapping* SimState::mapping_at(std::uint64_t addr) const {
    auto it = mappings_.upper_bound(addr);
    if (it == mappings_.begin()) return nullptr;
    --it;
    return addr < it->second.end ? &it->second : nullptr;
}

std::uint32_t SimState::perms_at(std::uint64_t addr) const {
    const Mapping* m = mapping_at(addr);
    return m ? m->perms : 0;
}

std::uint64_t SimState::reserve_layout(std::uint64_t len) {
    const std::uint64_t base = next_layout_;
    const std::uint64_t next = base + std::max<std::uint64_t>(align_up(len, kGranule), kGranule);
    if (next > kLayoutLimit) throw AddressSpaceExhausted();
    next_layout_ = next;
    return base;
}

std::uint64_t SimState::heap_alloc(std::uint64_t len) {
    const std::uint64_t p = heap_next_;
    const std::uint64_t size = std::max<std::uint64_t>(align_up(len, 16), 16);
    heap_next_ += size;
    map_region(p, size, kSegRead | kSegWrite, "heap");
    return p;
}

const LoadedImage* SimState::image_containing(std::uint64_t addr) const {
    for (const auto& img : images)
        if (img.contains(addr)) return &img;
    return nullptr;
}

const LoadedImage* SimState::image_by_key(const std::string& key) const {
    for (const auto& img : images)
        if (img.key == key) return &img;
    return nullptr;
}

int SimState::alloc_fd(FdObject obj) {
    int n = 3;
    while (fds_.count(n)) ++n;
    obj.fd = n;
    if (!obj.backing) obj.backing = std::make_shared<std::vector<Expr>>();
    fds_.emplace(n, std::move(obj));
    return n;
}

FdObject* SimState::fd(int n) {
    auto it = fds_.find(n);
    return it == fds_.end() ? nullptr : &it->second;
}

const FdObject* SimState::fd(int n) const {
    auto it = fds_.find(n);
    return it == fds_.end() ? nullptr : &it->second;
}

bool SimState::close_fd(int n) { return fds_.erase(n) != 0; }

std::vector<Expr>& SimState::fd_backing(int n) {
    FdObject& f = fds_.at(n);
    if (!f.backing) f.backing = std::make_shared<std::vector<Expr>>();
    else if (f.backing.use_count() > 1) f.backing = std::make_shared<std::vector<Expr>>(*f.backing);
    return *f.backing;
}

const EventRecord& SimState::log(EventKind kind, nlohmann::json payload) {
    auto rec = std::make_shared<EventRecord>();
    rec->seq = next_seq_++;
    rec->state_id = id;
    rec->step = steps;
    rec->kind = kind;
    rec->payload = std::move(payload);
    events_.push_back(rec);
    return *events_.back();
}

Expr SimState::fresh_var(const std::string& prefix, unsigned width, const std::string& origin) {
    return var(prefix + "_" + std::to_string(fresh_counter_++), width, origin);
}

// ---------------------------------------------------------------------------
// Loading

std::string base_name(const std::string& path) {
    auto pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

std::optional<std::vector<std::uint8_t>> read_host_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::optional<std::string> resolve_host_path(const SessionConfig& cfg, const std::string& path) {
    namespace fs = std::filesystem;
    if (path.empty()) return std::nullopt;
    auto usable = [](const fs::path& p) -> std::optional<std::string> {
        std::error_code ec;
        if (!fs::is_regular_file(p, ec)) return std::nullopt;
        return fs::weakly_canonical(p, ec).string();
    };
    if (path.front() == '/') return usable(path);
    for (const auto& dir : cfg.search_paths)
        if (auto r = usable(fs::path(dir) / path)) return r;
    if (path.find('/') != std::string::npos) return usable(path);
    return std::nullopt;
}

LoadedImage load_image(SimState& s, std::shared_ptr<const BinaryImage> img, const std::string& path,
                       const std::string& key, const std::string& mechanism, std::optional<std::uint64_t> base,
                       bool map_segments) {
    LoadedImage li;
    li.base = base ? *base : s.reserve_layout(img->span());
    li.image = std::move(img);
    li.path = path;
    li.key = key;
    li.name = key.rfind("memfd:", 0) == 0 ? key.substr(6) : base_name(key);
    li.mechanism = mechanism;
    li.index = s.images.size();
    li.load_site = s.current_site;
    for (const auto& seg : li.image->segments) {
        if (!map_segments) break;
        s.map_region(li.base + seg.vaddr, seg.mem_size, seg.flags, li.name);
        s.write_bytes(li.base + seg.vaddr, seg.data);
    }
    s.images.push_back(li);
    s.log(EventKind::Load, {{"path", path},
                            {"key", key},
                            {"name", li.name},
                            {"base", li.base},
                            {"mechanism", mechanism},
                            {"site", li.load_site},
                            {"index", li.index}});
    return li;
}

LoadedImage dynamic_load(SimState& s, const std::string& path, const std::string& mechanism, std::uint64_t site) {
    const std::string proc = "/proc/self/fd/";
    std::vector<std::uint8_t> bytes;
    std::string key;
    if (path.rfind(proc, 0) == 0) {
        int n = -1;
        try {
            n = std::stoi(path.substr(proc.size()));
        } catch (const std::exception&) {
            throw LibraryNotFound(path);
        }
        const FdObject* f = s.fd(n);
        if (!f || f->kind == FdKind::Socket) throw LibraryNotFound(path);
        key = f->kind == FdKind::Memfd ? "memfd:" + f->name : f->path;
        if (const LoadedImage* li = s.image_by_key(key)) return *li;
        for (const Expr& b : *f->backing) bytes.push_back(static_cast<std::uint8_t>(b.is_const() ? b.value() : s.eval(b)));
    } else {
        auto resolved = resolve_host_path(s.config(), path);
        if (!resolved) throw LibraryNotFound(path);
        key = *resolved;
        if (const LoadedImage* li = s.image_by_key(key)) return *li;
        auto data = read_host_file(key);
        if (!data) throw LibraryNotFound(path);
        bytes = std::move(*data);
    }
    auto img = std::make_shared<const BinaryImage>(parse_image(bytes));
    const std::uint64_t saved = s.current_site;
    if (site) s.current_site = site;
    LoadedImage li = load_image(s, std::move(img), path, key, mechanism);
    s.current_site = saved;
    return li;
}

std::vector<ExecRegion> exec_regions(const SimState& s) {
    std::vector<ExecRegion> out;
    for (const auto& [start, m] : s.mappings())
        if (m.perms & kSegExec) out.push_back({m.start, m.end - 1});
    return out;
}

}  // namespace dyncfg
