#include "dyncfg/hooks.hpp"

#include <algorithm>
#include <filesystem>

namespace dyncfg {

const char* to_string(Encoding e) { return e == Encoding::Ascii ? "ascii" : "utf16le"; }

const char* to_string(Extraction::Kind k) {
    switch (k) {
        case Extraction::ConcreteString: return "ConcreteString";
        case Extraction::SymbolicPointer: return "SymbolicPointer";
        case Extraction::SymbolicString: return "SymbolicString";
    }
    return "?";
}

std::vector<std::uint8_t> encode_string(const std::string& text, Encoding enc) {
    std::vector<std::uint8_t> out;
    if (enc == Encoding::Ascii) {
        out.assign(text.begin(), text.end());
        out.push_back(0);
        return out;
    }
    // UTF-8 to UTF-16LE.
    std::size_t i = 0;
    auto unit = [&](std::uint32_t u) {
        out.push_back(static_cast<std::uint8_t>(u & 0xFF));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
    };
    while (i < text.size()) {
        const auto c = static_cast<std::uint8_t>(text[i]);
        std::uint32_t cp = 0;
        std::size_t n = 0;
        if (c < 0x80) cp = c, n = 1;
        else if ((c >> 5) == 6) cp = c & 0x1F, n = 2;
        else if ((c >> 4) == 14) cp = c & 0x0F, n = 3;
        else if ((c >> 3) == 30) cp = c & 0x07, n = 4;
        else throw DecodeError("invalid utf-8 lead byte");
        if (i + n > text.size()) throw DecodeError("truncated utf-8 sequence");
        for (std::size_t j = 1; j < n; ++j) cp = (cp << 6) | (static_cast<std::uint8_t>(text[i + j]) & 0x3F);
        i += n;
        if (cp >= 0x10000) {
            cp -= 0x10000;
            unit(0xD800 + (cp >> 10));
            unit(0xDC00 + (cp & 0x3FF));
        } else {
            unit(cp);
        }
    }
    unit(0);
    return out;
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

std::string decode_units(const std::vector<std::uint8_t>& bytes, Encoding enc) {
    if (enc == Encoding::Ascii) return std::string(bytes.begin(), bytes.end());
    std::string out;
    for (std::size_t i = 0; i + 1 < bytes.size(); i += 2) {
        std::uint32_t u = bytes[i] | (std::uint32_t{bytes[i + 1]} << 8);
        if (u >= 0xD800 && u < 0xDC00) {
            if (i + 3 >= bytes.size()) throw DecodeError("unpaired high surrogate");
            std::uint32_t v = bytes[i + 2] | (std::uint32_t{bytes[i + 3]} << 8);
            if (v < 0xDC00 || v >= 0xE000) throw DecodeError("unpaired high surrogate");
            u = 0x10000 + ((u - 0xD800) << 10) + (v - 0xDC00);
            i += 2;
        } else if (u >= 0xDC00 && u < 0xE000) {
            throw DecodeError("unpaired low surrogate");
        }
        append_utf8(out, u);
    }
    return out;
}

bool name_char(std::uint8_t c) { return std::isalnum(c) || c == '.' || c == '_' || c == '-' || c == '/' || c == '+'; }

void collect_tokens(const std::string& run, std::vector<std::string>& out) {
    std::size_t i = 0;
    while (i < run.size()) {
        while (i < run.size() && !name_char(static_cast<std::uint8_t>(run[i]))) ++i;
        std::size_t j = i;
        while (j < run.size() && name_char(static_cast<std::uint8_t>(run[j]))) ++j;
        std::string tok = run.substr(i, j - i);
        if (tok.find(".so") != std::string::npos) out.push_back(tok);
        i = j;
    }
}

}  // namespace

bool CandidatePool::add(const std::string& text, const std::string& provenance) {
    if (text.empty() || contains(text)) return false;
    items_.push_back({text, provenance});
    return true;
}

std::vector<std::string> CandidatePool::names() const {
    std::vector<std::string> out;
    for (const auto& c : items_) out.push_back(c.text);
    return out;
}

bool CandidatePool::contains(const std::string& text) const {
    return std::any_of(items_.begin(), items_.end(), [&](const Candidate& c) { return c.text == text; });
}

std::vector<std::string> scan_library_strings(std::span<const std::uint8_t> bytes) {
    std::vector<std::string> out;
    // ascii runs terminated by NUL
    std::string run;
    for (std::uint8_t b : bytes) {
        if (b >= 0x20 && b < 0x7F) {
            run += static_cast<char>(b);
            continue;
        }
        if (b == 0 && run.size() >= 4) collect_tokens(run, out);
        run.clear();
    }
    // utf16le runs terminated by a zero unit
    for (std::size_t parity = 0; parity < 2; ++parity) {
        run.clear();
        for (std::size_t i = parity; i + 1 < bytes.size(); i += 2) {
            const std::uint8_t lo = bytes[i], hi = bytes[i + 1];
            if (hi == 0 && lo >= 0x20 && lo < 0x7F) {
                run += static_cast<char>(lo);
                continue;
            }
            if (hi == 0 && lo == 0 && run.size() >= 4) collect_tokens(run, out);
            run.clear();
        }
    }
    return out;
}

CandidatePool get_preloaded_candidates(SimState& s, const std::vector<std::string>& search_paths) {
    namespace fs = std::filesystem;
    CandidatePool pool;
    for (const auto& dir : search_paths) {
        std::error_code ec;
        std::vector<std::string> names;
        for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
            const std::string n = it->path().filename().string();
            if (n.size() > 3 && n.ends_with(".so") && it->is_regular_file(ec)) names.push_back(n);
        }
        if (ec) {
            s.log(EventKind::Warning, {{"what", "unreadable-search-path"}, {"path", dir}});
            continue;
        }
        std::sort(names.begin(), names.end());
        for (const auto& n : names) pool.add(n, "search-path");
        for (const auto& n : names) pool.add((fs::path(dir) / n).string(), "search-path");
    }
    for (const auto& img : s.images) {
        const char* prov = img.mechanism == "main" ? "binary-scan" : "library-scan";
        for (const auto& seg : img.image->segments)
            for (const auto& str : scan_library_strings(seg.data)) pool.add(str, prov);
    }
    for (const auto& c : s.config().extra_candidates) pool.add(c, "extra");
    return pool;
}

Extraction unified_string_extraction(SimState& s, const Expr& p, const CandidatePool& pool, std::size_t max_len,
                                     Encoding enc) {
    Extraction out;
    if (is_symbolic(p)) {
        out.kind = Extraction::SymbolicPointer;
        return out;
    }
    const std::uint64_t addr = simplify(p).value();
    const std::size_t unit = enc == Encoding::Ascii ? 1 : 2;
    bool concrete = true;
    bool terminated = false;
    for (std::size_t i = 0; i + unit <= std::max(max_len, unit); i += unit) {
        bool zero = true;
        for (std::size_t j = 0; j < unit; ++j) {
            Expr b = s.read_byte(addr + i + j);
            if (!b.is_const()) concrete = false, zero = false;
            else if (b.value() != 0) zero = false;
            out.data.push_back(std::move(b));
        }
        if (zero) {
            terminated = true;
            break;
        }
    }

    if (concrete) {
        if (!terminated) throw DecodeError("no terminator within " + std::to_string(max_len) + " bytes");
        std::vector<std::uint8_t> raw;
        for (std::size_t i = 0; i + unit < out.data.size(); ++i)
            raw.push_back(static_cast<std::uint8_t>(out.data[i].value()));
        out.kind = Extraction::ConcreteString;
        out.text = decode_units(raw, enc);
        return out;
    }

    for (const auto& c : pool.items()) {
        std::vector<std::uint8_t> want;
        try {
            want = encode_string(c.text, enc);
        } catch (const DecodeError&) {
            continue;
        }
        if (want.size() > out.data.size()) continue;
        Expr cond = bv(1, 1);
        for (std::size_t i = 0; i < want.size(); ++i) cond = land(cond, eq(out.data[i], bv(want[i], 8)));
        if (cond.is_const()) {
            if (cond.value() == 0) continue;
        } else {
            Expr one[] = {cond};
            if (!s.check(one).sat()) continue;
            s.add_constraint(cond);
        }
        out.kind = Extraction::ConcreteString;
        out.text = c.text;
        out.candidate_from = c.provenance;
        return out;
    }
    out.kind = Extraction::SymbolicString;
    return out;
}

Extraction unified_string_extraction(SimState& s, const Expr& p, std::size_t max_len, Encoding enc) {
    // The pool is only needed for symbolic data.
    if (is_symbolic(p)) return unified_string_extraction(s, p, CandidatePool{}, max_len, enc);
    bool symbolic = false;
    const std::uint64_t addr = simplify(p).value();
    const std::size_t unit = enc == Encoding::Ascii ? 1 : 2;
    for (std::size_t i = 0; i < max_len && !symbolic; i += unit) {
        bool zero = true;
        for (std::size_t j = 0; j < unit; ++j) {
            auto b = s.concrete_byte(addr + i + j);
            if (!b) symbolic = true;
            else if (*b) zero = false;
        }
        if (zero && !symbolic) break;
    }
    if (!symbolic) return unified_string_extraction(s, p, CandidatePool{}, max_len, enc);
    return unified_string_extraction(s, p, get_preloaded_candidates(s, s.config().search_paths), max_len, enc);
}

std::string load_mechanism(const std::string& fn, const std::string& path, const SimState& s) {
    if (fn == "__libc_dlopen_mode") return "internal-api";
    const std::string proc = "/proc/self/fd/";
    if (path.rfind(proc, 0) == 0) {
        try {
            const FdObject* f = s.fd(std::stoi(path.substr(proc.size())));
            if (f && f->kind == FdKind::Memfd) return "memfd-fileless";
        } catch (const std::exception&) {
        }
    }
    return "dlopen-variant";
}

namespace {

constexpr std::uint64_t kMinusOne = ~std::uint64_t{0};

std::uint64_t arg(SimState& s, unsigned i, const char* why) { return s.concretize(s.reg(i), why); }

void ret(SimState& s, std::uint64_t v) { s.set_reg(0, bv(v, 64)); }

// Result for an operation whose outcome the analysis cannot know.
void ret_unknown(SimState& s, const std::string& prefix) {
    if (s.config().concrete) ret(s, 0);
    else s.set_reg(0, s.fresh_var(prefix, 64, "hook"));
}

std::uint64_t alloc_string(SimState& s, const std::string& text) {
    const std::uint64_t p = s.heap_alloc(text.size() + 1);
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    bytes.push_back(0);
    s.write_bytes(p, bytes);
    return p;
}

void write_u64(SimState& s, std::uint64_t addr, std::uint64_t v) { s.write_mem(addr, bv(v, 64), s.current_site); }

std::optional<std::string> concrete_string(SimState& s, unsigned reg, const std::string& fn) {
    Extraction ex = unified_string_extraction(s, s.reg(reg), s.config().max_string);
    if (ex.concrete()) return ex.text;
    s.log(EventKind::Warning, {{"what", "unresolved-string"}, {"fn", fn}, {"kind", to_string(ex.kind)}});
    return std::nullopt;
}

std::string fd_key(const FdObject& f) { return f.kind == FdKind::Memfd ? "memfd:" + f.name : f.path; }

void bind_exports(SimState& s, const LoadedImage& li, const std::string& via) {
    for (const auto& sym : li.image->symbols) {
        if (sym.kind != SymbolKind::Function) continue;
        const std::uint64_t addr = li.base + sym.value;
        const std::string name = li.image->symbol_name(sym);
        s.store.bind_symbol(addr, {name, li.key, s.current_site, via, {}});
        s.log(EventKind::SymbolResolve,
              {{"symbol", name}, {"library", li.name}, {"addr", addr}, {"site", s.current_site}, {"via", via}});
    }
}

// ---------------------------------------------------------------- dynamic loading

void hook_dlopen(const HookRegistry& reg, SimState& s, const std::string& fn) {
    const unsigned path_reg = fn == "dlmopen" ? 1 : 0;
    const std::uint64_t site = s.current_site;
    Extraction ex = unified_string_extraction(s, s.reg(path_reg), s.config().max_string);
    check_taint_flow(s, fn, site, ex.data);
    if (!ex.concrete()) {
        s.log(EventKind::Warning, {{"what", "resolution-failure"}, {"fn", fn}, {"kind", to_string(ex.kind)}, {"site", site}});
        ret_unknown(s, "dlopen_fail");
        return;
    }
    s.log(EventKind::Hook, {{"fn", fn}, {"path", ex.text}, {"site", site}, {"candidate", ex.candidate_from}});
    try {
        const std::size_t before = s.images.size();
        LoadedImage li = dynamic_load(s, ex.text, load_mechanism(fn, ex.text, s), site);
        s.store.bind_handle(li.base, li.index);
        if (s.images.size() > before) reg.notify_load(s, li);
        ret(s, li.base);
    } catch (const std::exception& e) {
        s.log(EventKind::Warning, {{"what", "load-failure"}, {"fn", fn}, {"path", ex.text}, {"error", e.what()}});
        ret(s, 0);
    }
}

void hook_dlsym(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t site = s.current_site;
    const std::uint64_t handle = arg(s, 0, "dlsym handle");
    auto name = concrete_string(s, 1, fn);
    if (fn == "dlvsym") {
        auto version = concrete_string(s, 2, fn);
        s.log(EventKind::Hook, {{"fn", fn}, {"version", version.value_or("")}, {"note", "version ignored"}});
    }
    if (!name) {
        ret(s, 0);
        return;
    }
    std::vector<const LoadedImage*> scope;
    if (handle == 0) {
        for (const auto& li : s.images) scope.push_back(&li);
    } else if (auto idx = s.store.image_of_handle(handle); idx && *idx < s.images.size()) {
        scope.push_back(&s.images[*idx]);
    } else {
        s.log(EventKind::Warning, {{"what", "BadHandle"}, {"fn", fn}, {"handle", handle}, {"site", site}});
        ret(s, 0);
        return;
    }
    for (const LoadedImage* li : scope) {
        const SymbolEntry* sym = li->image->find_symbol(*name, SymbolKind::Function);
        if (!sym) continue;
        const std::uint64_t addr = li->base + sym->value;
        s.store.bind_symbol(addr, {*name, li->key, site, fn, {}});
        s.log(EventKind::SymbolResolve,
              {{"symbol", *name}, {"library", li->name}, {"addr", addr}, {"site", site}, {"via", fn}});
        ret(s, addr);
        return;
    }
    s.log(EventKind::Warning, {{"what", "unknown-symbol"}, {"fn", fn}, {"symbol", *name}});
    ret(s, 0);
}

void hook_dlclose(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t handle = arg(s, 0, "dlclose handle");
    s.log(EventKind::Hook, {{"fn", fn}, {"handle", handle}});
    ret(s, 0);
}

void hook_dladdr(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t addr = arg(s, 0, "dladdr addr");
    const std::uint64_t info = arg(s, 1, "dladdr info");
    const LoadedImage* li = s.image_containing(addr);
    if (!li) {
        ret(s, 0);
        return;
    }
    std::uint64_t sname = 0, saddr = 0;
    for (const auto& sym : li->image->symbols) {
        const std::uint64_t a = li->base + sym.value;
        if (a <= addr && a >= saddr) {
            saddr = a;
            sname = alloc_string(s, li->image->symbol_name(sym));
        }
    }
    write_u64(s, info, alloc_string(s, li->path));
    write_u64(s, info + 8, li->base);
    write_u64(s, info + 16, sname);
    write_u64(s, info + 24, saddr);
    s.log(EventKind::Hook, {{"fn", fn}, {"addr", addr}, {"library", li->name}});
    ret(s, 1);
}

void hook_dlinfo(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t handle = arg(s, 0, "dlinfo handle");
    const std::uint64_t out = arg(s, 2, "dlinfo arg");
    auto idx = s.store.image_of_handle(handle);
    if (!idx || *idx >= s.images.size()) {
        s.log(EventKind::Warning, {{"what", "BadHandle"}, {"fn", fn}, {"handle", handle}});
        ret(s, kMinusOne);
        return;
    }
    write_u64(s, out, s.images[*idx].base);
    ret(s, 0);
}

// ---------------------------------------------------------------- memory

void register_exec_image(const HookRegistry& reg, SimState& s, std::uint64_t base, const std::vector<std::uint8_t>& bytes,
                         const std::string& path, const std::string& key, const std::string& mechanism) {
    if (!looks_like_image(bytes)) {
        s.log(EventKind::Warning, {{"what", "exec-mapping-not-an-image"}, {"addr", base}, {"path", path}});
        return;
    }
    if (s.image_containing(base)) return;
    try {
        auto img = std::make_shared<const BinaryImage>(parse_image(bytes));
        LoadedImage li = load_image(s, std::move(img), path, key, mechanism, base, false);
        bind_exports(s, li, "manual");
        reg.notify_load(s, li);
    } catch (const ImageError& e) {
        s.log(EventKind::Warning, {{"what", "exec-mapping-parse-failure"}, {"addr", base}, {"error", e.what()}});
    }
}

void hook_mmap(const HookRegistry& reg, SimState& s, const std::string& fn) {
    const std::uint64_t site = s.current_site;
    const std::uint64_t len = arg(s, 1, "mmap len");
    const auto prot = static_cast<std::uint32_t>(arg(s, 2, "mmap prot"));
    const auto fd = static_cast<std::int64_t>(arg(s, 4, "mmap fd"));
    const std::uint64_t off = arg(s, 5, "mmap offset");
    if (len == 0 || len > (std::uint64_t{1} << 32)) {
        ret(s, kMinusOne);
        return;
    }
    const FdObject* f = nullptr;
    if (fd >= 0) {
        f = s.fd(static_cast<int>(fd));
        if (!f || f->kind == FdKind::Socket) {
            s.log(EventKind::Warning, {{"what", "BadFd"}, {"fn", fn}, {"fd", fd}});
            ret(s, kMinusOne);
            return;
        }
    }
    const std::uint64_t region = s.reserve_layout(len);
    std::string tag = "mmap";
    std::vector<std::uint8_t> bytes;
    std::string path, key;
    if (f) {
        key = fd_key(*f);
        path = s.store.path_of_fd(static_cast<int>(fd)).value_or(f->kind == FdKind::Memfd ? f->name : f->path);
        tag = "file:" + key;
        const auto& data = *f->backing;
        for (std::uint64_t i = off; i < data.size() && i - off < len; ++i)
            bytes.push_back(static_cast<std::uint8_t>(data[i].is_const() ? data[i].value() : s.eval(data[i])));
    }
    s.map_region(region, len, prot, tag);
    s.write_bytes(region, bytes);
    Expr args[] = {s.reg(0), s.reg(4)};
    check_taint_flow(s, fn, site, args);
    s.log(EventKind::Hook, {{"fn", fn}, {"addr", region}, {"len", len}, {"prot", prot}, {"fd", fd}, {"path", path}});
    if ((prot & kProtExec) && f) register_exec_image(reg, s, region, bytes, path, key, "mmap-exec");
    ret(s, region);
}

void hook_mprotect(const HookRegistry& reg, SimState& s, const std::string& fn) {
    const std::uint64_t addr = arg(s, 0, "mprotect addr");
    const std::uint64_t len = arg(s, 1, "mprotect len");
    const auto prot = static_cast<std::uint32_t>(arg(s, 2, "mprotect prot"));
    const Mapping* m = s.mapping_at(addr);
    if (!m) {
        ret(s, kMinusOne);
        return;
    }
    const std::string tag = m->tag;
    const std::uint32_t previous = s.protect(addr, len, prot);
    s.log(EventKind::Hook, {{"fn", fn}, {"addr", addr}, {"len", len}, {"prot", prot}, {"previous", previous}});
    if ((previous & kProtWrite) && (prot & kProtExec)) {
        s.log(EventKind::Hook, {{"fn", fn}, {"what", "w-to-x"}, {"addr", addr}, {"len", len}});
        std::string key = tag.rfind("file:", 0) == 0 ? tag.substr(5) : "anon:" + std::to_string(addr);
        std::string path = key;
        for (const auto& [n, p] : s.store.fd_to_path()) {
            const FdObject* f = s.fd(n);
            if (f && fd_key(*f) == key) path = p;
        }
        register_exec_image(reg, s, addr, s.peek_bytes(addr, len), path, key, "manual-load");
    }
    ret(s, 0);
}

void hook_mremap(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t old_addr = arg(s, 0, "mremap addr");
    const std::uint64_t old_len = arg(s, 1, "mremap old len");
    const std::uint64_t new_len = arg(s, 2, "mremap new len");
    const Mapping* m = s.mapping_at(old_addr);
    if (!m || new_len == 0 || new_len > (std::uint64_t{1} << 32)) {
        ret(s, kMinusOne);
        return;
    }
    const std::uint32_t perms = m->perms;
    const std::string tag = m->tag;
    const std::uint64_t region = s.reserve_layout(new_len);
    s.map_region(region, new_len, kProtRead | kProtWrite, tag);
    for (std::uint64_t i = 0; i < std::min(old_len, new_len); ++i) {
        Expr b = s.read_byte(old_addr + i);
        s.write_mem(region + i, b, s.current_site);
    }
    s.protect(region, new_len, perms);
    s.unmap(old_addr, old_len);
    s.log(EventKind::Hook, {{"fn", fn}, {"from", old_addr}, {"to", region}, {"len", new_len}});
    ret(s, region);
}

void hook_memfd_create(const HookRegistry&, SimState& s, const std::string& fn) {
    auto name = concrete_string(s, 0, fn);
    FdObject f;
    f.kind = FdKind::Memfd;
    f.name = name.value_or("anon");
    f.backing = std::make_shared<std::vector<Expr>>();
    const int fd = s.alloc_fd(std::move(f));
    s.log(EventKind::Hook, {{"fn", fn}, {"name", name.value_or("anon")}, {"fd", fd}});
    ret(s, static_cast<std::uint64_t>(fd));
}

// ---------------------------------------------------------------- process and security

void hook_exec(const HookRegistry&, SimState& s, const std::string& fn) {
    std::string path;
    if (fn == "fexecve") {
        const int fd = static_cast<int>(arg(s, 0, "fexecve fd"));
        path = s.store.path_of_fd(fd).value_or("fd:" + std::to_string(fd));
    } else {
        path = concrete_string(s, fn == "execveat" ? 1 : 0, fn).value_or("<symbolic>");
    }
    s.log(EventKind::ProcessReplace, {{"fn", fn}, {"path", path}, {"site", s.current_site}});
    s.status = StateStatus::Finished;
    s.status_reason = "process-replaced";
}

void hook_clone(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t child = 1000 + s.clone_counter++;
    s.log(EventKind::Hook, {{"fn", fn}, {"child", child}});
    ret(s, child);
}

void hook_ptrace(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t request = arg(s, 0, "ptrace request");
    s.log(EventKind::AntiDebug, {{"fn", fn}, {"request", request}, {"site", s.current_site}});
    ret(s, 0);
}

void hook_prctl(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t option = arg(s, 0, "prctl option");
    s.log(EventKind::Hook, {{"fn", fn}, {"option", option}});
    ret(s, 0);
}

void set_env(SimState& s, const std::string& name, const std::string& value) {
    s.env[name] = value;
    s.symbolic_env.erase(name);
}

void hook_setenv(const HookRegistry&, SimState& s, const std::string& fn) {
    auto name = concrete_string(s, 0, fn);
    auto value = concrete_string(s, 1, fn);
    const std::uint64_t overwrite = arg(s, 2, "setenv overwrite");
    if (!name || !value || name->empty() || name->find('=') != std::string::npos) {
        ret(s, kMinusOne);
        return;
    }
    if (overwrite || !s.env.count(*name)) set_env(s, *name, *value);
    s.log(EventKind::Hook, {{"fn", fn}, {"name", *name}, {"value", *value}});
    ret(s, 0);
}

void hook_putenv(const HookRegistry&, SimState& s, const std::string& fn) {
    auto text = concrete_string(s, 0, fn);
    const auto eqpos = text ? text->find('=') : std::string::npos;
    if (eqpos == std::string::npos || eqpos == 0) {
        ret(s, kMinusOne);
        return;
    }
    set_env(s, text->substr(0, eqpos), text->substr(eqpos + 1));
    s.log(EventKind::Hook, {{"fn", fn}, {"entry", *text}});
    ret(s, 0);
}

void hook_process_vm_writev(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t pid = arg(s, 0, "process_vm_writev pid");
    const std::uint64_t remote = arg(s, 3, "process_vm_writev remote iov");
    const std::uint64_t target = s.concrete_u64(remote).value_or(0);
    const std::uint64_t len = s.concrete_u64(remote + 8).value_or(0);
    s.log(EventKind::Hook, {{"fn", fn}, {"what", "injection"}, {"pid", pid}, {"target", target}, {"len", len}});
    ret(s, len);
}

// ---------------------------------------------------------------- network

FdObject* socket_fd(SimState& s, std::int64_t fd) {
    FdObject* f = fd >= 0 ? s.fd(static_cast<int>(fd)) : nullptr;
    return f && f->kind == FdKind::Socket ? f : nullptr;
}

void hook_socket(const HookRegistry&, SimState& s, const std::string& fn) {
    FdObject f;
    f.kind = FdKind::Socket;
    f.backing = std::make_shared<std::vector<Expr>>();
    const int fd = s.alloc_fd(std::move(f));
    s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}});
    ret(s, static_cast<std::uint64_t>(fd));
}

void hook_socket_op(const HookRegistry&, SimState& s, const std::string& fn) {
    const auto fd = static_cast<std::int64_t>(arg(s, 0, "socket fd"));
    if (!socket_fd(s, fd)) {
        s.log(EventKind::Warning, {{"what", "BadFd"}, {"fn", fn}, {"fd", fd}});
        ret(s, kMinusOne);
        return;
    }
    s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}});
    ret(s, 0);
}

void hook_accept(const HookRegistry&, SimState& s, const std::string& fn) {
    const auto fd = static_cast<std::int64_t>(arg(s, 0, "accept fd"));
    if (!socket_fd(s, fd)) {
        ret(s, kMinusOne);
        return;
    }
    FdObject f;
    f.kind = FdKind::Socket;
    f.peer = static_cast<int>(fd);
    f.backing = std::make_shared<std::vector<Expr>>();
    const int nfd = s.alloc_fd(std::move(f));
    s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}, {"accepted", nfd}});
    ret(s, static_cast<std::uint64_t>(nfd));
}

void hook_recv(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t site = s.current_site;
    const auto fd = static_cast<std::int64_t>(arg(s, 0, "recv fd"));
    const std::uint64_t buf = arg(s, 1, "recv buf");
    const std::uint64_t len = std::min<std::uint64_t>(arg(s, 2, "recv len"), 4096);
    FdObject* f = socket_fd(s, fd);
    if (!f) {
        s.log(EventKind::Warning, {{"what", "BadFd"}, {"fn", fn}, {"fd", fd}});
        ret(s, kMinusOne);
        return;
    }
    if (s.config().concrete) {
        const auto& net = s.config().witness_network;
        std::uint64_t n = 0;
        while (n < len && f->cursor < net.size()) s.write_mem(buf + n++, bv(net[f->cursor++], 8), site);
        s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}, {"len", n}, {"site", site}});
        ret(s, n);
        return;
    }
    const EventRecord& ev = s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}, {"len", len}, {"site", site}});
    const std::uint64_t birth = ev.seq;
    std::vector<std::string> names;
    for (std::uint64_t k = 0; k < len; ++k) {
        std::string name = "net_" + std::to_string(fd) + "_" + std::to_string(f->recv_count++);
        s.write_mem(buf + k, var(name, 8, "network"), site);
        names.push_back(std::move(name));
    }
    for (auto& n : names) s.taints[n] = TaintTag{TaintOrigin::Network, std::to_string(fd), s.steps, birth, fn, site};
    ret(s, len);
}

void hook_send(const HookRegistry&, SimState& s, const std::string& fn) {
    const auto fd = static_cast<std::int64_t>(arg(s, 0, "send fd"));
    const std::uint64_t buf = arg(s, 1, "send buf");
    const std::uint64_t len = std::min<std::uint64_t>(arg(s, 2, "send len"), 4096);
    if (!socket_fd(s, fd)) {
        s.log(EventKind::Warning, {{"what", "BadFd"}, {"fn", fn}, {"fd", fd}});
        ret(s, kMinusOne);
        return;
    }
    std::string payload;
    for (std::uint64_t i = 0; i < len && i < 64; ++i) payload += s.read_byte(buf + i).to_string() + " ";
    s.log(EventKind::Hook, {{"fn", fn}, {"fd", fd}, {"len", len}, {"payload", payload}});
    ret(s, len);
}

// ---------------------------------------------------------------- files and signals

void hook_open(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t site = s.current_site;
    const std::uint64_t fail = fn == "fopen" ? 0 : kMinusOne;
    Extraction ex = unified_string_extraction(s, s.reg(fn == "openat" ? 1 : 0), s.config().max_string);
    check_taint_flow(s, fn, site, ex.data);
    if (!ex.concrete()) {
        s.log(EventKind::Warning, {{"what", "resolution-failure"}, {"fn", fn}, {"kind", to_string(ex.kind)}});
        ret(s, fail);
        return;
    }
    auto resolved = resolve_host_path(s.config(), ex.text);
    auto data = resolved ? read_host_file(*resolved) : std::nullopt;
    if (!data) {
        s.log(EventKind::Warning, {{"what", "NotFound"}, {"fn", fn}, {"path", ex.text}});
        ret(s, fail);
        return;
    }
    FdObject f;
    f.kind = FdKind::File;
    f.path = *resolved;
    auto backing = std::make_shared<std::vector<Expr>>();
    backing->reserve(data->size());
    for (std::uint8_t b : *data) backing->push_back(bv(b, 8));
    f.backing = std::move(backing);
    const int fd = s.alloc_fd(std::move(f));
    s.store.bind_fd(fd, ex.text);
    s.log(EventKind::Hook, {{"fn", fn}, {"path", ex.text}, {"fd", fd}, {"site", site}});
    ret(s, static_cast<std::uint64_t>(fd));
}

void hook_sigaction(const HookRegistry&, SimState& s, const std::string& fn) {
    const std::uint64_t sig = arg(s, 0, "sigaction signal");
    const std::uint64_t handler = arg(s, 1, "sigaction handler");
    if (handler > 1 && std::find(s.pending_signals.begin(), s.pending_signals.end(), handler) == s.pending_signals.end())
        s.pending_signals.push_back(handler);
    s.log(EventKind::Signal, {{"fn", fn}, {"signal", sig}, {"handler", handler}, {"site", s.current_site}});
    ret(s, 0);
}

void hook_getenv(const HookRegistry&, SimState& s, const std::string& fn) {
    auto name = concrete_string(s, 0, fn);
    if (!name) {
        ret(s, 0);
        return;
    }
    if (auto it = s.env.find(*name); it != s.env.end()) {
        ret(s, alloc_string(s, it->second));
        return;
    }
    if (s.config().concrete) {
        auto it = s.config().witness_env.find(*name);
        ret(s, it == s.config().witness_env.end() ? 0 : alloc_string(s, it->second));
        return;
    }
    if (auto it = s.symbolic_env.find(*name); it != s.symbolic_env.end()) {
        ret(s, it->second);
        return;
    }
    const std::size_t n = s.config().max_string;
    const std::uint64_t p = s.heap_alloc(n + 1);
    const EventRecord& ev = s.log(EventKind::Hook, {{"fn", fn}, {"name", *name}, {"symbolic_bytes", n}});
    const std::uint64_t birth = ev.seq;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string v = "env_" + *name + "_" + std::to_string(i);
        s.write_mem(p + i, var(v, 8, "env"), s.current_site);
        s.taints[v] = TaintTag{TaintOrigin::Env, *name, s.steps, birth, fn, s.current_site};
    }
    s.symbolic_env[*name] = p;
    ret(s, p);
}

void hook_default(SimState& s, const std::string& fn) {
    s.log(EventKind::Warning, {{"what", "unhooked-import"}, {"fn", fn}});
    ret_unknown(s, "ret_" + fn);
}

}  // namespace

const std::vector<std::string>& HookRegistry::intercepted() {
    static const std::vector<std::string> names = {
        "dlopen", "dlsym",   "dlclose", "dlmopen", "dlvsym",   "dladdr", "dlinfo",   "mmap",    "mmap64",
        "mprotect", "mremap", "memfd_create", "execve", "execveat", "fexecve", "clone", "clone3", "ptrace",
        "prctl",  "setenv",  "putenv",  "process_vm_writev", "socket", "connect", "recv", "recvfrom", "send",
        "sendto", "bind",    "listen",  "accept",  "open",     "openat", "fopen",    "sigaction", "__libc_dlopen_mode",
    };
    return names;
}

const std::vector<std::string>& HookRegistry::plumbing() {
    static const std::vector<std::string> names = {"getenv"};
    return names;
}

HookRegistry::HookRegistry(LoadObserver on_load) : on_load_(std::move(on_load)) {
    auto bind = [this](const std::string& name, void (*f)(const HookRegistry&, SimState&, const std::string&)) {
        procs_[name] = [f, name](const HookRegistry& r, SimState& s) { f(r, s, name); };
    };
    for (const char* n : {"dlopen", "dlmopen", "__libc_dlopen_mode"}) bind(n, hook_dlopen);
    for (const char* n : {"dlsym", "dlvsym"}) bind(n, hook_dlsym);
    bind("dlclose", hook_dlclose);
    bind("dladdr", hook_dladdr);
    bind("dlinfo", hook_dlinfo);
    for (const char* n : {"mmap", "mmap64"}) bind(n, hook_mmap);
    bind("mprotect", hook_mprotect);
    bind("mremap", hook_mremap);
    bind("memfd_create", hook_memfd_create);
    for (const char* n : {"execve", "execveat", "fexecve"}) bind(n, hook_exec);
    for (const char* n : {"clone", "clone3"}) bind(n, hook_clone);
    bind("ptrace", hook_ptrace);
    bind("prctl", hook_prctl);
    bind("setenv", hook_setenv);
    bind("putenv", hook_putenv);
    bind("process_vm_writev", hook_process_vm_writev);
    bind("socket", hook_socket);
    for (const char* n : {"connect", "bind", "listen"}) bind(n, hook_socket_op);
    bind("accept", hook_accept);
    for (const char* n : {"recv", "recvfrom"}) bind(n, hook_recv);
    for (const char* n : {"send", "sendto"}) bind(n, hook_send);
    for (const char* n : {"open", "openat", "fopen"}) bind(n, hook_open);
    bind("sigaction", hook_sigaction);
    bind("getenv", hook_getenv);
}

void HookRegistry::call(SimState& s, const std::string& name) {
    auto it = procs_.find(name);
    if (it == procs_.end()) hook_default(s, name);
    else it->second(*this, s);
}

std::vector<std::string> HookRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : procs_) out.push_back(n);
    return out;
}

}  // namespace dyncfg
