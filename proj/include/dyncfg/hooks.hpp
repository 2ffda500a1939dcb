#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncfg/engine.hpp"
#include "dyncfg/state.hpp"

namespace dyncfg {

enum class Encoding { Ascii, Utf16le };

const char* to_string(Encoding e);

// Bytes of `text` in `enc`, including the terminating NUL.
std::vector<std::uint8_t> encode_string(const std::string& text, Encoding enc);

class DecodeError : public std::runtime_error {
public:
    explicit DecodeError(const std::string& what) : std::runtime_error("DecodeError: " + what) {}
};

struct Extraction {
    enum Kind { ConcreteString, SymbolicPointer, SymbolicString };

    Kind kind = SymbolicPointer;
    std::string text;           // ConcreteString
    std::vector<Expr> data;     // SymbolicString: the unresolved bytes
    std::string candidate_from; // provenance when resolved from the pool

    bool concrete() const { return kind == ConcreteString; }
};

const char* to_string(Extraction::Kind k);

struct Candidate {
    std::string text;
    std::string provenance;  // search-path, binary-scan, library-scan, extra
};

class CandidatePool {
public:
    // Appends unless already present.
    bool add(const std::string& text, const std::string& provenance);
    const std::vector<Candidate>& items() const { return items_; }
    std::vector<std::string> names() const;
    bool contains(const std::string& text) const;
    std::size_t size() const { return items_.size(); }

private:
    std::vector<Candidate> items_;
};

// NUL-terminated strings (ascii and utf16le) containing ".so".
std::vector<std::string> scan_library_strings(std::span<const std::uint8_t> bytes);

// Search-path files, then strings embedded in the main image, then strings in loaded libraries,
// then configured extras.
CandidatePool get_preloaded_candidates(SimState& s, const std::vector<std::string>& search_paths);

Extraction unified_string_extraction(SimState& s, const Expr& p, const CandidatePool& pool, std::size_t max_len = 256,
                                     Encoding enc = Encoding::Ascii);
// Pool built from the state's configuration.
Extraction unified_string_extraction(SimState& s, const Expr& p, std::size_t max_len = 256,
                                     Encoding enc = Encoding::Ascii);

// Memory regions handed out to hooks live in the layout area so images and mappings never overlap.
inline constexpr std::uint32_t kProtRead = 1, kProtWrite = 2, kProtExec = 4;

class HookRegistry : public HookHandler {
public:
    using Procedure = std::function<void(const HookRegistry&, SimState&)>;
    using LoadObserver = std::function<void(const SimState&, const LoadedImage&)>;

    explicit HookRegistry(LoadObserver on_load = {});

    void call(SimState& s, const std::string& name) override;

    bool has(const std::string& name) const { return procs_.count(name) != 0; }
    std::vector<std::string> names() const;
    // The intercepted functions named in the interception table plus the dlopen alias.
    static const std::vector<std::string>& intercepted();
    static const std::vector<std::string>& plumbing();

    void notify_load(const SimState& s, const LoadedImage& li) const {
        if (on_load_) on_load_(s, li);
    }

private:
    std::map<std::string, Procedure> procs_;
    LoadObserver on_load_;
};

// Mechanism label for a load through a dlopen-like entry point.
std::string load_mechanism(const std::string& fn, const std::string& path, const SimState& s);

}  // namespace dyncfg
