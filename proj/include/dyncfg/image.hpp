#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dyncfg {

// SBF ("simple binary format") container. All multi-byte fields little-endian.
//
//   header   64 bytes   magic "SBF1", version, type, entry, table offsets/counts
//   segment  24 bytes   vaddr u64, mem_size u32, file_off u32, file_size u32, flags u32
//   symbol   16 bytes   name_off u32, kind u32, value u64
//   import    8 bytes   name_off u32, reserved u32
//   strings             NUL-terminated, indexed by name_off

inline constexpr std::size_t kHeaderSize = 64;
inline constexpr std::size_t kSegmentEntrySize = 24;
inline constexpr std::size_t kSymbolEntrySize = 16;
inline constexpr std::size_t kImportEntrySize = 8;
inline constexpr std::uint16_t kFormatVersion = 1;

enum class ImageType : std::uint16_t { Executable = 0, Library = 1 };

enum SegmentFlags : std::uint32_t {
    kSegRead = 1u << 0,
    kSegWrite = 1u << 1,
    kSegExec = 1u << 2,
};

struct Segment {
    std::uint64_t vaddr = 0;
    std::uint32_t mem_size = 0;
    std::uint32_t file_off = 0;
    std::uint32_t file_size = 0;
    std::uint32_t flags = 0;
    std::vector<std::uint8_t> data;  // file_size bytes

    bool executable() const { return (flags & kSegExec) != 0; }
    bool operator==(const Segment&) const = default;
};

enum class SymbolKind : std::uint32_t { Function = 0, Object = 1 };

struct SymbolEntry {
    std::uint32_t name_off = 0;
    SymbolKind kind = SymbolKind::Function;
    std::uint64_t value = 0;
    bool operator==(const SymbolEntry&) const = default;
};

struct ImportEntry {
    std::uint32_t name_off = 0;
    bool operator==(const ImportEntry&) const = default;
};

enum class ImageErrc {
    BadMagic,
    BadVersion,
    TruncatedFile,
    OverlappingSegments,
    DanglingName,
    InvariantViolation,
};

class ImageError : public std::runtime_error {
public:
    ImageError(ImageErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ImageErrc code() const noexcept { return code_; }

private:
    ImageErrc code_;
};

const char* to_string(ImageErrc code);

struct BinaryImage {
    ImageType type = ImageType::Executable;
    std::uint64_t entry = 0;
    std::vector<Segment> segments;
    std::vector<SymbolEntry> symbols;
    std::vector<ImportEntry> imports;
    std::vector<std::uint8_t> string_table;

    std::string_view name_at(std::uint32_t off) const;
    std::string symbol_name(const SymbolEntry& s) const { return std::string(name_at(s.name_off)); }
    std::string import_name(std::size_t ordinal) const;
    std::optional<std::size_t> import_ordinal(std::string_view name) const;
    const SymbolEntry* find_symbol(std::string_view name, std::optional<SymbolKind> kind = {}) const;

    // Highest image-relative address covered by any segment (exclusive).
    std::uint64_t span() const;
    const Segment* segment_containing(std::uint64_t rel) const;

    // Throws ImageError(InvariantViolation / OverlappingSegments / DanglingName).
    void validate() const;

    bool operator==(const BinaryImage&) const = default;
};

BinaryImage parse_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> emit_image(const BinaryImage& img);

bool looks_like_image(std::span<const std::uint8_t> bytes);

// Assembles an image with the canonical layout: tables packed after the header,
// string table padded with NULs to an 8-byte boundary, segment data contiguous
// afterwards with vaddr == file_off so a raw file mapping equals a proper load.
class ImageBuilder {
public:
    explicit ImageBuilder(ImageType type) { img_.type = type; }

    std::uint32_t intern(std::string_view name);
    std::size_t add_import(std::string_view name);
    void add_symbol(std::string_view name, SymbolKind kind, std::uint64_t value);
    // Segment placement is decided by finish(); `bss` extends mem_size of the last segment only.
    std::size_t add_segment(std::uint32_t flags, std::vector<std::uint8_t> data, std::uint32_t bss = 0);
    void set_entry(std::uint64_t entry) { img_.entry = entry; }

    // Image-relative vaddr each segment would receive if `symbol_count` symbols are
    // eventually added. All names must already be interned.
    std::vector<std::uint64_t> plan_segments(std::span<const std::size_t> sizes, std::size_t symbol_count) const;

    BinaryImage finish() const;

private:
    struct PendingSegment {
        std::uint32_t flags;
        std::vector<std::uint8_t> data;
        std::uint32_t bss;
    };
    std::uint64_t data_start(std::size_t nsym) const;

    BinaryImage img_;
    std::vector<PendingSegment> pending_;
};

}  // namespace dyncfg
