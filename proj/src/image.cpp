#include "dyncfg/image.hpp"

#include <algorithm>
#include <cstring>
#include <set>

namespace dyncfg {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'B', 'F', '1'};

std::uint64_t rd(std::span<const std::uint8_t> b, std::size_t off, int n) {
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | b[off + static_cast<std::size_t>(i)];
    return v;
}

void wr(std::vector<std::uint8_t>& b, std::size_t off, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

[[noreturn]] void fail(ImageErrc code, const std::string& msg) {
    throw ImageError(code, std::string(to_string(code)) + ": " + msg);
}

std::uint64_t align8(std::uint64_t v) { return (v + 7) & ~std::uint64_t{7}; }

bool name_valid(const std::vector<std::uint8_t>& strtab, std::uint32_t off) {
    if (off >= strtab.size()) return false;
    return std::find(strtab.begin() + off, strtab.end(), std::uint8_t{0}) != strtab.end();
}

}  // namespace

const char* to_string(ImageErrc code) {
    switch (code) {
        case ImageErrc::BadMagic: return "BadMagic";
        case ImageErrc::BadVersion: return "BadVersion";
        case ImageErrc::TruncatedFile: return "TruncatedFile";
        case ImageErrc::OverlappingSegments: return "OverlappingSegments";
        case ImageErrc::DanglingName: return "DanglingName";
        case ImageErrc::InvariantViolation: return "InvariantViolation";
    }
    return "?";
}

std::string_view BinaryImage::name_at(std::uint32_t off) const {
    if (!name_valid(string_table, off)) return {};
    const char* p = reinterpret_cast<const char*>(string_table.data()) + off;
    return std::string_view(p, std::strlen(p));
}

std::string BinaryImage::import_name(std::size_t ordinal) const {
    if (ordinal >= imports.size()) return {};
    return std::string(name_at(imports[ordinal].name_off));
}

std::optional<std::size_t> BinaryImage::import_ordinal(std::string_view name) const {
    for (std::size_t i = 0; i < imports.size(); ++i)
        if (name_at(imports[i].name_off) == name) return i;
    return std::nullopt;
}

const SymbolEntry* BinaryImage::find_symbol(std::string_view name, std::optional<SymbolKind> kind) const {
    for (const auto& s : symbols) {
        if (kind && s.kind != *kind) continue;
        if (name_at(s.name_off) == name) return &s;
    }
    return nullptr;
}

std::uint64_t BinaryImage::span() const {
    std::uint64_t end = 0;
    for (const auto& s : segments) end = std::max(end, s.vaddr + s.mem_size);
    return end;
}

const Segment* BinaryImage::segment_containing(std::uint64_t rel) const {
    for (const auto& s : segments)
        if (rel >= s.vaddr && rel < s.vaddr + s.mem_size) return &s;
    return nullptr;
}

void BinaryImage::validate() const {
    if (type != ImageType::Executable && type != ImageType::Library)
        fail(ImageErrc::InvariantViolation, "unknown image type");
    if (type == ImageType::Library && entry != 0) fail(ImageErrc::InvariantViolation, "library entry must be 0");

    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& s : segments) {
        if (s.file_size > s.mem_size) fail(ImageErrc::InvariantViolation, "segment file_size exceeds mem_size");
        if (s.data.size() != s.file_size) fail(ImageErrc::InvariantViolation, "segment data length mismatch");
        if (s.vaddr + s.mem_size < s.vaddr) fail(ImageErrc::InvariantViolation, "segment wraps address space");
        if (s.mem_size) ranges.emplace_back(s.vaddr, s.vaddr + s.mem_size);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second)
            fail(ImageErrc::OverlappingSegments, "segments overlap in virtual address space");

    for (const auto& sym : symbols) {
        if (!name_valid(string_table, sym.name_off)) fail(ImageErrc::DanglingName, "symbol name offset");
        if (sym.kind != SymbolKind::Function && sym.kind != SymbolKind::Object)
            fail(ImageErrc::InvariantViolation, "unknown symbol kind");
        if (!segment_containing(sym.value))
            fail(ImageErrc::InvariantViolation, "symbol '" + symbol_name(sym) + "' outside every segment");
        if (sym.kind == SymbolKind::Function && sym.value % 8 != 0)
            fail(ImageErrc::InvariantViolation, "function symbol '" + symbol_name(sym) + "' not 8-byte aligned");
    }
    std::set<std::string_view> seen;
    for (const auto& imp : imports) {
        if (!name_valid(string_table, imp.name_off)) fail(ImageErrc::DanglingName, "import name offset");
        if (!seen.insert(name_at(imp.name_off)).second)
            fail(ImageErrc::InvariantViolation, "duplicate import '" + std::string(name_at(imp.name_off)) + "'");
    }
}

bool looks_like_image(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= kHeaderSize && std::equal(kMagic, kMagic + 4, bytes.begin());
}

BinaryImage parse_image(std::span<const std::uint8_t> b) {
    if (b.size() < 4 || !std::equal(kMagic, kMagic + 4, b.begin())) {
        if (b.size() < 4) fail(ImageErrc::TruncatedFile, "file shorter than magic");
        fail(ImageErrc::BadMagic, "expected \"SBF1\"");
    }
    if (b.size() < kHeaderSize) fail(ImageErrc::TruncatedFile, "file shorter than header");
    if (rd(b, 0x04, 2) != kFormatVersion) fail(ImageErrc::BadVersion, "unsupported version " + std::to_string(rd(b, 4, 2)));
    for (std::size_t i = 0x30; i < 0x40; ++i)
        if (b[i] != 0) fail(ImageErrc::InvariantViolation, "reserved header bytes must be zero");

    BinaryImage img;
    auto type = rd(b, 0x06, 2);
    if (type > 1) fail(ImageErrc::InvariantViolation, "unknown image type " + std::to_string(type));
    img.type = static_cast<ImageType>(type);
    img.entry = rd(b, 0x08, 8);

    auto table = [&](std::size_t off_field, std::size_t count_field, std::size_t entry_size) {
        std::uint64_t off = rd(b, off_field, 4);
        std::uint64_t count = rd(b, count_field, 4);
        if (off + count * entry_size > b.size()) fail(ImageErrc::TruncatedFile, "table extends past end of file");
        return std::pair{off, count};
    };
    auto [seg_off, seg_count] = table(0x10, 0x14, kSegmentEntrySize);
    auto [sym_off, sym_count] = table(0x18, 0x1C, kSymbolEntrySize);
    auto [imp_off, imp_count] = table(0x20, 0x24, kImportEntrySize);
    auto [str_off, str_size] = table(0x28, 0x2C, 1);

    img.string_table.assign(b.begin() + static_cast<std::ptrdiff_t>(str_off),
                            b.begin() + static_cast<std::ptrdiff_t>(str_off + str_size));

    for (std::uint64_t i = 0; i < seg_count; ++i) {
        std::size_t at = seg_off + i * kSegmentEntrySize;
        Segment s;
        s.vaddr = rd(b, at, 8);
        s.mem_size = static_cast<std::uint32_t>(rd(b, at + 8, 4));
        s.file_off = static_cast<std::uint32_t>(rd(b, at + 12, 4));
        s.file_size = static_cast<std::uint32_t>(rd(b, at + 16, 4));
        s.flags = static_cast<std::uint32_t>(rd(b, at + 20, 4));
        if (std::uint64_t{s.file_off} + s.file_size > b.size())
            fail(ImageErrc::TruncatedFile, "segment data extends past end of file");
        s.data.assign(b.begin() + s.file_off, b.begin() + s.file_off + s.file_size);
        img.segments.push_back(std::move(s));
    }
    for (std::uint64_t i = 0; i < sym_count; ++i) {
        std::size_t at = sym_off + i * kSymbolEntrySize;
        SymbolEntry s;
        s.name_off = static_cast<std::uint32_t>(rd(b, at, 4));
        s.kind = static_cast<SymbolKind>(rd(b, at + 4, 4));
        s.value = rd(b, at + 8, 8);
        img.symbols.push_back(s);
    }
    for (std::uint64_t i = 0; i < imp_count; ++i) {
        std::size_t at = imp_off + i * kImportEntrySize;
        if (rd(b, at + 4, 4) != 0) fail(ImageErrc::InvariantViolation, "import reserved field must be zero");
        img.imports.push_back({static_cast<std::uint32_t>(rd(b, at, 4))});
    }
    img.validate();
    return img;
}

std::vector<std::uint8_t> emit_image(const BinaryImage& img) {
    img.validate();
    const std::size_t seg_off = kHeaderSize;
    const std::size_t sym_off = seg_off + img.segments.size() * kSegmentEntrySize;
    const std::size_t imp_off = sym_off + img.symbols.size() * kSymbolEntrySize;
    const std::size_t str_off = imp_off + img.imports.size() * kImportEntrySize;
    const std::size_t tables_end = str_off + img.string_table.size();

    std::size_t total = tables_end;
    std::vector<std::pair<std::size_t, std::size_t>> data_ranges;
    for (const auto& s : img.segments) {
        if (s.file_size == 0) continue;
        if (s.file_off < tables_end) fail(ImageErrc::InvariantViolation, "segment data overlaps header tables");
        data_ranges.emplace_back(s.file_off, s.file_off + s.file_size);
        total = std::max<std::size_t>(total, s.file_off + s.file_size);
    }
    std::sort(data_ranges.begin(), data_ranges.end());
    for (std::size_t i = 1; i < data_ranges.size(); ++i)
        if (data_ranges[i].first < data_ranges[i - 1].second)
            fail(ImageErrc::InvariantViolation, "segment file ranges overlap");

    std::vector<std::uint8_t> out(total, 0);
    std::copy(kMagic, kMagic + 4, out.begin());
    wr(out, 0x04, kFormatVersion, 2);
    wr(out, 0x06, static_cast<std::uint16_t>(img.type), 2);
    wr(out, 0x08, img.entry, 8);
    wr(out, 0x10, seg_off, 4);
    wr(out, 0x14, img.segments.size(), 4);
    wr(out, 0x18, sym_off, 4);
    wr(out, 0x1C, img.symbols.size(), 4);
    wr(out, 0x20, imp_off, 4);
    wr(out, 0x24, img.imports.size(), 4);
    wr(out, 0x28, str_off, 4);
    wr(out, 0x2C, img.string_table.size(), 4);

    for (std::size_t i = 0; i < img.segments.size(); ++i) {
        const auto& s = img.segments[i];
        std::size_t at = seg_off + i * kSegmentEntrySize;
        wr(out, at, s.vaddr, 8);
        wr(out, at + 8, s.mem_size, 4);
        wr(out, at + 12, s.file_off, 4);
        wr(out, at + 16, s.file_size, 4);
        wr(out, at + 20, s.flags, 4);
        std::copy(s.data.begin(), s.data.end(), out.begin() + s.file_off);
    }
    for (std::size_t i = 0; i < img.symbols.size(); ++i) {
        std::size_t at = sym_off + i * kSymbolEntrySize;
        wr(out, at, img.symbols[i].name_off, 4);
        wr(out, at + 4, static_cast<std::uint32_t>(img.symbols[i].kind), 4);
        wr(out, at + 8, img.symbols[i].value, 8);
    }
    for (std::size_t i = 0; i < img.imports.size(); ++i) wr(out, imp_off + i * kImportEntrySize, img.imports[i].name_off, 4);
    std::copy(img.string_table.begin(), img.string_table.end(), out.begin() + str_off);
    return out;
}

// ---------------------------------------------------------------------------

std::uint32_t ImageBuilder::intern(std::string_view name) {
    auto& st = img_.string_table;
    // reuse an identical, already-present string
    std::size_t pos = 0;
    while (pos < st.size()) {
        const char* p = reinterpret_cast<const char*>(st.data()) + pos;
        std::size_t len = std::strlen(p);
        if (std::string_view(p, len) == name) return static_cast<std::uint32_t>(pos);
        pos += len + 1;
    }
    auto off = static_cast<std::uint32_t>(st.size());
    st.insert(st.end(), name.begin(), name.end());
    st.push_back(0);
    return off;
}

std::size_t ImageBuilder::add_import(std::string_view name) {
    if (auto o = img_.import_ordinal(name)) return *o;
    img_.imports.push_back({intern(name)});
    return img_.imports.size() - 1;
}

void ImageBuilder::add_symbol(std::string_view name, SymbolKind kind, std::uint64_t value) {
    img_.symbols.push_back({intern(name), kind, value});
}

std::size_t ImageBuilder::add_segment(std::uint32_t flags, std::vector<std::uint8_t> data, std::uint32_t bss) {
    pending_.push_back({flags, std::move(data), bss});
    return pending_.size() - 1;
}

std::uint64_t ImageBuilder::data_start(std::size_t nsym) const {
    std::size_t n = kHeaderSize + pending_.size() * kSegmentEntrySize + nsym * kSymbolEntrySize +
                    img_.imports.size() * kImportEntrySize + img_.string_table.size();
    return align8(n);
}

std::vector<std::uint64_t> ImageBuilder::plan_segments(std::span<const std::size_t> sizes,
                                                       std::size_t symbol_count) const {
    std::size_t n = kHeaderSize + sizes.size() * kSegmentEntrySize + symbol_count * kSymbolEntrySize +
                    img_.imports.size() * kImportEntrySize + img_.string_table.size();
    std::uint64_t at = align8(n);
    std::vector<std::uint64_t> out;
    for (auto sz : sizes) {
        out.push_back(at);
        at += align8(sz);
    }
    return out;
}

BinaryImage ImageBuilder::finish() const {
    BinaryImage img = img_;
    std::uint64_t start = data_start(img.symbols.size());
    // pad the string table so segment data starts 8-aligned
    std::size_t tables_end = kHeaderSize + pending_.size() * kSegmentEntrySize +
                             img.symbols.size() * kSymbolEntrySize + img.imports.size() * kImportEntrySize;
    img.string_table.resize(start - tables_end, 0);

    std::uint64_t at = start;
    for (std::size_t i = 0; i < pending_.size(); ++i) {
        const auto& p = pending_[i];
        if (p.bss && i + 1 != pending_.size())
            throw ImageError(ImageErrc::InvariantViolation, "bss only allowed on the last segment");
        Segment s;
        s.flags = p.flags;
        s.data = p.data;
        if (i + 1 != pending_.size()) s.data.resize(align8(s.data.size()), 0);
        s.vaddr = at;
        s.file_off = static_cast<std::uint32_t>(at);
        s.file_size = static_cast<std::uint32_t>(s.data.size());
        s.mem_size = s.file_size + p.bss;
        at += s.data.size();
        img.segments.push_back(std::move(s));
    }
    img.validate();
    return img;
}

}  // namespace dyncfg
