#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dyncfg/image.hpp"
#include "dyncfg/isa.hpp"

namespace dyncfg {

enum class EdgeKind { Fallthrough, Branch, Call, Return, ResolvedIndirect, ImportStub, Indirect };

const char* to_string(EdgeKind k);

// Control transfer observed at run time, with both ends expressed as
// (image identity, image-relative offset) so it survives relocation.
struct DynamicEdge {
    std::string src_key;
    std::uint64_t src_off = 0;
    std::string dst_key;
    std::uint64_t dst_off = 0;
    EdgeKind kind = EdgeKind::Indirect;
    std::string symbol;

    auto operator<=>(const DynamicEdge&) const = default;
};

struct CfgImage {
    std::shared_ptr<const BinaryImage> image;
    std::uint64_t base = 0;
    std::string key;
    std::string name;

    std::uint64_t end() const { return base + image->span(); }
};

// Main image at 0x400000, every further image at the next 0x100000-aligned base.
std::vector<CfgImage> layout_images(std::vector<CfgImage> images);

struct BasicBlock {
    std::uint64_t start = 0;
    std::uint32_t count = 0;    // instructions
    std::size_t image = 0;      // index into Cfg::images
    bool stub = false;          // import stub pseudo-node
    std::string label;          // stub: import name
    Opcode terminator = Opcode::Halt;
    bool ends_in_control = false;

    std::uint64_t end() const { return start + count * kInsnSize; }
};

struct CfgEdge {
    std::uint64_t src = 0;
    std::uint64_t dst = 0;
    EdgeKind kind = EdgeKind::Fallthrough;

    auto operator<=>(const CfgEdge&) const = default;
};

struct Cfg {
    std::vector<CfgImage> images;
    std::map<std::uint64_t, BasicBlock> blocks;  // includes stubs
    std::set<CfgEdge> edges;
    std::set<std::uint64_t> functions;
    std::vector<std::string> warnings;

    const BasicBlock* block_containing(std::uint64_t addr) const;
    std::size_t image_of(std::uint64_t addr) const;  // npos when outside every image
};

struct CfgMetrics {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t functions = 0;
    std::size_t loaded_objects = 0;

    bool operator==(const CfgMetrics&) const = default;
};

struct RecoverOptions {
    bool imports_resolved = false;
    std::vector<std::uint64_t> extra_roots;
    // Observed targets for indirect terminators, keyed by site address.
    std::map<std::uint64_t, std::set<std::pair<std::uint64_t, EdgeKind>>> indirect;
};

// Instruction stored at absolute address `addr` of `img`, if any.
std::optional<Instruction> fetch_instruction(const CfgImage& img, std::uint64_t addr);

Cfg recover_static(const std::vector<CfgImage>& images, const RecoverOptions& opts = {});
Cfg build_module_cfg(const std::vector<CfgImage>& images, const std::set<DynamicEdge>& dynamic_edges);
CfgMetrics metrics(const Cfg& c);
std::string to_dot(const Cfg& c);

}  // namespace dyncfg
