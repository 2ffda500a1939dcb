#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace dyncfg {

// Fixed 8-byte encoding: opcode, rd, rs1, rs2, imm32 (little-endian).
enum class Opcode : std::uint8_t {
    Halt = 0x00,
    Movi = 0x01,
    Mov = 0x03,
    Add = 0x04,
    Sub = 0x05,
    Xor = 0x06,
    And = 0x07,
    Or = 0x08,
    Shl = 0x09,
    Shr = 0x0A,
    Mul = 0x0B,
    Ld8 = 0x10,
    Ld16 = 0x11,
    Ld32 = 0x12,
    Ld64 = 0x13,
    St8 = 0x14,
    St16 = 0x15,
    St32 = 0x16,
    St64 = 0x17,
    Jmp = 0x20,
    Jmpr = 0x21,
    Beq = 0x22,
    Bne = 0x23,
    Bltu = 0x24,
    Blts = 0x25,
    Call = 0x26,
    Callr = 0x27,
    Callimp = 0x28,
    Ret = 0x29,
    Push = 0x2A,
    Pop = 0x2B,
    Syscall = 0x30,
};

inline constexpr std::size_t kInsnSize = 8;

enum Syscall : std::int32_t { kSysRead = 0, kSysWrite = 1, kSysTime = 2, kSysExit = 3 };

struct Instruction {
    Opcode op = Opcode::Halt;
    std::uint8_t rd = 0;
    std::uint8_t rs1 = 0;
    std::uint8_t rs2 = 0;
    std::int32_t imm = 0;

    bool operator==(const Instruction&) const = default;
};

std::optional<Instruction> decode(std::span<const std::uint8_t> bytes);
std::array<std::uint8_t, kInsnSize> encode(const Instruction& in);

const char* mnemonic(Opcode op);
std::optional<Opcode> opcode_from_mnemonic(std::string_view m);
bool valid_opcode(std::uint8_t b);

// Access width in bytes for loads and stores, 0 otherwise.
unsigned mem_width(Opcode op);
bool is_load(Opcode op);
bool is_store(Opcode op);
bool is_cond_branch(Opcode op);
bool is_call(Opcode op);  // CALL, CALLR, CALLIMP
// Ends a basic block.
bool is_control(const Instruction& in);
// Target of a pc-relative JMP/branch/CALL at `site`.
inline std::uint64_t rel_target(std::uint64_t site, std::int32_t imm) {
    return site + kInsnSize + static_cast<std::uint64_t>(static_cast<std::int64_t>(imm));
}

std::string disassemble(const Instruction& in);

}  // namespace dyncfg
