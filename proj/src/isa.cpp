#include "dyncfg/isa.hpp"

#include <cstring>

namespace dyncfg {

namespace {

struct OpInfo {
    Opcode op;
    const char* name;
};

constexpr OpInfo kOps[] = {
    {Opcode::Halt, "halt"},   {Opcode::Movi, "movi"},   {Opcode::Mov, "mov"},         {Opcode::Add, "add"},
    {Opcode::Sub, "sub"},     {Opcode::Xor, "xor"},     {Opcode::And, "and"},         {Opcode::Or, "or"},
    {Opcode::Shl, "shl"},     {Opcode::Shr, "shr"},     {Opcode::Mul, "mul"},         {Opcode::Ld8, "ld8"},
    {Opcode::Ld16, "ld16"},   {Opcode::Ld32, "ld32"},   {Opcode::Ld64, "ld64"},       {Opcode::St8, "st8"},
    {Opcode::St16, "st16"},   {Opcode::St32, "st32"},   {Opcode::St64, "st64"},       {Opcode::Jmp, "jmp"},
    {Opcode::Jmpr, "jmpr"},   {Opcode::Beq, "beq"},     {Opcode::Bne, "bne"},         {Opcode::Bltu, "bltu"},
    {Opcode::Blts, "blts"},   {Opcode::Call, "call"},   {Opcode::Callr, "callr"},     {Opcode::Callimp, "callimp"},
    {Opcode::Ret, "ret"},     {Opcode::Push, "push"},   {Opcode::Pop, "pop"},         {Opcode::Syscall, "syscall"},
};

}  // namespace

bool valid_opcode(std::uint8_t b) {
    for (const auto& o : kOps)
        if (static_cast<std::uint8_t>(o.op) == b) return true;
    return false;
}

std::optional<Instruction> decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kInsnSize || !valid_opcode(bytes[0])) return std::nullopt;
    Instruction in;
    in.op = static_cast<Opcode>(bytes[0]);
    in.rd = bytes[1];
    in.rs1 = bytes[2];
    in.rs2 = bytes[3];
    if (in.rd >= 16 || in.rs1 >= 16 || in.rs2 >= 16) return std::nullopt;
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= std::uint32_t{bytes[4 + i]} << (8 * i);
    std::memcpy(&in.imm, &u, 4);
    return in;
}

std::array<std::uint8_t, kInsnSize> encode(const Instruction& in) {
    std::uint32_t u;
    std::memcpy(&u, &in.imm, 4);
    return {static_cast<std::uint8_t>(in.op),
            in.rd,
            in.rs1,
            in.rs2,
            static_cast<std::uint8_t>(u),
            static_cast<std::uint8_t>(u >> 8),
            static_cast<std::uint8_t>(u >> 16),
            static_cast<std::uint8_t>(u >> 24)};
}

const char* mnemonic(Opcode op) {
    for (const auto& o : kOps)
        if (o.op == op) return o.name;
    return "?";
}

std::optional<Opcode> opcode_from_mnemonic(std::string_view m) {
    for (const auto& o : kOps)
        if (m == o.name) return o.op;
    return std::nullopt;
}

unsigned mem_width(Opcode op) {
    switch (op) {
        case Opcode::Ld8:
        case Opcode::St8: return 1;
        case Opcode::Ld16:
        case Opcode::St16: return 2;
        case Opcode::Ld32:
        case Opcode::St32: return 4;
        case Opcode::Ld64:
        case Opcode::St64: return 8;
        default: return 0;
    }
}

bool is_load(Opcode op) { return op >= Opcode::Ld8 && op <= Opcode::Ld64; }
bool is_store(Opcode op) { return op >= Opcode::St8 && op <= Opcode::St64; }
bool is_cond_branch(Opcode op) { return op >= Opcode::Beq && op <= Opcode::Blts; }
bool is_call(Opcode op) { return op == Opcode::Call || op == Opcode::Callr || op == Opcode::Callimp; }

bool is_control(const Instruction& in) {
    switch (in.op) {
        case Opcode::Halt:
        case Opcode::Jmp:
        case Opcode::Jmpr:
        case Opcode::Beq:
        case Opcode::Bne:
        case Opcode::Bltu:
        case Opcode::Blts:
        case Opcode::Call:
        case Opcode::Callr:
        case Opcode::Callimp:
        case Opcode::Ret: return true;
        case Opcode::Syscall: return in.imm == kSysExit;
        default: return false;
    }
}

std::string disassemble(const Instruction& in) {
    auto r = [](unsigned n) { return "r" + std::to_string(n); };
    std::string m = mnemonic(in.op);
    const std::string imm = std::to_string(in.imm);
    switch (in.op) {
        case Opcode::Halt:
        case Opcode::Ret: return m;
        case Opcode::Movi: return m + " " + r(in.rd) + ", " + imm;
        case Opcode::Mov: return m + " " + r(in.rd) + ", " + r(in.rs1);
        case Opcode::Jmp:
        case Opcode::Call:
        case Opcode::Callimp:
        case Opcode::Syscall: return m + " " + imm;
        case Opcode::Jmpr:
        case Opcode::Callr:
        case Opcode::Push: return m + " " + r(in.rs1);
        case Opcode::Pop: return m + " " + r(in.rd);
        case Opcode::Beq:
        case Opcode::Bne:
        case Opcode::Bltu:
        case Opcode::Blts: return m + " " + r(in.rs1) + ", " + r(in.rs2) + ", " + imm;
        default:
            if (is_load(in.op)) return m + " " + r(in.rd) + ", [" + r(in.rs1) + "+" + imm + "]";
            if (is_store(in.op)) return m + " [" + r(in.rs1) + "+" + imm + "], " + r(in.rs2);
            return m + " " + r(in.rd) + ", " + r(in.rs1) + ", " + r(in.rs2);
    }
}

}  // namespace dyncfg
