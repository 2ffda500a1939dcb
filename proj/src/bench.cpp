#include "dyncfg/bench.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dyncfg/asm.hpp"

namespace dyncfg {

nlohmann::json GroundTruth::to_json() const {
    return {{"benchmark", benchmark},
            {"mechanism", mechanism},
            {"expected_libraries", expected_libraries},
            {"expected_min_objects", expected_min_objects}};
}

GroundTruth GroundTruth::from_json(const nlohmann::json& j) {
    GroundTruth g;
    g.benchmark = j.at("benchmark").get<std::string>();
    g.mechanism = j.at("mechanism").get<std::string>();
    g.expected_libraries = j.at("expected_libraries").get<std::vector<std::string>>();
    g.expected_min_objects = j.at("expected_min_objects").get<std::size_t>();
    return g;
}

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (auto b : bytes) {
        out += digits[b >> 4];
        out += digits[b & 15];
    }
    return out;
}

std::vector<std::uint8_t> from_hex(const std::string& hex) {
    if (hex.size() % 2) throw std::invalid_argument("odd-length hex string");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < hex.size(); i += 2) out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    return out;
}

nlohmann::json Witness::to_json() const {
    nlohmann::json j = {{"env", env}, {"network", to_hex(network)}};
    j["time"] = time ? nlohmann::json(*time) : nlohmann::json(nullptr);
    return j;
}

Witness Witness::from_json(const nlohmann::json& j) {
    Witness w;
    if (j.contains("env")) w.env = j.at("env").get<std::map<std::string, std::string>>();
    if (j.contains("network")) w.network = from_hex(j.at("network").get<std::string>());
    if (j.contains("time") && !j.at("time").is_null()) w.time = j.at("time").get<std::uint64_t>();
    return w;
}

nlohmann::json SuiteManifest::to_json() const {
    return {{"dir", dir}, {"benchmarks", benchmarks}, {"fixtures", fixtures}};
}

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream o;
    o << "0x" << std::hex << v;
    return o.str();
}

std::string bytes_directive(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    for (std::size_t i = 0; i < bytes.size(); i += 16) {
        out += "    .bytes";
        for (std::size_t j = i; j < std::min(bytes.size(), i + 16); ++j) out += " " + hex(bytes[j]);
        out += "\n";
    }
    return out;
}

// Payload function body: writes an 8-byte marker to stdout and returns it.
std::string marker_body(std::uint32_t marker) {
    return "    movi r1, " + hex(marker) + "\n"
           "    push r1\n"
           "    mov r1, sp\n"
           "    movi r0, 1\n"
           "    movi r2, 8\n"
           "    syscall 1\n"
           "    pop r1\n";
}

std::string payload_lib(const std::string& fn, std::uint32_t marker) {
    return ".type lib\n"
           ".export " + fn + " func\n"
           ".seg rx\n" +
           fn + ":\n" + marker_body(marker) +
           "    movi r2, 3\n"
           "    bltu r0, r2, " + fn + "_short\n"
           "    movi r0, " + hex(marker) + "\n"
           "    ret\n" +
           fn + "_short:\n"
           "    movi r0, 0\n"
           "    ret\n";
}

// A library whose export writes its marker and then loads `next` and calls `next_fn` in it.
std::string chain_lib(const std::string& fn, std::uint32_t marker, const std::string& next, const std::string& next_fn) {
    return ".type lib\n"
           ".import dlopen\n"
           ".import dlsym\n"
           ".export " + fn + " func\n"
           ".seg rx\n" +
           fn + ":\n" + marker_body(marker) +
           "    call get_pc\n"
           "here1:\n"
           "    movi r1, next_name-here1\n"
           "    add r0, r0, r1\n"
           "    movi r1, 2\n"
           "    callimp dlopen\n"
           "    movi r9, 0\n"
           "    beq r0, r9, out\n"
           "    mov r7, r0\n"
           "    call get_pc\n"
           "here2:\n"
           "    movi r1, next_sym-here2\n"
           "    add r1, r0, r1\n"
           "    mov r0, r7\n"
           "    callimp dlsym\n"
           "    beq r0, r9, out\n"
           "    callr r0\n"
           "out:\n"
           "    ret\n"
           "get_pc:\n"
           "    ld64 r0, [sp+0]\n"
           "    ret\n"
           ".seg r\n"
           "next_name: .str \"" + next + "\"\n"
           "next_sym: .str \"" + next_fn + "\"\n";
}

const std::string kExeHead =
    ".type exe\n"
    ".entry main\n"
    ".export main func\n";

// dlopen(r0 = path label) through `loader`, dlsym(sym label), call. Uses r9 as zero.
std::string open_and_call(const std::string& tag, const std::string& path_expr, const std::string& sym_label,
                          const std::string& loader = "dlopen") {
    return "    movi r9, 0\n"
           "    movi r0, " + path_expr + "\n"
           "    movi r1, 2\n"
           "    callimp " + loader + "\n"
           "    beq r0, r9, " + tag + "_fail\n"
           "    movi r1, " + sym_label + "\n"
           "    callimp dlsym\n"
           "    beq r0, r9, " + tag + "_fail\n"
           "    callr r0\n" +
           tag + "_fail:\n";
}

// Copies the NUL-terminated string at r1 to r2, leaving r2 at the terminator.
std::string copy_loop(const std::string& tag) {
    return tag + ":\n"
           "    ld8 r3, [r1+0]\n"
           "    st8 [r2+0], r3\n"
           "    beq r3, r9, " + tag + "_done\n"
           "    movi r4, 1\n"
           "    add r1, r1, r4\n"
           "    add r2, r2, r4\n"
           "    jmp " + tag + "\n" +
           tag + "_done:\n";
}

struct Draft {
    std::string name;
    std::string mechanism;
    std::vector<std::pair<std::string, std::string>> libs;  // file, source
    std::string main;
    Witness witness;
    std::vector<std::string> expected;
};

Benchmark finish(Draft d) {
    Benchmark b;
    b.name = d.name;
    b.main_source = d.main;
    try {
        b.main = assemble(d.main);
        for (auto& [file, src] : d.libs) b.libs.emplace_back(file, assemble(src));
    } catch (const AsmError& e) {
        throw std::logic_error(d.name + ": " + e.what());
    }
    b.truth.benchmark = d.name;
    b.truth.mechanism = d.mechanism;
    b.truth.expected_libraries = d.expected;
    b.truth.expected_min_objects = 1 + d.expected.size();
    b.witness = std::move(d.witness);
    return b;
}

std::uint64_t export_offset(const BinaryImage& img, const std::string& name) {
    const SymbolEntry* s = img.find_symbol(name, SymbolKind::Function);
    if (!s) throw std::logic_error("missing export " + name);
    return s->value;
}

std::uint64_t file_size_rounded(const BinaryImage& img) {
    const std::size_t n = emit_image(img).size();
    return (n + 0xFFF) / 0x1000 * 0x1000;
}

Benchmark simple_dlopen() {
    Draft d{"simple_dlopen", "dlopen-variant", {{"libpayload.so", payload_lib("payload", 0x5101)}}, "", {}, {"libpayload.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n" +
             open_and_call("l", "libname", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libpayload.so\"\n"
             "symname: .str \"payload\"\n";
    return finish(d);
}

Benchmark environment_path() {
    Draft d{"environment_path", "dlopen-variant", {{"libenv.so", payload_lib("env_entry", 0x5102)}}, "", {}, {"libenv.so"}};
    d.main = kExeHead +
             ".import getenv\n"
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r0, envname\n"
             "    callimp getenv\n"
             "    beq r0, r9, fail\n"
             "    mov r1, r0\n"
             "    movi r2, pathbuf\n" +
             copy_loop("prefix") +
             "    movi r1, suffix\n" + copy_loop("tail") +
             open_and_call("l", "pathbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             "fail:\n"
             "    movi r0, 1\n"
             "    ret\n"
             ".seg r\n"
             "envname: .str \"LIB_DIR\"\n"
             "suffix: .str \"/libenv.so\"\n"
             "symname: .str \"env_entry\"\n"
             ".seg rw\n"
             "pathbuf: .zero 512\n";
    d.witness.env["LIB_DIR"] = ".";
    return finish(d);
}

Benchmark xor_encrypted() {
    const std::string name = "libxor.so";
    const std::uint8_t key = 0x5A;
    std::vector<std::uint8_t> blob;
    for (char c : name) blob.push_back(static_cast<std::uint8_t>(c) ^ key);
    blob.push_back(key);
    Draft d{"xor_encrypted", "dlopen-variant", {{name, payload_lib("xor_entry", 0x5103)}}, "", {}, {name}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r1, blob\n"
             "    movi r2, pathbuf\n"
             "    movi r5, " + std::to_string(blob.size()) + "\n"
             "    movi r6, " + hex(key) + "\n"
             "decrypt:\n"
             "    ld8 r3, [r1+0]\n"
             "    xor r3, r3, r6\n"
             "    st8 [r2+0], r3\n"
             "    movi r4, 1\n"
             "    add r1, r1, r4\n"
             "    add r2, r2, r4\n"
             "    sub r5, r5, r4\n"
             "    bne r5, r9, decrypt\n" +
             open_and_call("l", "pathbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "symname: .str \"xor_entry\"\n"
             "blob:\n" + bytes_directive(blob) +
             ".seg rw\n"
             "pathbuf: .zero 64\n";
    return finish(d);
}

Benchmark computed_path() {
    const std::string name = "libcomputed.so";
    Draft d{"computed_path", "dlopen-variant", {{name, payload_lib("computed_entry", 0x5104)}}, "", {}, {name}};
    std::string build = "    movi r8, pathbuf\n";
    for (std::size_t i = 0; i <= name.size(); ++i) {
        const int c = i < name.size() ? static_cast<unsigned char>(name[i]) : 0;
        const int k = static_cast<int>((i * 7) % 13) + 1;
        build += "    movi r1, " + std::to_string(c + k) + "\n"
                 "    movi r2, " + std::to_string(k) + "\n"
                 "    sub r1, r1, r2\n"
                 "    st8 [r8+" + std::to_string(i) + "], r1\n";
    }
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n" + build + open_and_call("l", "pathbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "symname: .str \"computed_entry\"\n"
             ".seg rw\n"
             "pathbuf: .zero 64\n";
    return finish(d);
}

Benchmark multi_stage() {
    Draft d{"multi_stage",
            "dlopen-variant",
            {{"libstage1.so", chain_lib("stage1_entry", 0x5105, "libstage2.so", "stage2_entry")},
             {"libstage2.so", chain_lib("stage2_entry", 0x5106, "libstage3.so", "stage3_entry")},
             {"libstage3.so", payload_lib("stage3_entry", 0x5107)}},
            "",
            {},
            {"libstage1.so", "libstage2.so", "libstage3.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n" +
             open_and_call("l", "libname", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libstage1.so\"\n"
             "symname: .str \"stage1_entry\"\n";
    return finish(d);
}

Benchmark stack_strings() {
    const std::string name = "libstack.so";
    Draft d{"stack_strings", "dlopen-variant", {{name, payload_lib("stack_entry", 0x5108)}}, "", {}, {name}};
    std::string build = "    movi r4, 64\n    sub sp, sp, r4\n";
    for (std::size_t i = 0; i <= name.size(); ++i) {
        const int c = i < name.size() ? static_cast<unsigned char>(name[i]) : 0;
        build += "    movi r1, " + std::to_string(c) + "\n"
                 "    st8 [sp+" + std::to_string(i) + "], r1\n";
    }
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n" + build +
             "    movi r9, 0\n"
             "    mov r0, sp\n"
             "    movi r1, 2\n"
             "    callimp dlopen\n"
             "    beq r0, r9, done\n"
             "    movi r1, symname\n"
             "    callimp dlsym\n"
             "    beq r0, r9, done\n"
             "    callr r0\n"
             "done:\n"
             "    movi r4, 64\n"
             "    add sp, sp, r4\n"
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "symname: .str \"stack_entry\"\n";
    return finish(d);
}

Benchmark time_triggered() {
    Draft d{"time_triggered", "dlopen-variant", {{"libtime.so", payload_lib("time_entry", 0x5109)}}, "", {}, {"libtime.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    syscall 2\n"
             "    movi r1, 0x60000000\n"
             "    bltu r0, r1, dormant\n" +
             open_and_call("l", "libname", "symname") +
             "dormant:\n"
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libtime.so\"\n"
             "symname: .str \"time_entry\"\n";
    d.witness.time = 0x70000000;
    return finish(d);
}

Benchmark anti_debug() {
    Draft d{"anti_debug", "internal-api", {{"libguard.so", payload_lib("guard_entry", 0x510A)}}, "", {}, {"libguard.so"}};
    d.main = kExeHead +
             ".import ptrace\n"
             ".import __libc_dlopen_mode\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r0, 0\n"
             "    movi r1, 0\n"
             "    movi r2, 0\n"
             "    movi r3, 0\n"
             "    callimp ptrace\n"
             "    movi r9, 0\n"
             "    bne r0, r9, traced\n" +
             open_and_call("l", "libname", "symname", "__libc_dlopen_mode") +
             "    movi r0, 0\n"
             "    ret\n"
             "traced:\n"
             "    movi r0, 1\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libguard.so\"\n"
             "symname: .str \"guard_entry\"\n";
    return finish(d);
}

Benchmark memfd_create() {
    const std::string lib = payload_lib("memfd_entry", 0x510B);
    const auto blob = emit_image(assemble(lib));
    Draft d{"memfd_create", "memfd-fileless", {{"libmemfd.so", lib}}, "", {}, {"libmemfd.so"}};
    d.main = kExeHead +
             ".import memfd_create\n"
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r0, memname\n"
             "    movi r1, 0\n"
             "    callimp memfd_create\n"
             "    mov r7, r0\n"
             "    movi r1, blob\n"
             "    movi r2, " + std::to_string(blob.size()) + "\n"
             "    syscall 1\n"
             "    movi r1, prefix\n"
             "    movi r2, pathbuf\n" +
             copy_loop("copy") +
             "    movi r4, '0'\n"
             "    add r3, r7, r4\n"
             "    st8 [r2+0], r3\n"
             "    st8 [r2+1], r9\n" +
             open_and_call("l", "pathbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "memname: .str \"libmemfd.so\"\n"
             "prefix: .str \"/proc/self/fd/\"\n"
             "symname: .str \"memfd_entry\"\n"
             ".align 8\n"
             "blob:\n" + bytes_directive(blob) +
             ".seg rw\n"
             "pathbuf: .zero 64\n";
    return finish(d);
}

Benchmark indirect_call() {
    Draft d{"indirect_call", "dlopen-variant", {{"libindirect.so", payload_lib("indirect_entry", 0x510C)}}, "", {}, {"libindirect.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             ".export invoke func\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r0, libname\n"
             "    movi r1, 2\n"
             "    callimp dlopen\n"
             "    beq r0, r9, done\n"
             "    movi r1, symname\n"
             "    callimp dlsym\n"
             "    movi r1, slot\n"
             "    st64 [r1+0], r0\n"
             "    call invoke\n"
             "done:\n"
             "    movi r0, 0\n"
             "    ret\n"
             "invoke:\n"
             "    movi r1, slot\n"
             "    ld64 r2, [r1+0]\n"
             "    beq r2, r9, skip\n"
             "    callr r2\n"
             "skip:\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libindirect.so\"\n"
             "symname: .str \"indirect_entry\"\n"
             ".seg rw\n"
             "slot: .u64 0\n";
    return finish(d);
}

Benchmark multi_encoding() {
    Draft d{"multi_encoding", "dlopen-variant", {{"libwide.so", payload_lib("wide_entry", 0x510D)}}, "", {}, {"libwide.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r1, widename\n"
             "    movi r2, pathbuf\n"
             "narrow:\n"
             "    ld16 r3, [r1+0]\n"
             "    st8 [r2+0], r3\n"
             "    beq r3, r9, narrow_done\n"
             "    movi r4, 2\n"
             "    add r1, r1, r4\n"
             "    movi r4, 1\n"
             "    add r2, r2, r4\n"
             "    jmp narrow\n"
             "narrow_done:\n" +
             open_and_call("l", "pathbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             ".seg r\n"
             "widename: .wstr \"libwide.so\"\n"
             "symname: .str \"wide_entry\"\n"
             ".seg rw\n"
             "pathbuf: .zero 64\n";
    return finish(d);
}

Benchmark manual_elf_load() {
    const std::string lib = payload_lib("manual_entry", 0x510E);
    const std::uint64_t size = file_size_rounded(assemble(lib));
    Draft d{"manual_elf_load", "manual-load", {{"libmanual.so", lib}}, "", {}, {"libmanual.so"}};
    d.main = kExeHead +
             ".import open\n"
             ".import mmap\n"
             ".import mprotect\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r0, libname\n"
             "    movi r1, 0\n"
             "    callimp open\n"
             "    movi r8, -1\n"
             "    beq r0, r8, fail\n"
             "    mov r7, r0\n"
             "    movi r0, 0\n"
             "    movi r1, " + hex(size) + "\n"
             "    movi r2, 3\n"
             "    movi r3, 2\n"
             "    mov r4, r7\n"
             "    movi r5, 0\n"
             "    callimp mmap\n"
             "    beq r0, r8, fail\n"
             "    mov r8, r0\n"
             "    movi r1, " + hex(size) + "\n"
             "    movi r2, 5\n"
             "    callimp mprotect\n"
             // symbol table offset in the header, then the first symbol's value
             "    ld32 r1, [r8+0x18]\n"
             "    add r1, r1, r8\n"
             "    ld64 r2, [r1+8]\n"
             "    add r2, r2, r8\n"
             "    callr r2\n"
             "    movi r0, 0\n"
             "    ret\n"
             "fail:\n"
             "    movi r0, 1\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libmanual.so\"\n";
    return finish(d);
}

Benchmark mmap_exec() {
    const std::string lib = payload_lib("mapped_entry", 0x510F);
    const BinaryImage img = assemble(lib);
    const std::uint64_t size = file_size_rounded(img);
    const std::uint64_t off = export_offset(img, "mapped_entry");
    Draft d{"mmap_exec", "mmap-exec", {{"libmmap.so", lib}}, "", {}, {"libmmap.so"}};
    d.main = kExeHead +
             ".import open\n"
             ".import mmap\n"
             "main:\n"
             "    movi r0, libname\n"
             "    movi r1, 0\n"
             "    callimp open\n"
             "    movi r8, -1\n"
             "    beq r0, r8, fail\n"
             "    mov r4, r0\n"
             "    movi r0, 0\n"
             "    movi r1, " + hex(size) + "\n"
             "    movi r2, 5\n"
             "    movi r3, 2\n"
             "    movi r5, 0\n"
             "    callimp mmap\n"
             "    beq r0, r8, fail\n"
             "    movi r1, " + hex(off) + "\n"
             "    add r1, r0, r1\n"
             "    callr r1\n"
             "    movi r0, 0\n"
             "    ret\n"
             "fail:\n"
             "    movi r0, 1\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"libmmap.so\"\n";
    return finish(d);
}

Benchmark rop_chain() {
    Draft d{"rop_chain", "dlopen-variant", {{"librop.so", payload_lib("rop_gadget", 0x5110)}}, "", {}, {"librop.so"}};
    d.main = kExeHead +
             ".import dlopen\n"
             ".import dlsym\n"
             ".export pivot func\n"
             "main:\n"
             "    movi r9, 0\n"
             "    movi r0, libname\n"
             "    movi r1, 2\n"
             "    callimp dlopen\n"
             "    beq r0, r9, done\n"
             "    movi r1, symname\n"
             "    callimp dlsym\n"
             "    beq r0, r9, done\n"
             "    call pivot\n"
             "done:\n"
             "    movi r0, 0\n"
             "    ret\n"
             "pivot:\n"
             "    push r0\n"
             "    ret\n"
             ".seg r\n"
             "libname: .str \"librop.so\"\n"
             "symname: .str \"rop_gadget\"\n";
    return finish(d);
}

Benchmark signal_handler() {
    Draft d{"signal_handler",
            "dlopen-variant",
            {{"libsigmain.so", payload_lib("sigmain_entry", 0x5111)},
             {"libhandler.so", payload_lib("handler_entry", 0x5112)},
             {"libdeferred.so", payload_lib("deferred_entry", 0x5113)}},
            "",
            {},
            {"libsigmain.so", "libhandler.so", "libdeferred.so"}};
    d.main = kExeHead +
             ".import sigaction\n"
             ".import dlopen\n"
             ".import dlsym\n"
             ".export on_signal func\n"
             "main:\n"
             "    movi r0, 10\n"
             "    movi r1, on_signal\n"
             "    movi r2, 0\n"
             "    callimp sigaction\n" +
             open_and_call("m", "mainlib", "mainsym") +
             "    movi r0, 0\n"
             "    ret\n"
             "on_signal:\n" +
             open_and_call("h", "handlerlib", "handlersym") + open_and_call("d", "deferredlib", "deferredsym") +
             "    ret\n"
             ".seg r\n"
             "mainlib: .str \"libsigmain.so\"\n"
             "mainsym: .str \"sigmain_entry\"\n"
             "handlerlib: .str \"libhandler.so\"\n"
             "handlersym: .str \"handler_entry\"\n"
             "deferredlib: .str \"libdeferred.so\"\n"
             "deferredsym: .str \"deferred_entry\"\n";
    return finish(d);
}

Benchmark network_socket() {
    const std::string name = "libnet.so";
    Draft d{"network_socket", "dlopen-variant", {{name, payload_lib("net_entry", 0x5114)}}, "", {}, {name}};
    d.main = kExeHead +
             ".import socket\n"
             ".import connect\n"
             ".import recv\n"
             ".import dlopen\n"
             ".import dlsym\n"
             "main:\n"
             "    movi r0, 2\n"
             "    movi r1, 1\n"
             "    movi r2, 0\n"
             "    callimp socket\n"
             "    mov r7, r0\n"
             "    movi r1, peer\n"
             "    movi r2, 16\n"
             "    callimp connect\n"
             "    movi r9, 0\n"
             "    bne r0, r9, fail\n"
             "    mov r0, r7\n"
             "    movi r1, netbuf\n"
             "    movi r2, 64\n"
             "    movi r3, 0\n"
             "    callimp recv\n"
             "    beq r0, r9, fail\n" +
             open_and_call("l", "netbuf", "symname") +
             "    movi r0, 0\n"
             "    ret\n"
             "fail:\n"
             "    movi r0, 1\n"
             "    ret\n"
             ".seg r\n"
             "symname: .str \"net_entry\"\n"
             "peer: .bytes 2 0 0x1f 0x90 10 0 0 1 0 0 0 0 0 0 0 0\n"
             ".seg rw\n"
             "netbuf: .zero 256\n";
    d.witness.network.assign(name.begin(), name.end());
    d.witness.network.push_back(0);
    return finish(d);
}

Benchmark cff_dispatcher() {
    // Visits the eight cases in a scrambled order through one table-driven dispatcher.
    const int order[8] = {0, 3, 6, 1, 4, 7, 2, 5};
    int next[8];
    for (int i = 0; i < 8; ++i) next[order[i]] = i + 1 < 8 ? order[i + 1] : -1;
    std::string cases;
    for (int c = 0; c < 8; ++c) {
        cases += "case" + std::to_string(c) + ":\n";
        cases += "    movi r6, " + std::to_string(c + 1) + "\n    add r10, r10, r6\n";
        if (next[c] < 0) cases += "    mov r0, r10\n    ret\n";
        else cases += "    movi r5, " + std::to_string(next[c]) + "\n    jmp dispatch\n";
    }
    Draft d{"cff_dispatcher", "none", {}, "", {}, {}};
    d.main = kExeHead +
             "main:\n"
             "    movi r10, 0\n"
             "    movi r5, " + std::to_string(order[0]) + "\n"
             "dispatch:\n"
             "    add r3, r5, r5\n"
             "    add r3, r3, r3\n"
             "    add r3, r3, r3\n"
             "    movi r4, table\n"
             "    add r3, r3, r4\n"
             "    ld64 r1, [r3+0]\n"
             "    jmpr r1\n" +
             cases +
             ".seg r\n"
             "table: .u64 case0, case1, case2, case3, case4, case5, case6, case7\n";
    return finish(d);
}

Benchmark smc_patch() {
    auto insn = [](Opcode op, std::uint8_t rs1, std::int32_t imm) {
        Instruction in;
        in.op = op;
        in.rs1 = rs1;
        in.imm = imm;
        auto b = encode(in);
        return std::vector<std::uint8_t>(b.begin(), b.end());
    };
    Draft d{"smc_patch", "none", {}, "", {}, {}};
    d.main = kExeHead +
             ".import mmap\n"
             ".export redirected func\n"
             "main:\n"
             "    movi r0, 0\n"
             "    movi r1, 0x1000\n"
             "    movi r2, 7\n"
             "    movi r3, 0x22\n"
             "    movi r4, -1\n"
             "    movi r5, 0\n"
             "    callimp mmap\n"
             "    mov r8, r0\n"
             // inline hook: JMP at the start of the region
             "    movi r1, patch_jmp\n"
             "    ld64 r2, [r1+0]\n"
             "    st64 [r8+0], r2\n"
             // RET first, then the PUSH in front of it
             "    movi r1, patch_ret\n"
             "    ld64 r2, [r1+0]\n"
             "    st64 [r8+24], r2\n"
             "    movi r6, redirected\n"
             "    movi r1, patch_push\n"
             "    ld64 r2, [r1+0]\n"
             "    st64 [r8+16], r2\n"
             "    movi r1, 16\n"
             "    add r1, r8, r1\n"
             "    callr r1\n"
             "    ret\n"
             "redirected:\n"
             "    movi r0, 42\n"
             "    ret\n"
             ".seg r\n"
             "patch_jmp:\n" + bytes_directive(insn(Opcode::Jmp, 0, 0x40)) +
             "patch_push:\n" + bytes_directive(insn(Opcode::Push, 6, 0)) +
             "patch_ret:\n" + bytes_directive(insn(Opcode::Ret, 0, 0));
    return finish(d);
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + p.string());
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    write_file(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

}  // namespace

std::vector<Benchmark> build_suite() {
    std::vector<Benchmark> out;
    for (auto f : {simple_dlopen, environment_path, xor_encrypted, computed_path, multi_stage, stack_strings,
                   time_triggered, anti_debug, memfd_create, indirect_call, multi_encoding, manual_elf_load, mmap_exec,
                   rop_chain, signal_handler, network_socket})
        out.push_back(f());
    return out;
}

std::vector<Benchmark> build_fixtures() { return {cff_dispatcher(), smc_patch()}; }

SuiteManifest generate_suite(const std::string& out_dir) {
    namespace fs = std::filesystem;
    SuiteManifest m;
    m.dir = out_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    for (const auto& b : build_suite()) {
        const fs::path dir = fs::path(out_dir) / b.name;
        fs::create_directories(dir / "libs", ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        write_file(dir / "main.sbf", emit_image(b.main));
        write_text(dir / "main.s", b.main_source);
        for (const auto& [file, img] : b.libs) write_file(dir / "libs" / file, emit_image(img));
        write_text(dir / "ground_truth.json", b.truth.to_json().dump(2) + "\n");
        write_text(dir / "witness.json", b.witness.to_json().dump(2) + "\n");
        m.benchmarks.push_back(b.name);
    }
    for (const auto& b : build_fixtures()) {
        const fs::path dir = fs::path(out_dir) / "fixtures" / b.name;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        write_file(dir / "main.sbf", emit_image(b.main));
        write_text(dir / "main.s", b.main_source);
        m.fixtures.push_back(b.name);
    }
    write_text(fs::path(out_dir) / "manifest.json", m.to_json().dump(2) + "\n");
    return m;
}

GroundTruth load_ground_truth(const std::string& path) {
    try {
        return GroundTruth::from_json(read_json(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

Witness load_witness(const std::string& path) {
    try {
        return Witness::from_json(read_json(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

std::vector<Opcode> fragment_violations(const BinaryImage& img) {
    std::vector<Opcode> out;
    for (const auto& seg : img.segments) {
        if (!seg.executable()) continue;
        for (std::size_t i = 0; i + kInsnSize <= seg.data.size(); i += kInsnSize) {
            auto in = decode(std::span<const std::uint8_t>(seg.data).subspan(i, kInsnSize));
            if (!in) continue;
            if (in->op >= Opcode::Add && in->op <= Opcode::Mul && in->op != Opcode::Add && in->op != Opcode::Sub &&
                in->op != Opcode::Xor)
                out.push_back(in->op);
        }
    }
    return out;
}

}  // namespace dyncfg
