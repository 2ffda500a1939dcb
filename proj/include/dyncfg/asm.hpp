#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dyncfg/image.hpp"

namespace dyncfg {

// Textual assembly for SBF images.
//
//   ; comment
//   .type exe|lib             executables link at 0x400000, libraries at 0
//   .entry label
//   .import name              ordinals follow declaration order
//   .export label [func|obj]
//   .seg rx|rw|r|rwx          starts a new segment (code defaults to rx)
//   .str "text"  .wstr "text" NUL-terminated ascii / utf16le
//   .bytes 0x01 2 ...   .u64 expr   .zero n   .align n
//   label:  mnemonic operands
//
// Operands: r0..r15 (sp = r15), [reg], [reg+expr], and expressions made of
// numbers, 'c' literals and labels joined by + and -.

enum class AsmErrc { UndefinedLabel, DuplicateLabel, BadOperand, BadDirective };

const char* to_string(AsmErrc c);

class AsmError : public std::runtime_error {
public:
    AsmError(AsmErrc code, std::size_t line, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + " at line " + std::to_string(line) + ": " + what),
          code_(code),
          line_(line) {}
    AsmErrc code() const noexcept { return code_; }
    std::size_t line() const noexcept { return line_; }

private:
    AsmErrc code_;
    std::size_t line_;
};

BinaryImage assemble(std::string_view src);

}  // namespace dyncfg
