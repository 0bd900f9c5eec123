#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ntp/freeness.hpp"
#include "ntp/program.hpp"

namespace ntp {

struct SourceDecl {
  Declaration decl;
  int line = 0;
};

/// Parses program text without validating it. Errors: SyntaxError.
std::vector<SourceDecl> parse_declarations(std::string_view text);

/// Parses and validates a program; build errors carry the line of the
/// offending declaration.
Program parse_program(std::string_view text);

/// Canonical text; parse_program(print_program(p)) == p.
std::string print_program(const Program& program);
std::string print_declarations(const std::vector<Declaration>& decls);

/// Expression over slots x1.. and t1.. Errors: SyntaxError.
NonlinExpr parse_expr(std::string_view text);

/// Word file: one factor per line,
///   mat <terms>                  e.g. `mat W + W^T`, `mat W W^T`, `mat 2 W - 1`
///   diag <v>[,<v>...] <expr> [@label]
/// Errors: SyntaxError.
AlternatingWord parse_word(std::string_view text);
std::string print_word(const AlternatingWord& word);

}  // namespace ntp
