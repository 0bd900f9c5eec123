#include "ntp/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "ntp/error.hpp"

namespace ntp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Token {
  enum class Kind { Ident, Number, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  int col = 0;
};

std::vector<Token> lex_line(std::string_view line, int line_no) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto is_ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  while (i < line.size()) {
    const char c = line[i];
    if (c == '#') break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const int col = static_cast<int>(i) + 1;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < line.size() && is_ident(line[j])) ++j;
      out.push_back({Token::Kind::Ident, std::string(line.substr(i, j - i)), col});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
      std::size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      if (j < line.size() && line[j] == '.') {
        ++j;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      }
      if (j < line.size() && (line[j] == 'e' || line[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < line.size() && (line[k] == '+' || line[k] == '-')) ++k;
        if (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) {
          while (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) ++k;
          j = k;
        } else {
          throw SyntaxError(line_no, static_cast<int>(j) + 1, "malformed exponent");
        }
      }
      if (j < line.size() && (std::isalpha(static_cast<unsigned char>(line[j])) || line[j] == '_'))
        throw SyntaxError(line_no, static_cast<int>(j) + 1, "unexpected character after number");
      out.push_back({Token::Kind::Number, std::string(line.substr(i, j - i)), col});
      i = j;
    } else if (std::string_view("=:(),;+-*^/@").find(c) != std::string_view::npos) {
      out.push_back({Token::Kind::Punct, std::string(1, c), col});
      ++i;
    } else {
      throw SyntaxError(line_no, col, fmt::format("unexpected character '{}'", c));
    }
  }
  out.push_back({Token::Kind::End, "", static_cast<int>(line.size()) + 1});
  return out;
}

class LineParser {
 public:
  LineParser(std::string_view line, int line_no) : tokens_(lex_line(line, line_no)), line_(line_no) {}

  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  Token next() {
    Token t = peek();
    if (pos_ < tokens_.size() - 1) ++pos_;
    return t;
  }
  bool at_end() const { return peek().kind == Token::Kind::End; }
  bool is_punct(char c) const { return peek().kind == Token::Kind::Punct && peek().text[0] == c; }
  bool is_word(std::string_view w) const {
    return peek().kind == Token::Kind::Ident && peek().text == w;
  }
  bool accept(char c) {
    if (!is_punct(c)) return false;
    next();
    return true;
  }

  [[noreturn]] void fail(const std::string& what) const {
    const Token& t = peek();
    const std::string found = t.kind == Token::Kind::End ? "end of line" : "'" + t.text + "'";
    throw SyntaxError(line_, t.col, fmt::format("expected {}, found {}", what, found));
  }

  void expect(char c) {
    if (!accept(c)) fail(fmt::format("'{}'", c));
  }
  void expect_word(std::string_view w) {
    if (!is_word(w)) fail(fmt::format("'{}'", w));
    next();
  }
  std::string ident(const char* what) {
    if (peek().kind != Token::Kind::Ident) fail(what);
    return next().text;
  }
  void expect_end() {
    if (!at_end()) fail("end of line");
  }

  double number() {
    bool negative = false;
    if (is_punct('-') || is_punct('+')) negative = next().text == "-";
    if (peek().kind != Token::Kind::Number) fail("a number");
    const Token t = next();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size() || !std::isfinite(v))
      throw SyntaxError(line_, t.col, fmt::format("bad number '{}'", t.text));
    return negative ? -v : v;
  }

  int integer() {
    if (peek().kind != Token::Kind::Number) fail("an integer");
    const Token t = next();
    int v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size())
      throw SyntaxError(line_, t.col, fmt::format("expected an integer, found '{}'", t.text));
    return v;
  }

  // expr := term (('+'|'-') term)*
  NonlinExpr expr() {
    NonlinExpr e = term();
    while (is_punct('+') || is_punct('-')) {
      const bool add = next().text == "+";
      NonlinExpr r = term();
      e = add ? NonlinExpr::add(e, r) : NonlinExpr::sub(e, r);
    }
    return e;
  }

  NonlinExpr term() {
    NonlinExpr e = unary();
    while (accept('*')) e = NonlinExpr::mul(e, unary());
    return e;
  }

  NonlinExpr unary() {
    if (accept('-')) return NonlinExpr::neg(unary());
    return power();
  }

  NonlinExpr power() {
    NonlinExpr base = primary();
    if (accept('^')) {
      const int col = peek().col;
      const int k = integer();
      if (k < 0) throw SyntaxError(line_, col, "exponent must be a non-negative integer");
      base = NonlinExpr::pow(base, k);
    }
    return base;
  }

  NonlinExpr primary() {
    const Token& t = peek();
    if (t.kind == Token::Kind::Number) return NonlinExpr::constant(number());
    if (accept('(')) {
      NonlinExpr e = expr();
      expect(')');
      return e;
    }
    if (t.kind != Token::Kind::Ident) fail("an expression");
    const std::string name = t.text;
    const int col = t.col;
    if ((name[0] == 'x' || name[0] == 't') && name.size() > 1 &&
        std::all_of(name.begin() + 1, name.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      next();
      const int slot = std::stoi(name.substr(1));
      if (slot < 1) throw SyntaxError(line_, col, "slots are numbered from 1");
      return name[0] == 'x' ? NonlinExpr::input(slot - 1) : NonlinExpr::param(slot - 1);
    }
    static const std::set<std::string> unary_fns{"relu", "step", "tanh", "abs"};
    static const std::set<std::string> binary_fns{"max", "min"};
    if (unary_fns.count(name)) {
      next();
      expect('(');
      NonlinExpr a = expr();
      expect(')');
      if (name == "relu") return NonlinExpr::relu(a);
      if (name == "step") return NonlinExpr::step(a);
      if (name == "tanh") return NonlinExpr::tanh(a);
      return NonlinExpr::abs(a);
    }
    if (binary_fns.count(name)) {
      next();
      expect('(');
      NonlinExpr a = expr();
      expect(',');
      NonlinExpr b = expr();
      expect(')');
      return name == "max" ? NonlinExpr::max(a, b) : NonlinExpr::min(a, b);
    }
    if (name == "clamp") {
      next();
      expect('(');
      NonlinExpr a = expr();
      expect(',');
      const double lo = number();
      expect(',');
      const double hi = number();
      if (!(lo <= hi)) throw SyntaxError(line_, col, "clamp needs lo <= hi");
      expect(')');
      return NonlinExpr::clamp(a, lo, hi);
    }
    throw SyntaxError(line_, col,
                      fmt::format("unknown name '{}' in expression (use slots x1.., t1..)", name));
  }

  int line() const { return line_; }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  int line_;
};

// Named shorthands accepted as `nonlin add(a, b)`.
std::optional<NonlinExpr> macro(const std::string& name) {
  if (name == "add") return expr::sum();
  if (name == "sub") return NonlinExpr::sub(NonlinExpr::input(0), NonlinExpr::input(1));
  if (name == "mul") return expr::product();
  if (name == "square") return expr::square();
  if (name == "id") return expr::identity();
  return std::nullopt;
}

std::vector<std::string> name_list(LineParser& p, char close) {
  std::vector<std::string> out;
  if (p.is_punct(close)) return out;
  out.push_back(p.ident("a name"));
  while (p.accept(',')) out.push_back(p.ident("a name"));
  return out;
}

template <class Instr>
Instr coordinatewise(LineParser& p, std::string output) {
  Instr in;
  in.output = std::move(output);
  const int col = p.peek().col;
  if (p.peek().kind == Token::Kind::Ident && p.peek(1).kind == Token::Kind::Punct &&
      p.peek(1).text == "(") {
    if (auto m = macro(p.peek().text)) {
      p.next();
      p.expect('(');
      in.inputs = name_list(p, ')');
      p.expect(')');
      p.expect_end();
      if (static_cast<int>(in.inputs.size()) != m->arity())
        throw Error(ErrorKind::ArityMismatch,
                    fmt::format("shorthand takes {} inputs, got {}", m->arity(), in.inputs.size()),
                    p.line(), col);
      in.expr = *m;
      return in;
    }
  }
  NonlinExpr e = p.expr();
  p.expect('(');
  in.inputs = name_list(p, ')');
  if (p.accept(';')) {
    in.params.push_back(p.ident("a scalar name"));
    while (p.accept(',')) in.params.push_back(p.ident("a scalar name"));
  }
  p.expect(')');
  p.expect_end();
  try {
    in.expr = e.with_signature(static_cast<int>(in.inputs.size()), static_cast<int>(in.params.size()));
  } catch (const Error& err) {
    throw Error(err.kind(), err.what(), p.line(), col);
  }
  return in;
}

std::vector<double> coefficient_list(LineParser& p) {
  std::vector<double> out;
  while (p.peek().kind == Token::Kind::Number || p.is_punct('-') || p.is_punct('+'))
    out.push_back(p.number());
  if (out.empty()) p.fail("coefficients");
  return out;
}

Declaration parse_line(LineParser& p) {
  const std::string head = p.ident("a declaration");
  if (p.accept('=')) {
    const std::string kind = p.ident("'matmul', 'nonlin' or 'moment'");
    if (kind == "matmul") {
      MatMul mm;
      mm.output = head;
      mm.matrix = p.ident("a matrix name");
      if (p.accept('^')) {
        if (!p.is_word("T")) p.fail("'T'");
        p.next();
        mm.transposed = true;
      }
      mm.input = p.ident("an input vector");
      p.expect_end();
      return mm;
    }
    if (kind == "nonlin") return coordinatewise<Nonlin>(p, head);
    if (kind == "moment") return coordinatewise<Moment>(p, head);
    throw SyntaxError(p.line(), 1, fmt::format("unknown instruction '{}'", kind));
  }
  if (head == "class") {
    ClassDecl c;
    c.name = p.ident("a class name");
    p.expect_word("ratio");
    c.ratio = p.number();
    p.expect_end();
    return c;
  }
  if (head == "matrix") {
    MatrixDecl m;
    m.name = p.ident("a matrix name");
    p.expect(':');
    m.rows = p.ident("a row class");
    p.expect_word("x");
    m.cols = p.ident("a column class");
    if (p.is_word("var")) {
      p.next();
      m.sigma2 = p.number();
    }
    p.expect_end();
    return m;
  }
  if (head == "vector") {
    InitVectorDecl v;
    v.name = p.ident("a vector name");
    p.expect(':');
    v.dim = p.ident("a class name");
    if (p.is_word("mean")) {
      p.next();
      v.mean = p.number();
    }
    if (p.is_word("var")) {
      p.next();
      v.var = p.number();
    }
    p.expect_end();
    return v;
  }
  if (head == "cov") {
    CovDecl c;
    c.a = p.ident("a vector name");
    c.b = p.ident("a vector name");
    c.cov = p.number();
    p.expect_end();
    return c;
  }
  if (head == "scalar") {
    InitScalarDecl s;
    s.name = p.ident("a scalar name");
    p.expect_word("limit");
    s.limit = p.number();
    s.rule = ScalarRule{{s.limit}, {1.0}};
    if (p.is_word("rule")) {
      p.next();
      s.rule.num = coefficient_list(p);
      p.expect('/');
      s.rule.den = coefficient_list(p);
    }
    p.expect_end();
    return s;
  }
  if (head == "equiv") {
    EquivDecl e;
    e.a = p.ident("a class or vector name");
    e.b = p.ident("a class or vector name");
    p.expect_end();
    return e;
  }
  throw SyntaxError(p.line(), 1, fmt::format("unknown declaration '{}'", head));
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    f(line, line_no);
    if (end == text.size()) break;
    start = end + 1;
  }
}

std::string num(double v) { return fmt::format("{}", v); }

std::string join(const std::vector<std::string>& names, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += (i ? sep : "") + names[i];
  return out;
}

std::string coords(const std::vector<std::string>& inputs, const std::vector<std::string>& params) {
  std::string s = "(" + join(inputs);
  if (!params.empty()) s += "; " + join(params);
  return s + ")";
}

std::string coefficients(const std::vector<double>& c) {
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) out += (i ? " " : "") + num(c[i]);
  return out;
}

}  // namespace

NonlinExpr parse_expr(std::string_view text) {
  LineParser p(text, 1);
  NonlinExpr e = p.expr();
  p.expect_end();
  return e;
}

std::vector<SourceDecl> parse_declarations(std::string_view text) {
  std::vector<SourceDecl> out;
  for_each_line(text, [&](std::string_view line, int line_no) {
    LineParser p(line, line_no);
    if (p.at_end()) return;
    out.push_back({parse_line(p), line_no});
  });
  return out;
}

Program parse_program(std::string_view text) {
  const std::vector<SourceDecl> source = parse_declarations(text);
  std::vector<Declaration> decls;
  for (const auto& s : source) decls.push_back(s.decl);
  try {
    return build_program(decls);
  } catch (const Error& err) {
    // Locate the first declaration whose prefix fails.
    std::vector<Declaration> prefix;
    for (const auto& s : source) {
      prefix.push_back(s.decl);
      try {
        build_program(prefix);
      } catch (const Error& e) {
        throw Error(e.kind(), e.what(), s.line, 1);
      }
    }
    throw;
  }
}

std::string print_declarations(const std::vector<Declaration>& decls) {
  std::string out;
  for (const auto& d : decls) {
    out += std::visit(
        overloaded{
            [](const ClassDecl& c) { return fmt::format("class {} ratio {}", c.name, num(c.ratio)); },
            [](const MatrixDecl& m) {
              return fmt::format("matrix {} : {} x {} var {}", m.name, m.rows, m.cols, num(m.sigma2));
            },
            [](const InitVectorDecl& v) {
              std::string s = fmt::format("vector {} : {}", v.name, v.dim);
              if (v.mean != 0.0) s += " mean " + num(v.mean);
              if (v.var != 1.0) s += " var " + num(v.var);
              return s;
            },
            [](const CovDecl& c) { return fmt::format("cov {} {} {}", c.a, c.b, num(c.cov)); },
            [](const InitScalarDecl& s) {
              std::string out = fmt::format("scalar {} limit {}", s.name, num(s.limit));
              if (!(s.rule == ScalarRule{{s.limit}, {1.0}}))
                out += " rule " + coefficients(s.rule.num) + " / " + coefficients(s.rule.den);
              return out;
            },
            [](const EquivDecl& e) { return fmt::format("equiv {} {}", e.a, e.b); },
            [](const MatMul& m) {
              return fmt::format("{} = matmul {}{} {}", m.output, m.matrix, m.transposed ? "^T" : "",
                                 m.input);
            },
            [](const Nonlin& n) {
              return fmt::format("{} = nonlin {} {}", n.output, n.expr.to_string(),
                                 coords(n.inputs, n.params));
            },
            [](const Moment& m) {
              return fmt::format("{} = moment {} {}", m.output, m.expr.to_string(),
                                 coords(m.inputs, m.params));
            },
        },
        d);
    out += '\n';
  }
  return out;
}

std::string print_program(const Program& program) {
  return print_declarations(program.declarations());
}

AlternatingWord parse_word(std::string_view text) {
  AlternatingWord word;
  for_each_line(text, [&](std::string_view line, int line_no) {
    LineParser p(line, line_no);
    if (p.at_end()) return;
    const std::string head = p.ident("'mat' or 'diag'");
    AlternatingFactor factor;
    if (head == "mat") {
      std::set<std::string> names;
      bool first = true;
      while (!p.at_end() && !p.is_punct('@')) {
        double sign = 1.0;
        if (p.is_punct('+') || p.is_punct('-')) {
          sign = p.next().text == "-" ? -1.0 : 1.0;
        } else if (!first) {
          p.fail("'+' or '-'");
        }
        first = false;
        WordTerm term;
        term.coef = sign;
        bool has_coef = false;
        if (p.peek().kind == Token::Kind::Number) {
          term.coef *= p.number();
          has_coef = true;
          p.accept('*');
        }
        while (p.peek().kind == Token::Kind::Ident) {
          MatrixFactor f;
          f.name = p.next().text;
          if (p.accept('^')) {
            if (!p.is_word("T")) p.fail("'T'");
            p.next();
            f.transposed = true;
          }
          names.insert(f.name);
          term.word.factors.emplace_back(std::move(f));
        }
        if (term.word.factors.empty() && !has_coef) p.fail("a matrix name or coefficient");
        factor.poly.terms.push_back(std::move(term));
      }
      if (factor.poly.terms.empty()) p.fail("a matrix polynomial");
      std::vector<std::string> sorted(names.begin(), names.end());
      factor.collection = join(sorted, ",");
    } else if (head == "diag") {
      DiagFactor d;
      d.vectors.push_back(p.ident("a vector name"));
      while (p.accept(',')) d.vectors.push_back(p.ident("a vector name"));
      const int col = p.peek().col;
      NonlinExpr e = p.expr();
      try {
        d.psi = e.with_signature(static_cast<int>(d.vectors.size()), 0);
      } catch (const Error& err) {
        throw Error(err.kind(), err.what(), line_no, col);
      }
      factor.collection = "D";
      factor.poly = WordPoly(MatrixWord{{std::move(d)}});
    } else {
      throw SyntaxError(line_no, 1, fmt::format("unknown word factor '{}'", head));
    }
    if (p.accept('@')) factor.collection = p.ident("a collection label");
    p.expect_end();
    word.factors.push_back(std::move(factor));
  });
  return word;
}

std::string print_word(const AlternatingWord& word) {
  std::string out;
  for (const auto& f : word.factors) {
    const auto& terms = f.poly.terms;
    const bool diag = terms.size() == 1 && terms[0].coef == 1.0 &&
                      terms[0].word.factors.size() == 1 &&
                      std::holds_alternative<DiagFactor>(terms[0].word.factors[0]);
    std::string default_label = "D";
    if (diag) {
      const auto& d = std::get<DiagFactor>(terms[0].word.factors[0]);
      out += fmt::format("diag {} {}", join(d.vectors, ","), d.psi.to_string());
    } else {
      std::set<std::string> names;
      out += "mat";
      for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        double c = t.coef;
        if (i > 0) {
          out += c < 0 ? " -" : " +";
          c = std::abs(c);
        } else if (c < 0 && !t.word.factors.empty() && c == -1.0) {
          out += " -";
          c = 1.0;
        }
        if (c != 1.0 || t.word.factors.empty()) out += " " + num(c);
        for (const auto& wf : t.word.factors) {
          const auto* m = std::get_if<MatrixFactor>(&wf);
          if (!m) throw Error(ErrorKind::InvalidArgument, "mixed diagonal/matrix factor cannot be printed");
          names.insert(m->name);
          out += " " + m->name + (m->transposed ? "^T" : "");
        }
      }
      default_label = join(std::vector<std::string>(names.begin(), names.end()), ",");
    }
    if (f.collection != default_label) out += " @" + f.collection;
    out += '\n';
  }
  return out;
}

}  // namespace ntp
