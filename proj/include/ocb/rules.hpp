#pragma once

// Boolean / counting rule language over object-category annotations.
//
//   expr  := or
//   or    := xor {"OR" xor}
//   xor   := and {"XOR" and}
//   and   := not {"AND" not}
//   not   := ["NOT"] atom
//   atom  := NAME | "any{" names "}" | "distinct{" names "}" cmp INT
//          | "count(" NAME ")" cmp INT | "(" expr ")"
//   cmp   := "==" | ">=" | "<=" | ">" | "<"
//
// NAME is one or more words (`traffic light`) or a double-quoted string.
// Keywords are upper case; category names are case-sensitive.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ocb/error.hpp"

namespace ocb {

enum class Cmp { eq, ge, le, gt, lt };

inline std::string to_string(Cmp c) {
  switch (c) {
    case Cmp::eq: return "==";
    case Cmp::ge: return ">=";
    case Cmp::le: return "<=";
    case Cmp::gt: return ">";
    case Cmp::lt: return "<";
  }
  return "?";
}

inline bool compare(long lhs, Cmp c, long rhs) {
  switch (c) {
    case Cmp::eq: return lhs == rhs;
    case Cmp::ge: return lhs >= rhs;
    case Cmp::le: return lhs <= rhs;
    case Cmp::gt: return lhs > rhs;
    case Cmp::lt: return lhs < rhs;
  }
  return false;
}

struct Expr {
  enum class Kind { present, count, any, distinct, negate, conj, exclusive, disj };

  Kind kind = Kind::present;
  std::vector<std::string> names;  // present/count: one name; any/distinct: the set
  Cmp cmp = Cmp::eq;               // count/distinct
  long threshold = 0;              // count/distinct
  std::vector<Expr> children;      // negate: 1; conj/exclusive/disj: 2

  static Expr present(std::string name) { return {Kind::present, {std::move(name)}, Cmp::eq, 0, {}}; }
  static Expr count(std::string name, Cmp c, long n) {
    return {Kind::count, {std::move(name)}, c, n, {}};
  }
  static Expr any(std::vector<std::string> names) { return {Kind::any, std::move(names), Cmp::eq, 0, {}}; }
  static Expr distinct(std::vector<std::string> names, Cmp c, long n) {
    return {Kind::distinct, std::move(names), c, n, {}};
  }
  static Expr negate(Expr e) { return {Kind::negate, {}, Cmp::eq, 0, {std::move(e)}}; }
  static Expr binary(Kind k, Expr lhs, Expr rhs) {
    return {k, {}, Cmp::eq, 0, {std::move(lhs), std::move(rhs)}};
  }

  bool is_binary() const { return kind == Kind::conj || kind == Kind::exclusive || kind == Kind::disj; }

  friend bool operator==(const Expr&, const Expr&) = default;
};

struct ClassRule {
  std::string name;
  Expr expr;

  friend bool operator==(const ClassRule&, const ClassRule&) = default;
};

using CategoryUniverse = std::set<std::string>;

/// Per-image category counts. Absent categories count as zero.
struct AnnotationRecord {
  std::string image_id;
  std::map<std::string, long> category_counts;

  long count(const std::string& category) const {
    auto it = category_counts.find(category);
    return it == category_counts.end() ? 0 : it->second;
  }
};

namespace detail {

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1] ? 1u : 0u)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline bool is_keyword(std::string_view w) {
  return w == "AND" || w == "OR" || w == "XOR" || w == "NOT";
}

struct Token {
  enum class Type { word, quoted, integer, lbrace, rbrace, lparen, rparen, comma, cmp, end };
  Type type;
  std::string text;
  std::size_t pos;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (pos_ >= text_.size()) break;
      const std::size_t start = pos_;
      const char c = text_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        while (pos_ < text_.size() && is_word_char(text_[pos_])) ++pos_;
        out.push_back({Token::Type::word, std::string(text_.substr(start, pos_ - start)), start});
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (pos_ < text_.size() && is_word_char(text_[pos_]))
          throw ParseError("malformed number", start);
        out.push_back({Token::Type::integer, std::string(text_.substr(start, pos_ - start)), start});
      } else if (c == '"') {
        ++pos_;
        std::string s;
        while (pos_ < text_.size() && text_[pos_] != '"') s += text_[pos_++];
        if (pos_ >= text_.size()) throw ParseError("unterminated quoted name", start);
        ++pos_;
        if (s.empty()) throw ParseError("empty quoted name", start);
        out.push_back({Token::Type::quoted, s, start});
      } else if (c == '=' || c == '>' || c == '<') {
        std::string op(1, c);
        if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '=') op += '=';
        if (op == "=") throw ParseError("expected '==' for equality", start);
        pos_ += op.size();
        out.push_back({Token::Type::cmp, op, start});
      } else {
        Token::Type t;
        switch (c) {
          case '{': t = Token::Type::lbrace; break;
          case '}': t = Token::Type::rbrace; break;
          case '(': t = Token::Type::lparen; break;
          case ')': t = Token::Type::rparen; break;
          case ',': t = Token::Type::comma; break;
          default: throw ParseError(std::string("unexpected character '") + c + "'", start);
        }
        ++pos_;
        out.push_back({t, std::string(1, c), start});
      }
    }
    out.push_back({Token::Type::end, "", text_.size()});
    return out;
  }

 private:
  static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

class Parser {
 public:
  Parser(std::string_view text, const CategoryUniverse& universe)
      : tokens_(Lexer(text).run()), universe_(universe) {}

  Expr parse() {
    Expr e = parse_or();
    if (peek().type != Token::Type::end) fail("unexpected '" + peek().text + "' after expression");
    return e;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& next() { return tokens_[std::min(pos_++, tokens_.size() - 1)]; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, peek().pos); }

  bool at_keyword(std::string_view kw) const {
    return peek().type == Token::Type::word && peek().text == kw;
  }

  void expect(Token::Type t, const char* what) {
    if (peek().type != t) fail(std::string("expected ") + what);
    ++pos_;
  }

  template <typename Sub>
  Expr parse_chain(Expr::Kind kind, std::string_view kw, Sub sub) {
    Expr lhs = (this->*sub)();
    while (at_keyword(kw)) {
      ++pos_;
      Expr rhs = (this->*sub)();
      lhs = Expr::binary(kind, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  Expr parse_or() { return parse_chain(Expr::Kind::disj, "OR", &Parser::parse_xor); }
  Expr parse_xor() { return parse_chain(Expr::Kind::exclusive, "XOR", &Parser::parse_and); }
  Expr parse_and() { return parse_chain(Expr::Kind::conj, "AND", &Parser::parse_not); }

  Expr parse_not() {
    if (at_keyword("NOT")) {
      ++pos_;
      return Expr::negate(parse_not());
    }
    return parse_atom();
  }

  Expr parse_atom() {
    const Token& t = peek();
    if (t.type == Token::Type::lparen) {
      ++pos_;
      Expr e = parse_or();
      expect(Token::Type::rparen, "')'");
      return e;
    }
    if (t.type == Token::Type::word && (t.text == "any" || t.text == "distinct") &&
        peek(1).type == Token::Type::lbrace) {
      const bool is_any = t.text == "any";
      pos_ += 2;
      auto names = parse_name_list();
      expect(Token::Type::rbrace, "'}'");
      if (is_any) return Expr::any(std::move(names));
      auto [cmp, n] = parse_comparison();
      return Expr::distinct(std::move(names), cmp, n);
    }
    if (t.type == Token::Type::word && t.text == "count" && peek(1).type == Token::Type::lparen) {
      pos_ += 2;
      std::string name = parse_name();
      expect(Token::Type::rparen, "')'");
      auto [cmp, n] = parse_comparison();
      return Expr::count(std::move(name), cmp, n);
    }
    return Expr::present(parse_name());
  }

  std::pair<Cmp, long> parse_comparison() {
    if (peek().type != Token::Type::cmp) fail("expected comparison operator");
    const std::string op = next().text;
    Cmp c = op == "==" ? Cmp::eq : op == ">=" ? Cmp::ge : op == "<=" ? Cmp::le : op == ">" ? Cmp::gt : Cmp::lt;
    if (peek().type != Token::Type::integer) fail("expected nonnegative integer");
    const std::string digits = next().text;
    if (digits.size() > 9) throw ParseError("integer too large", tokens_[pos_ - 1].pos);
    return {c, std::stol(digits)};
  }

  std::vector<std::string> parse_name_list() {
    std::vector<std::string> names;
    names.push_back(parse_name());
    while (peek().type == Token::Type::comma) {
      ++pos_;
      const std::size_t at = peek().pos;
      std::string n = parse_name();
      if (std::find(names.begin(), names.end(), n) != names.end())
        throw ParseError("duplicate category '" + n + "' in set", at);
      names.push_back(std::move(n));
    }
    return names;
  }

  std::string parse_name() {
    const Token& t = peek();
    std::string name;
    if (t.type == Token::Type::quoted) {
      name = next().text;
    } else if (t.type == Token::Type::word && !is_keyword(t.text)) {
      name = next().text;
      while (peek().type == Token::Type::word && !is_keyword(peek().text) &&
             !((peek().text == "any" || peek().text == "distinct") && peek(1).type == Token::Type::lbrace) &&
             !(peek().text == "count" && peek(1).type == Token::Type::lparen))
        name += " " + next().text;
    } else {
      fail(t.type == Token::Type::end ? "unexpected end of expression" : "expected category name");
    }
    check_category(name, t.pos);
    return name;
  }

  void check_category(const std::string& name, std::size_t pos) const {
    if (universe_.count(name)) return;
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& u : universe_) {
      const std::size_t d = edit_distance(name, u);
      if (d < best_d) best_d = d, best = u;
    }
    std::string msg = "unknown category '" + name + "'";
    if (!best.empty() && best_d <= std::max<std::size_t>(2, name.size() / 3))
      msg += " (did you mean '" + best + "'?)";
    throw ParseError(msg, pos);
  }

  std::vector<Token> tokens_;
  const CategoryUniverse& universe_;
  std::size_t pos_ = 0;
};

inline int precedence(Expr::Kind k) {
  switch (k) {
    case Expr::Kind::disj: return 1;
    case Expr::Kind::exclusive: return 2;
    case Expr::Kind::conj: return 3;
    case Expr::Kind::negate: return 4;
    default: return 5;
  }
}

inline std::string format_name(const std::string& name) {
  bool plain = !name.empty() && (std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_');
  std::istringstream words(name);
  std::string w, rejoined;
  while (plain && words >> w) {
    plain = !is_keyword(w) && w != "any" && w != "distinct" && w != "count" &&
            (std::isalpha(static_cast<unsigned char>(w[0])) || w[0] == '_') &&
            std::all_of(w.begin(), w.end(), [](char c) {
              return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
            });
    rejoined += (rejoined.empty() ? "" : " ") + w;
  }
  return plain && rejoined == name ? name : "\"" + name + "\"";
}

}  // namespace detail

inline Expr parse_expression(std::string_view text, const CategoryUniverse& universe) {
  return detail::Parser(text, universe).parse();
}

inline ClassRule parse_rule(std::string name, std::string_view text, const CategoryUniverse& universe) {
  return {std::move(name), parse_expression(text, universe)};
}

/// Canonical text form with minimal parentheses; reparses to an equal AST.
inline std::string to_string(const Expr& e) {
  using K = Expr::Kind;
  auto join = [](const std::vector<std::string>& names) {
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + detail::format_name(names[i]);
    return s;
  };
  switch (e.kind) {
    case K::present: return detail::format_name(e.names.front());
    case K::count:
      return "count(" + detail::format_name(e.names.front()) + ") " + to_string(e.cmp) + " " +
             std::to_string(e.threshold);
    case K::any: return "any{" + join(e.names) + "}";
    case K::distinct:
      return "distinct{" + join(e.names) + "} " + to_string(e.cmp) + " " + std::to_string(e.threshold);
    case K::negate: {
      const auto& c = e.children.front();
      return c.is_binary() ? "NOT (" + to_string(c) + ")" : "NOT " + to_string(c);
    }
    case K::conj:
    case K::exclusive:
    case K::disj: {
      const int p = detail::precedence(e.kind);
      const char* op = e.kind == K::conj ? " AND " : e.kind == K::exclusive ? " XOR " : " OR ";
      const auto& l = e.children[0];
      const auto& r = e.children[1];
      auto wrap = [](const Expr& x, bool paren) { return paren ? "(" + to_string(x) + ")" : to_string(x); };
      return wrap(l, detail::precedence(l.kind) < p) + op + wrap(r, detail::precedence(r.kind) <= p);
    }
  }
  return "";
}

inline bool eval_rule(const Expr& e, const AnnotationRecord& ann) {
  using K = Expr::Kind;
  switch (e.kind) {
    case K::present: return ann.count(e.names.front()) >= 1;
    case K::count: return compare(ann.count(e.names.front()), e.cmp, e.threshold);
    case K::any:
      return std::any_of(e.names.begin(), e.names.end(), [&](const auto& n) { return ann.count(n) >= 1; });
    case K::distinct: {
      const long present = std::count_if(e.names.begin(), e.names.end(),
                                         [&](const auto& n) { return ann.count(n) >= 1; });
      return compare(present, e.cmp, e.threshold);
    }
    case K::negate: return !eval_rule(e.children[0], ann);
    case K::conj: return eval_rule(e.children[0], ann) && eval_rule(e.children[1], ann);
    case K::exclusive: return eval_rule(e.children[0], ann) != eval_rule(e.children[1], ann);
    case K::disj: return eval_rule(e.children[0], ann) || eval_rule(e.children[1], ann);
  }
  return false;
}

inline bool eval_rule(const ClassRule& rule, const AnnotationRecord& ann) { return eval_rule(rule.expr, ann); }

/// Categories referenced anywhere in the expression.
inline std::set<std::string> referenced_categories(const Expr& e) {
  std::set<std::string> out(e.names.begin(), e.names.end());
  for (const auto& c : e.children) out.merge(referenced_categories(c));
  return out;
}

struct RuleSet {
  std::vector<ClassRule> rules;

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& r : rules) out.push_back(r.name);
    return out;
  }
};

/// Rule file: one `name: expression` per line; `#` starts a comment.
inline RuleSet parse_rule_file(std::string_view text, const CategoryUniverse& universe) {
  RuleSet set;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    ++line_no;
    start = end + 1;

    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError("expected 'name: expression'", 0, line_no);
    std::string name = trim(line.substr(0, colon));
    if (name.empty()) throw ParseError("empty rule name", 0, line_no);
    if (!seen.insert(name).second) throw ParseError("duplicate rule name '" + name + "'", 0, line_no);
    try {
      set.rules.push_back(parse_rule(name, line.substr(colon + 1), universe));
    } catch (const ParseError& e) {
      throw ParseError(e.detail(), e.position() + colon + 1, line_no);
    }
  }
  return set;
}

}  // namespace ocb
