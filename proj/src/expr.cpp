#include "logforge/expr.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <unordered_map>

#include <boost/regex.hpp>

#include "logforge/security.hpp"
#include "logforge/strings.hpp"

namespace logforge::query {

namespace {

struct FunctionSpec {
  std::size_t min_args;
  std::size_t max_args;
};

const std::map<std::string, FunctionSpec, std::less<>>& functions() {
  static const std::map<std::string, FunctionSpec, std::less<>> table = {
      {"like", {2, 2}},         {"match", {2, 2}},          {"if", {3, 3}},
      {"len", {1, 1}},          {"lower", {1, 1}},          {"upper", {1, 1}},
      {"tonumber", {1, 1}},     {"tostring", {1, 1}},       {"round", {1, 2}},
      {"abs", {1, 1}},          {"floor", {1, 1}},          {"ceil", {1, 1}},
      {"isnull", {1, 1}},       {"isnotnull", {1, 1}},      {"coalesce", {1, 16}},
      {"substr", {2, 3}},       {"urldecode", {1, 1}},      {"replace", {3, 3}},
      {"detect_xss", {1, 1}},   {"detect_sqli", {1, 1}},    {"detect_session", {1, 1}},
      {"detect_file_exec", {1, 1}}, {"detect_csrf", {4, 4}},
  };
  return table;
}

ExprPtr make(Expr::Kind kind, std::string name, std::vector<ExprPtr> args, std::size_t off,
             Value lit = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = kind;
  e->name = std::move(name);
  e->args = std::move(args);
  e->offset = off;
  e->literal = std::move(lit);
  return e;
}

ExprPtr parse_or(TokenStream& ts);

ExprPtr parse_primary(TokenStream& ts) {
  const Token& t = ts.peek();
  switch (t.kind) {
    case TokenKind::kNumber: {
      ts.next();
      return make(Expr::Kind::kLiteral, "", {}, t.offset, Value(*parse_number(t.text)));
    }
    case TokenKind::kString:
      ts.next();
      return make(Expr::Kind::kLiteral, "", {}, t.offset, Value(t.text));
    case TokenKind::kWord: {
      Token word = ts.next();
      if (ts.peek().is_op("(")) {
        std::string fname = to_lower(word.text);
        auto spec = functions().find(fname);
        if (spec == functions().end())
          throw ParseError(word.offset, "unknown function '" + word.text + "'");
        ts.next();
        std::vector<ExprPtr> args;
        if (!ts.peek().is_op(")")) {
          do {
            args.push_back(parse_or(ts));
          } while (ts.accept_op(","));
        }
        ts.expect_op(")");
        if (args.size() < spec->second.min_args || args.size() > spec->second.max_args)
          throw ParseError(word.offset, "wrong number of arguments to " + fname + "()");
        return make(Expr::Kind::kCall, fname, std::move(args), word.offset);
      }
      if (word.is_word("true")) return make(Expr::Kind::kLiteral, "", {}, word.offset, Value(1.0));
      if (word.is_word("false")) return make(Expr::Kind::kLiteral, "", {}, word.offset, Value(0.0));
      if (word.is_word("null")) return make(Expr::Kind::kLiteral, "", {}, word.offset);
      return make(Expr::Kind::kField, word.text, {}, word.offset);
    }
    case TokenKind::kOp:
      if (t.is_op("(")) {
        ts.next();
        auto inner = parse_or(ts);
        ts.expect_op(")");
        return inner;
      }
      break;
    case TokenKind::kEnd:
      break;
  }
  ts.fail("expected an expression", {"field", "literal", "function", "("});
}

ExprPtr parse_unary(TokenStream& ts) {
  if (ts.peek().is_op("-")) {
    auto off = ts.next().offset;
    return make(Expr::Kind::kUnary, "-", {parse_unary(ts)}, off);
  }
  return parse_primary(ts);
}

ExprPtr parse_product(TokenStream& ts) {
  auto lhs = parse_unary(ts);
  while (ts.peek().is_op("*") || ts.peek().is_op("/") || ts.peek().is_op("%")) {
    Token op = ts.next();
    lhs = make(Expr::Kind::kBinary, op.text, {lhs, parse_unary(ts)}, op.offset);
  }
  return lhs;
}

ExprPtr parse_sum(TokenStream& ts) {
  auto lhs = parse_product(ts);
  while (ts.peek().is_op("+") || ts.peek().is_op("-")) {
    Token op = ts.next();
    lhs = make(Expr::Kind::kBinary, op.text, {lhs, parse_product(ts)}, op.offset);
  }
  return lhs;
}

ExprPtr parse_cmp(TokenStream& ts) {
  auto lhs = parse_sum(ts);
  for (const char* op : {"==", "!=", "<=", ">=", "=", "<", ">"}) {
    if (ts.peek().is_op(op)) {
      Token t = ts.next();
      std::string name = t.text == "=" ? "==" : t.text;
      return make(Expr::Kind::kBinary, name, {lhs, parse_sum(ts)}, t.offset);
    }
  }
  return lhs;
}

ExprPtr parse_not(TokenStream& ts) {
  if (ts.peek().is_word("NOT") || ts.peek().is_op("!")) {
    auto off = ts.next().offset;
    return make(Expr::Kind::kUnary, "NOT", {parse_not(ts)}, off);
  }
  return parse_cmp(ts);
}

bool starts_operand(const Token& t) {
  if (t.kind == TokenKind::kEnd) return false;
  if (t.kind == TokenKind::kOp) return t.text == "(" || t.text == "-" || t.text == "!";
  if (t.is_word("OR") || t.is_word("AND") || t.is_word("by") || t.is_word("as")) return false;
  return true;
}

ExprPtr parse_and(TokenStream& ts) {
  auto lhs = parse_not(ts);
  while (true) {
    if (ts.peek().is_word("AND")) {
      auto off = ts.next().offset;
      lhs = make(Expr::Kind::kBinary, "AND", {lhs, parse_not(ts)}, off);
    } else if (starts_operand(ts.peek()) && !ts.peek().is_op("-")) {
      auto off = ts.peek().offset;
      lhs = make(Expr::Kind::kBinary, "AND", {lhs, parse_not(ts)}, off);
    } else {
      return lhs;
    }
  }
}

ExprPtr parse_or(TokenStream& ts) {
  auto lhs = parse_and(ts);
  while (ts.peek().is_word("OR")) {
    auto off = ts.next().offset;
    lhs = make(Expr::Kind::kBinary, "OR", {lhs, parse_and(ts)}, off);
  }
  return lhs;
}

double require_number(const Value& v, const char* what) {
  auto n = v.as_number();
  if (!n) throw EvalError(std::string("non-numeric operand to ") + what);
  return *n;
}

const boost::regex& cached_regex(const std::string& pattern) {
  static std::mutex mu;
  static std::unordered_map<std::string, boost::regex> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(pattern);
  if (it == cache.end()) {
    try {
      it = cache.emplace(pattern, boost::regex(pattern)).first;
    } catch (const boost::regex_error& e) {
      throw EvalError("bad regular expression '" + pattern + "': " + e.what());
    }
  }
  return it->second;
}

Value call(const Expr& e, const FieldGetter& get, const EvalContext& ctx) {
  auto arg = [&](std::size_t i) { return evaluate(*e.args[i], get, ctx); };
  const std::string& f = e.name;
  if (f == "if") return arg(0).truthy() ? arg(1) : arg(2);
  if (f == "coalesce") {
    for (std::size_t i = 0; i < e.args.size(); ++i) {
      Value v = arg(i);
      if (!v.is_null()) return v;
    }
    return {};
  }
  if (f == "isnull") return Value::boolean(arg(0).is_null());
  if (f == "isnotnull") return Value::boolean(!arg(0).is_null());

  Value a = arg(0);
  if (f.starts_with("detect_")) {
    if (a.is_null()) return Value::boolean(false);
    const std::string uri = a.to_string();
    if (f == "detect_xss") return Value::boolean(security::match_xss(uri).has_value());
    if (f == "detect_sqli") return Value::boolean(security::match_sqli(uri).has_value());
    if (f == "detect_session") return Value::boolean(security::match_session(uri).has_value());
    if (f == "detect_file_exec") return Value::boolean(security::match_file_exec(uri).has_value());
    if (f == "detect_csrf") {
      if (!ctx.lookup) return Value::boolean(false);
      Value target = arg(1), method = arg(2), path = arg(3);
      return Value::boolean(security::match_csrf(a.to_string(), target.to_string(),
                                                 method.to_string(), path.to_string(),
                                                 *ctx.lookup)
                                .has_value());
    }
  }
  if (a.is_null()) return {};
  if (f == "like") {
    Value p = arg(1);
    if (p.is_null()) return Value::boolean(false);
    return Value::boolean(like_match(a.to_string(), p.to_string()));
  }
  if (f == "match") {
    Value p = arg(1);
    if (p.is_null()) return Value::boolean(false);
    const std::string s = a.to_string();
    return Value::boolean(boost::regex_search(s, cached_regex(p.to_string())));
  }
  if (f == "replace") {
    Value p = arg(1), r = arg(2);
    return Value(boost::regex_replace(a.to_string(), cached_regex(p.to_string()), r.to_string()));
  }
  if (f == "len") return Value(static_cast<double>(a.to_string().size()));
  if (f == "lower") return Value(to_lower(a.to_string()));
  if (f == "upper") {
    std::string s = a.to_string();
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return Value(s);
  }
  if (f == "urldecode") return Value(url_decode(a.to_string()));
  if (f == "tostring") return Value(a.to_string());
  if (f == "tonumber") {
    auto n = a.as_number();
    return n ? Value(*n) : Value();
  }
  if (f == "substr") {
    std::string s = a.to_string();
    auto start = static_cast<long long>(require_number(arg(1), "substr"));
    long long from = start > 0 ? start - 1 : std::max<long long>(0, static_cast<long long>(s.size()) + start);
    if (from >= static_cast<long long>(s.size())) return Value(std::string());
    std::size_t len = std::string::npos;
    if (e.args.size() == 3) len = static_cast<std::size_t>(std::max(0.0, require_number(arg(2), "substr")));
    return Value(s.substr(static_cast<std::size_t>(from), len));
  }
  double x = require_number(a, f.c_str());
  if (f == "abs") return Value(std::fabs(x));
  if (f == "floor") return Value(std::floor(x));
  if (f == "ceil") return Value(std::ceil(x));
  if (f == "round") {
    double digits = e.args.size() == 2 ? require_number(arg(1), "round") : 0.0;
    double scale = std::pow(10.0, digits);
    return Value(std::round(x * scale) / scale);
  }
  throw EvalError("unsupported function " + f);
}

}  // namespace

ExprPtr parse_expression(TokenStream& ts) { return parse_or(ts); }

ExprPtr parse_expression(std::string_view text, std::size_t base_offset) {
  TokenStream ts(lex(text, base_offset));
  auto e = parse_or(ts);
  if (!ts.at_end()) ts.fail("unexpected token after expression");
  return e;
}

void collect_fields(const Expr& e, std::vector<std::string>& out) {
  if (e.kind == Expr::Kind::kField) out.push_back(e.name);
  for (const auto& a : e.args) collect_fields(*a, out);
}

Value evaluate(const Expr& e, const FieldGetter& get, const EvalContext& ctx) {
  switch (e.kind) {
    case Expr::Kind::kLiteral:
      return e.literal;
    case Expr::Kind::kField:
      return get(e.name);
    case Expr::Kind::kCall:
      return call(e, get, ctx);
    case Expr::Kind::kUnary: {
      Value v = evaluate(*e.args[0], get, ctx);
      if (e.name == "NOT") return Value::boolean(!v.is_null() && !v.truthy());
      if (v.is_null()) return {};
      return Value(-require_number(v, "unary minus"));
    }
    case Expr::Kind::kBinary: {
      const std::string& op = e.name;
      if (op == "AND") {
        if (!evaluate(*e.args[0], get, ctx).truthy()) return Value::boolean(false);
        return Value::boolean(evaluate(*e.args[1], get, ctx).truthy());
      }
      if (op == "OR") {
        if (evaluate(*e.args[0], get, ctx).truthy()) return Value::boolean(true);
        return Value::boolean(evaluate(*e.args[1], get, ctx).truthy());
      }
      Value a = evaluate(*e.args[0], get, ctx);
      Value b = evaluate(*e.args[1], get, ctx);
      if (op == "==" || op == "!=" || op == "<" || op == "<=" || op == ">" || op == ">=") {
        if (a.is_null() || b.is_null()) return Value::boolean(false);
        int c = compare_values(a, b);
        if (op == "==") return Value::boolean(c == 0);
        if (op == "!=") return Value::boolean(c != 0);
        if (op == "<") return Value::boolean(c < 0);
        if (op == "<=") return Value::boolean(c <= 0);
        if (op == ">") return Value::boolean(c > 0);
        return Value::boolean(c >= 0);
      }
      if (a.is_null() || b.is_null()) return {};
      if (op == "+") {
        auto na = a.as_number(), nb = b.as_number();
        if (na && nb) return Value(*na + *nb);
        return Value(a.to_string() + b.to_string());
      }
      double x = require_number(a, op.c_str());
      double y = require_number(b, op.c_str());
      if (op == "-") return Value(x - y);
      if (op == "*") return Value(x * y);
      if (op == "/") {
        if (y == 0) return {};
        return Value(x / y);
      }
      if (op == "%") {
        if (y == 0) return {};
        return Value(std::fmod(x, y));
      }
      throw EvalError("unknown operator " + op);
    }
  }
  return {};
}

bool like_match(std::string_view text, std::string_view pattern) {
  // Iterative wildcard matching with single-star backtracking.
  std::size_t t = 0, p = 0;
  std::size_t star_p = std::string_view::npos, star_t = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '*' || pattern[p] == '%')) {
      star_p = p++;
      star_t = t;
    } else if (p < pattern.size() && (pattern[p] == '_' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (star_p != std::string_view::npos) {
      p = star_p + 1;
      t = ++star_t;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && (pattern[p] == '*' || pattern[p] == '%')) ++p;
  return p == pattern.size();
}

std::optional<std::int64_t> parse_duration(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == 0) return std::nullopt;
  auto n = parse_number(text.substr(0, i));
  if (!n) return std::nullopt;
  std::string_view unit = text.substr(i);
  static const std::map<std::string_view, std::int64_t> kUnits = {
      {"us", 1},         {"ms", 1000},          {"s", 1'000'000},   {"", 1'000'000},
      {"m", 60'000'000}, {"h", 3'600'000'000LL}, {"d", 86'400'000'000LL}};
  auto it = kUnits.find(unit);
  if (it == kUnits.end()) return std::nullopt;
  return static_cast<std::int64_t>(*n) * it->second;
}

}  // namespace logforge::query
