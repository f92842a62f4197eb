#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "logforge/error.hpp"
#include "logforge/lexer.hpp"
#include "logforge/value.hpp"

namespace logforge::security {
class RefererLookup;
}

namespace logforge::query {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { kLiteral, kField, kUnary, kBinary, kCall };
  Kind kind = Kind::kLiteral;
  Value literal;
  std::string name;  // field name, operator, or function name
  std::vector<ExprPtr> args;
  std::size_t offset = 0;
};

// Thrown when an operand has the wrong type (e.g. arithmetic on text).
class EvalError : public Error {
 public:
  using Error::Error;
};

// expr := or; or := and (OR and)*; and := not ((AND)? not)*; not := (NOT|!) not | cmp
// cmp := sum (op sum)?; sum := product ((+|-) product)*; product := unary ((*|/|%) unary)*
// Juxtaposed terms are AND-ed. Function names and arity are checked here.
ExprPtr parse_expression(TokenStream& ts);
ExprPtr parse_expression(std::string_view text, std::size_t base_offset = 1);

void collect_fields(const Expr& e, std::vector<std::string>& out);

struct EvalContext {
  const security::RefererLookup* lookup = nullptr;
};

using FieldGetter = std::function<Value(const std::string&)>;

// Null propagates through arithmetic; comparisons and like() on null are false.
Value evaluate(const Expr& e, const FieldGetter& get, const EvalContext& ctx);

// `%` and `*` match any run, `_` any one character; anchored, case-sensitive.
bool like_match(std::string_view text, std::string_view pattern);

// Parses `<n><unit>` with unit us|ms|s|m|h|d into microseconds.
std::optional<std::int64_t> parse_duration(std::string_view text);

}  // namespace logforge::query
