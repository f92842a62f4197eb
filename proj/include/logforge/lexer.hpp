#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace logforge::query {

enum class TokenKind {
  kWord,    // identifiers, keywords, bare values (may start with a digit)
  kNumber,  // pure numeric literal
  kString,  // quoted with ' or "
  kOp,      // = == != < <= > >= + - * / % ! ( ) ,
  kEnd,
};

struct Token {
  TokenKind kind;
  std::string text;
  std::size_t offset;  // 1-based into the full query text

  bool is_op(std::string_view op) const { return kind == TokenKind::kOp && text == op; }
  bool is_word(std::string_view w) const;  // case-insensitive keyword match
};

// Tokenizes `text`, whose first character sits at 1-based `base_offset` of
// the whole query. Throws ParseError on an unterminated string.
std::vector<Token> lex(std::string_view text, std::size_t base_offset);

// Cursor over a token vector with error helpers.
class TokenStream {
 public:
  explicit TokenStream(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  const Token& peek(std::size_t ahead = 0) const;
  const Token& next();
  bool at_end() const { return peek().kind == TokenKind::kEnd; }
  bool accept_op(std::string_view op);
  bool accept_word(std::string_view w);
  void expect_op(std::string_view op);
  // A field name or bare word (word, string or number token).
  std::string expect_name(std::string_view what);
  [[noreturn]] void fail(const std::string& message, std::vector<std::string> expected = {}) const;

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace logforge::query
