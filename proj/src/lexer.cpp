#include "logforge/lexer.hpp"

#include <cctype>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::query {

bool Token::is_word(std::string_view w) const {
  return kind == TokenKind::kWord && iequals(text, w);
}

namespace {

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
         static_cast<unsigned char>(c) >= 0x80;
}

}  // namespace

std::vector<Token> lex(std::string_view text, std::size_t base_offset) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t off = base_offset + i;
    if (c == '"' || c == '\'') {
      std::string s;
      std::size_t j = i + 1;
      bool closed = false;
      while (j < n) {
        if (text[j] == '\\' && j + 1 < n && (text[j + 1] == c || text[j + 1] == '\\')) {
          s.push_back(text[j + 1]);
          j += 2;
          continue;
        }
        if (text[j] == c) {
          closed = true;
          break;
        }
        s.push_back(text[j++]);
      }
      if (!closed) throw ParseError(off, "unterminated string", {std::string(1, c)});
      out.push_back({TokenKind::kString, std::move(s), off});
      i = j + 1;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      if (j + 1 < n && text[j] == '.' && std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
        ++j;
        while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      }
      if (j < n && word_char(text[j])) {
        while (j < n && word_char(text[j])) ++j;
        out.push_back({TokenKind::kWord, std::string(text.substr(i, j - i)), off});
      } else {
        out.push_back({TokenKind::kNumber, std::string(text.substr(i, j - i)), off});
      }
      i = j;
      continue;
    }
    if (word_char(c)) {
      std::size_t j = i;
      while (j < n && word_char(text[j])) ++j;
      out.push_back({TokenKind::kWord, std::string(text.substr(i, j - i)), off});
      i = j;
      continue;
    }
    if (i + 1 < n) {
      std::string_view two = text.substr(i, 2);
      if (two == "==" || two == "!=" || two == "<=" || two == ">=") {
        out.push_back({TokenKind::kOp, std::string(two), off});
        i += 2;
        continue;
      }
    }
    if (std::string_view("=<>+-*/%!(),").find(c) != std::string_view::npos) {
      out.push_back({TokenKind::kOp, std::string(1, c), off});
      ++i;
      continue;
    }
    throw ParseError(off, std::string("unexpected character '") + c + "'");
  }
  out.push_back({TokenKind::kEnd, "", base_offset + n});
  return out;
}

const Token& TokenStream::peek(std::size_t ahead) const {
  std::size_t p = pos_ + ahead;
  return p < toks_.size() ? toks_[p] : toks_.back();
}

const Token& TokenStream::next() {
  const Token& t = peek();
  if (pos_ < toks_.size() - 1) ++pos_;
  return t;
}

bool TokenStream::accept_op(std::string_view op) {
  if (!peek().is_op(op)) return false;
  next();
  return true;
}

bool TokenStream::accept_word(std::string_view w) {
  if (!peek().is_word(w)) return false;
  next();
  return true;
}

void TokenStream::expect_op(std::string_view op) {
  if (!accept_op(op)) fail("expected '" + std::string(op) + "'", {std::string(op)});
}

std::string TokenStream::expect_name(std::string_view what) {
  const Token& t = peek();
  if (t.kind == TokenKind::kWord || t.kind == TokenKind::kString ||
      t.kind == TokenKind::kNumber) {
    next();
    return t.text;
  }
  fail("expected " + std::string(what), {std::string(what)});
}

void TokenStream::fail(const std::string& message, std::vector<std::string> expected) const {
  const Token& t = peek();
  std::string got = t.kind == TokenKind::kEnd ? "end of stage" : "'" + t.text + "'";
  throw ParseError(t.offset, message + ", got " + got, std::move(expected));
}

}  // namespace logforge::query
