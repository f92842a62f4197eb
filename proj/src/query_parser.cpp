#include "logforge/query.hpp"

#include <cctype>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::query {

std::string_view to_string(StageKind k) {
  switch (k) {
    case StageKind::kSearch: return "search";
    case StageKind::kWhere: return "where";
    case StageKind::kEval: return "eval";
    case StageKind::kStats: return "stats";
    case StageKind::kTop: return "top";
    case StageKind::kTimechart: return "timechart";
    case StageKind::kTransaction: return "transaction";
    case StageKind::kTable: return "table";
    case StageKind::kSort: return "sort";
    case StageKind::kHead: return "head";
    case StageKind::kFields: return "fields";
    case StageKind::kAnomalyDetection: return "anomalydetection";
    case StageKind::kFit: return "fit";
    case StageKind::kApply: return "apply";
    case StageKind::kClassificationStatistics: return "classificationstatistics";
    case StageKind::kConfusionMatrix: return "confusionmatrix";
    case StageKind::kPauses: return "pauses";
    case StageKind::kInterarrival: return "interarrival";
  }
  return "?";
}

std::vector<std::pair<std::string, std::size_t>> split_pipeline(std::string_view text) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t start = 0;
  char quote = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i < text.size()) {
      char c = text[i];
      if (quote) {
        if (c == '\\' && i + 1 < text.size()) ++i;
        else if (c == quote) quote = 0;
        continue;
      }
      if (c == '"' || c == '\'') {
        quote = c;
        continue;
      }
      if (c != '|') continue;
    }
    out.emplace_back(std::string(text.substr(start, i - start)), start + 1);
    start = i + 1;
  }
  return out;
}

namespace {

const std::vector<std::string> kStageNames = {
    "where", "eval", "stats", "chart", "top", "timechart", "transaction", "table", "sort",
    "head", "fields", "anomalydetection", "fit", "apply", "classificationstatistics",
    "confusionmatrix", "pauses", "interarrival", "search"};

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

// Search terms are scanned directly from text: whitespace separated, with
// quoted phrases and field=value / field!=value pairs.
std::vector<SearchTerm> parse_search_terms(std::string_view text, std::size_t base, bool first) {
  std::vector<SearchTerm> terms;
  std::size_t i = 0;
  bool negate = false;
  bool skipped_keyword = false;
  auto read_quoted = [&](std::size_t& j) {
    const char q = text[j];
    const std::size_t open = j;
    std::string s;
    ++j;
    while (j < text.size() && text[j] != q) {
      if (text[j] == '\\' && j + 1 < text.size()) ++j;
      s.push_back(text[j++]);
    }
    if (j >= text.size()) throw ParseError(base + open, "unterminated string", {std::string(1, q)});
    ++j;
    return s;
  };
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const std::size_t off = base + i;
    if (text[i] == '"' || text[i] == '\'') {
      SearchTerm t;
      t.kind = SearchTerm::Kind::kPhrase;
      t.value = read_quoted(i);
      t.offset = off;
      t.negated = std::exchange(negate, false);
      terms.push_back(std::move(t));
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
           text[j] != '=' && text[j] != '!' && text[j] != '"' && text[j] != '\'')
      ++j;
    std::string word(text.substr(i, j - i));
    bool cmp = j < text.size() && (text[j] == '=' || (text[j] == '!' && j + 1 < text.size() &&
                                                      text[j + 1] == '='));
    if (cmp) {
      if (!is_identifier(word))
        throw ParseError(off, "invalid field name '" + word + "'", {"field"});
      SearchTerm t;
      t.not_equal = text[j] == '!';
      j += t.not_equal ? 2 : 1;
      if (j < text.size() && (text[j] == '"' || text[j] == '\'')) {
        t.value = read_quoted(j);
      } else {
        std::size_t k = j;
        while (k < text.size() && !std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        t.value = std::string(text.substr(j, k - j));
        j = k;
      }
      if (t.value.empty()) throw ParseError(base + j, "expected a value after '='", {"value"});
      t.kind = iequals(word, "index") ? SearchTerm::Kind::kIndex : SearchTerm::Kind::kField;
      t.field = iequals(word, "index") ? "index" : word;
      t.offset = off;
      t.negated = std::exchange(negate, false);
      if (t.kind == SearchTerm::Kind::kIndex && (t.negated || t.not_equal))
        throw ParseError(off, "index terms cannot be negated", {"index=<name>"});
      terms.push_back(std::move(t));
      i = j;
      continue;
    }
    if (j < text.size() && j == i) {
      // Lone '=' or '!' or a quote in the middle of a word.
      throw ParseError(off, std::string("unexpected '") + text[j] + "'", {"term"});
    }
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    word = std::string(text.substr(i, j - i));
    i = j;
    if (first && !skipped_keyword && terms.empty() && !negate && iequals(word, "search")) {
      skipped_keyword = true;
      continue;
    }
    skipped_keyword = true;
    if (word == "NOT") {
      if (negate) throw ParseError(off, "double NOT", {"term"});
      negate = true;
      continue;
    }
    if (word == "AND") continue;
    if (word == "OR") throw ParseError(off, "OR is not supported in search terms; use where", {"term"});
    if (word == "*") {
      if (negate) throw ParseError(off, "cannot negate '*'", {"term"});
      continue;
    }
    SearchTerm t;
    t.kind = SearchTerm::Kind::kWord;
    t.value = word;
    t.offset = off;
    t.negated = std::exchange(negate, false);
    terms.push_back(std::move(t));
  }
  if (negate) throw ParseError(base + text.size(), "NOT must be followed by a term", {"term"});
  return terms;
}

std::size_t parse_count(TokenStream& ts, std::string_view what) {
  const Token& t = ts.peek();
  if (t.kind != TokenKind::kNumber || t.text.find('.') != std::string::npos)
    ts.fail("expected " + std::string(what), {"integer"});
  ts.next();
  return static_cast<std::size_t>(std::stoull(t.text));
}

// key=value options; the value is a bare word, number or string.
bool parse_option(TokenStream& ts, std::string& key, std::string& value, std::size_t& offset) {
  if (!(ts.peek().kind == TokenKind::kWord && ts.peek(1).is_op("="))) return false;
  offset = ts.peek().offset;
  key = to_lower(ts.next().text);
  ts.next();
  const Token& v = ts.peek();
  if (v.kind == TokenKind::kEnd || v.kind == TokenKind::kOp) ts.fail("expected option value", {"value"});
  value = ts.next().text;
  return true;
}

std::int64_t parse_span(TokenStream& ts, const std::string& value, std::size_t offset) {
  auto d = parse_duration(value);
  if (!d || *d <= 0)
    throw ParseError(offset, "invalid duration '" + value + "'", {"<n>us", "<n>ms", "<n>s", "<n>m", "<n>h"});
  (void)ts;
  return *d;
}

const std::vector<std::string> kAggFuncs = {"count", "sum", "avg", "max", "min", "dc"};

Aggregation parse_aggregation(TokenStream& ts) {
  const Token& t = ts.peek();
  if (t.kind != TokenKind::kWord) ts.fail("expected an aggregation", kAggFuncs);
  std::string func = to_lower(t.text);
  bool known = false;
  for (const auto& f : kAggFuncs) known = known || f == func;
  if (!known) ts.fail("unknown aggregation '" + t.text + "'", kAggFuncs);
  ts.next();
  Aggregation a;
  a.func = func;
  if (ts.accept_op("(")) {
    a.field = ts.expect_name("field");
    ts.expect_op(")");
  } else if (func != "count") {
    ts.fail("expected '(' after " + func, {"("});
  }
  a.alias = a.field.empty() ? func : func + "(" + a.field + ")";
  if (ts.accept_word("as")) a.alias = ts.expect_name("alias");
  return a;
}

std::vector<std::string> parse_field_list(TokenStream& ts, bool allow_empty) {
  std::vector<std::string> out;
  while (!ts.at_end()) {
    const Token& t = ts.peek();
    if (t.kind == TokenKind::kOp && t.text == ",") {
      ts.next();
      continue;
    }
    if (t.kind != TokenKind::kWord && t.kind != TokenKind::kString) break;
    if (ts.peek(1).is_op("=") || ts.peek(1).is_op("(")) break;
    if (t.is_word("by") || t.is_word("into") || t.is_word("from") || t.is_word("as")) break;
    out.push_back(ts.next().text);
  }
  if (out.empty() && !allow_empty) ts.fail("expected a field name", {"field"});
  return out;
}

void expect_end(TokenStream& ts) {
  if (!ts.at_end()) ts.fail("unexpected token", {"'|'", "end of query"});
}

Stage parse_stage(std::string_view text, std::size_t base) {
  Stage st;
  st.offset = base;
  st.text = std::string(trim(text));
  TokenStream ts(lex(text, base));
  const Token& head = ts.peek();
  if (head.kind != TokenKind::kWord) ts.fail("expected a command", kStageNames);
  const std::string cmd = to_lower(head.text);
  ts.next();

  if (cmd == "search") {
    // Subsequent search stages filter like the first one.
    std::size_t skip = static_cast<std::size_t>(head.offset - base) + head.text.size();
    st.kind = StageKind::kSearch;
    st.terms = parse_search_terms(text.substr(skip), base + skip, false);
    for (const auto& t : st.terms)
      if (t.kind == SearchTerm::Kind::kIndex)
        throw ParseError(t.offset, "index= is only valid in the first stage", {"term"});
    return st;
  }
  if (cmd == "where") {
    st.kind = StageKind::kWhere;
    st.predicate = parse_expression(ts);
    expect_end(ts);
    return st;
  }
  if (cmd == "eval") {
    st.kind = StageKind::kEval;
    do {
      std::string name = ts.expect_name("field");
      ts.expect_op("=");
      st.assignments.emplace_back(std::move(name), parse_expression(ts));
    } while (ts.accept_op(","));
    expect_end(ts);
    return st;
  }
  if (cmd == "stats" || cmd == "chart") {
    st.kind = StageKind::kStats;
    do {
      st.aggregations.push_back(parse_aggregation(ts));
      ts.accept_op(",");
    } while (!ts.at_end() && !ts.peek().is_word("by"));
    if (ts.accept_word("by")) st.by = parse_field_list(ts, false);
    expect_end(ts);
    return st;
  }
  if (cmd == "top") {
    st.kind = StageKind::kTop;
    st.limit = 10;
    if (ts.peek().kind == TokenKind::kNumber) st.limit = parse_count(ts, "a row count");
    std::string k, v;
    std::size_t off = 0;
    while (parse_option(ts, k, v, off)) {
      if (k != "limit") throw ParseError(off, "unknown top option '" + k + "'", {"limit"});
      auto n = parse_number(v);
      if (!n || *n < 0 || *n != static_cast<double>(static_cast<long long>(*n)))
        throw ParseError(off, "limit must be a non-negative integer", {"integer"});
      st.limit = static_cast<std::size_t>(*n);
    }
    st.fields = parse_field_list(ts, false);
    if (st.fields.size() != 1) throw ParseError(base, "top takes exactly one field", {"field"});
    expect_end(ts);
    return st;
  }
  if (cmd == "timechart") {
    st.kind = StageKind::kTimechart;
    std::string k, v;
    std::size_t off = 0;
    while (parse_option(ts, k, v, off)) {
      if (k != "span") throw ParseError(off, "unknown timechart option '" + k + "'", {"span"});
      st.span_us = parse_span(ts, v, off);
    }
    if (st.span_us == 0) ts.fail("timechart requires span=<duration>", {"span"});
    do {
      st.aggregations.push_back(parse_aggregation(ts));
      ts.accept_op(",");
    } while (!ts.at_end());
    return st;
  }
  if (cmd == "transaction") {
    st.kind = StageKind::kTransaction;
    st.transaction.field = ts.expect_name("field");
    std::string k, v;
    std::size_t off = 0;
    while (parse_option(ts, k, v, off)) {
      if (k == "startswith") st.transaction.starts_with = v;
      else if (k == "endswith") st.transaction.ends_with = v;
      else if (k == "maxpause") st.transaction.max_pause_us = parse_span(ts, v, off);
      else
        throw ParseError(off, "unknown transaction option '" + k + "'",
                         {"startswith", "endswith", "maxpause"});
    }
    expect_end(ts);
    return st;
  }
  if (cmd == "table") {
    st.kind = StageKind::kTable;
    st.fields = parse_field_list(ts, false);
    expect_end(ts);
    return st;
  }
  if (cmd == "fields") {
    st.kind = StageKind::kFields;
    if (ts.accept_op("-")) st.remove = true;
    else ts.accept_op("+");
    st.fields = parse_field_list(ts, false);
    expect_end(ts);
    return st;
  }
  if (cmd == "sort") {
    st.kind = StageKind::kSort;
    if (ts.peek().kind == TokenKind::kNumber) st.limit = parse_count(ts, "a row limit");
    do {
      SortKey key;
      if (ts.accept_op("-")) key.descending = true;
      else ts.accept_op("+");
      key.field = ts.expect_name("field");
      st.sort_keys.push_back(std::move(key));
    } while (ts.accept_op(",") || (!ts.at_end()));
    expect_end(ts);
    return st;
  }
  if (cmd == "head") {
    st.kind = StageKind::kHead;
    st.limit = 10;
    if (!ts.at_end()) st.limit = parse_count(ts, "a row count");
    expect_end(ts);
    return st;
  }
  if (cmd == "anomalydetection") {
    st.kind = StageKind::kAnomalyDetection;
    st.params["action"] = "annotate";
    while (!ts.at_end()) {
      std::string k, v;
      std::size_t off = 0;
      if (parse_option(ts, k, v, off)) {
        if (k == "action") {
          if (v != "annotate" && v != "filter")
            throw ParseError(off, "action must be annotate or filter", {"annotate", "filter"});
        } else if (k == "threshold") {
          if (!parse_number(v)) throw ParseError(off, "threshold must be a number", {"number"});
        } else {
          throw ParseError(off, "unknown anomalydetection option '" + k + "'", {"action", "threshold"});
        }
        st.params[k] = v;
        continue;
      }
      auto more = parse_field_list(ts, true);
      if (more.empty()) ts.fail("unexpected token", {"field", "action=", "threshold="});
      st.fields.insert(st.fields.end(), more.begin(), more.end());
    }
    return st;
  }
  if (cmd == "fit") {
    st.kind = StageKind::kFit;
    const Token& algo = ts.peek();
    if (algo.is_word("LogisticRegression")) {
      st.algorithm = "LogisticRegression";
      ts.next();
      st.response = ts.expect_name("response field");
      if (!ts.accept_word("from")) ts.fail("expected 'from'", {"from"});
    } else if (algo.is_word("PCA") || algo.is_word("KernelPCA")) {
      st.algorithm = "PCA";
      ts.next();
    } else {
      ts.fail("unknown algorithm", {"LogisticRegression", "PCA", "KernelPCA"});
    }
    while (!ts.at_end() && !ts.peek().is_word("into")) {
      std::string k, v;
      std::size_t off = 0;
      if (parse_option(ts, k, v, off)) {
        st.params[k] = v;
        continue;
      }
      auto more = parse_field_list(ts, true);
      if (more.empty()) ts.fail("unexpected token", {"field", "option", "into"});
      st.fields.insert(st.fields.end(), more.begin(), more.end());
    }
    if (st.fields.empty()) ts.fail("fit needs at least one field", {"field"});
    for (const auto& [k, v] : st.params) {
      bool ok = st.algorithm == "PCA" ? k == "k"
                                      : (k == "fit_intercept" || k == "train_fraction" || k == "seed");
      if (!ok) throw ParseError(base, "unknown " + st.algorithm + " option '" + k + "'", {});
    }
    if (st.algorithm == "PCA" && !st.params.contains("k")) st.params["k"] = "2";
    if (ts.accept_word("into")) st.model_name = ts.expect_name("model name");
    expect_end(ts);
    return st;
  }
  if (cmd == "apply") {
    st.kind = StageKind::kApply;
    st.model_name = ts.expect_name("model name");
    expect_end(ts);
    return st;
  }
  if (cmd == "classificationstatistics" || cmd == "confusionmatrix") {
    st.kind = cmd == "confusionmatrix" ? StageKind::kConfusionMatrix
                                       : StageKind::kClassificationStatistics;
    st.fields = parse_field_list(ts, false);
    if (st.fields.size() != 2)
      throw ParseError(base, cmd + " takes an actual and a predicted field", {"field"});
    expect_end(ts);
    return st;
  }
  if (cmd == "pauses" || cmd == "interarrival") {
    st.kind = cmd == "pauses" ? StageKind::kPauses : StageKind::kInterarrival;
    const std::string want = cmd == "pauses" ? "threshold" : "bin";
    std::string k, v;
    std::size_t off = 0;
    while (parse_option(ts, k, v, off)) {
      if (k != want) throw ParseError(off, "unknown " + cmd + " option '" + k + "'", {want});
      st.span_us = parse_span(ts, v, off);
    }
    if (st.span_us == 0) ts.fail(cmd + " requires " + want + "=<duration>", {want});
    expect_end(ts);
    return st;
  }
  throw ParseError(head.offset, "unknown command '" + head.text + "'", kStageNames);
}

// '*' matches any run; everything else is literal.
bool glob_match(std::string_view text, std::string_view pat) {
  std::size_t t = 0, p = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pat.size() && pat[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pat.size() && pat[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pat.size() && pat[p] == '*') ++p;
  return p == pat.size();
}

}  // namespace

Query parse(std::string_view text) {
  Query q;
  q.source_text = std::string(text);
  auto pieces = split_pipeline(text);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const auto& [piece, off] = pieces[i];
    if (trim(piece).empty()) {
      if (i == 0 && pieces.size() == 1) {
        throw ParseError(1, "empty query", {"search terms", "*"});
      }
      std::size_t at = off;
      while (at - off < piece.size() && std::isspace(static_cast<unsigned char>(piece[at - off]))) ++at;
      throw ParseError(at, "empty pipeline stage", {"command"});
    }
    if (i == 0) {
      Stage st;
      st.kind = StageKind::kSearch;
      st.offset = off;
      st.text = std::string(trim(piece));
      st.terms = parse_search_terms(piece, off, true);
      q.stages.push_back(std::move(st));
    } else {
      q.stages.push_back(parse_stage(piece, off));
    }
  }
  return q;
}

bool match_word(std::string_view raw, const SearchTerm& t) {
  if (t.kind == SearchTerm::Kind::kPhrase) return icontains(raw, t.value);
  if (t.has_wildcard()) return glob_match(to_lower(raw), "*" + to_lower(t.value) + "*");
  // Every token of the word must appear as a token of the raw text.
  std::string lower = to_lower(raw);
  std::string word = to_lower(t.value);
  auto is_tok = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
  std::size_t i = 0;
  bool any = false;
  while (i < word.size()) {
    while (i < word.size() && !is_tok(static_cast<unsigned char>(word[i]))) ++i;
    std::size_t j = i;
    while (j < word.size() && is_tok(static_cast<unsigned char>(word[j]))) ++j;
    if (j == i) break;
    any = true;
    std::string_view tok(word.data() + i, j - i);
    bool found = false;
    std::size_t p = 0;
    while ((p = lower.find(tok, p)) != std::string::npos) {
      bool left = p == 0 || !is_tok(static_cast<unsigned char>(lower[p - 1]));
      bool right = p + tok.size() == lower.size() ||
                   !is_tok(static_cast<unsigned char>(lower[p + tok.size()]));
      if (left && right) {
        found = true;
        break;
      }
      ++p;
    }
    if (!found) return false;
    i = j;
  }
  // A word made only of punctuation falls back to substring search.
  return any || lower.find(word) != std::string::npos;
}

bool match_field_value(const std::string* value, const SearchTerm& t) {
  if (!value) return false;
  bool eq = t.has_wildcard() ? glob_match(to_lower(*value), to_lower(t.value)) : iequals(*value, t.value);
  return t.not_equal ? !eq : eq;
}

}  // namespace logforge::query
