// Reference interpreter for a subset of the search language plus a random
// query generator that emits matching (text, reference program) pairs.
#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "logforge/event.hpp"
#include "logforge/executor.hpp"
#include "logforge/generator.hpp"
#include "logforge/index_store.hpp"
#include "logforge/ingest.hpp"
#include "logforge/query.hpp"
#include "logforge/value.hpp"

namespace logforge::testing {

namespace ref {

// null, number or text
struct Cell {
  enum Kind { kNull, kNum, kText } kind = kNull;
  double num = 0;
  std::string text;

  static Cell null() { return {}; }
  static Cell number(double d) { return {kNum, d, {}}; }
  static Cell str(std::string s) { return {kText, 0, std::move(s)}; }
};

inline std::optional<double> number_of(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<double> number_of(const Cell& c) {
  if (c.kind == Cell::kNum) return c.num;
  if (c.kind == Cell::kText) return number_of(c.text);
  return std::nullopt;
}

inline std::string text_of(const Cell& c) {
  if (c.kind == Cell::kText) return c.text;
  if (c.kind == Cell::kNull) return "";
  std::ostringstream o;
  if (c.num == std::floor(c.num) && std::fabs(c.num) < 1e15) o << static_cast<long long>(c.num);
  else o.precision(10), o << c.num;
  return o.str();
}

// Numbers compare numerically when both sides are numeric, else as text;
// null sorts last.
inline int order(const Cell& a, const Cell& b) {
  if (a.kind == Cell::kNull || b.kind == Cell::kNull) {
    if (a.kind == b.kind) return 0;
    return a.kind == Cell::kNull ? 1 : -1;
  }
  auto x = number_of(a), y = number_of(b);
  if (x && y) return *x < *y ? -1 : (*x > *y ? 1 : 0);
  auto s = text_of(a), t = text_of(b);
  return s < t ? -1 : (s > t ? 1 : 0);
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

inline std::set<std::string> words(const std::string& s) {
  std::set<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (word_char(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.insert(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(cur);
  return out;
}

// '*' matches any run; everything else literally.
inline bool glob(const std::string& text, const std::string& pat) {
  std::vector<bool> row(text.size() + 1, false), next;
  row[0] = true;
  for (char pc : pat) {
    next.assign(text.size() + 1, false);
    if (pc == '*') {
      bool any = false;
      for (std::size_t i = 0; i <= text.size(); ++i) {
        any = any || row[i];
        next[i] = any;
      }
    } else {
      for (std::size_t i = 0; i < text.size(); ++i)
        if (row[i] && text[i] == pc) next[i + 1] = true;
    }
    row.swap(next);
  }
  return row[text.size()];
}

struct Term {
  enum Kind { kWord, kPhrase, kField } kind = kWord;
  bool negated = false;
  bool not_equal = false;
  std::string field, value;
};

inline const std::string* lookup(const Event& e, const std::string& f) {
  if (f == "host") return &e.host;
  if (f == "source") return &e.source;
  if (f == "sourcetype") return &e.sourcetype;
  if (f == "_raw") return &e.raw;
  auto it = e.fields.find(f);
  return it == e.fields.end() ? nullptr : &it->second;
}

inline bool hit(const Event& e, const Term& t) {
  bool wild = t.value.find('*') != std::string::npos;
  if (t.kind == Term::kPhrase) return lower(e.raw).find(lower(t.value)) != std::string::npos;
  if (t.kind == Term::kWord) {
    if (wild) return glob(lower(e.raw), "*" + lower(t.value) + "*");
    auto have = words(e.raw);
    auto want = words(t.value);
    if (want.empty()) return false;
    return std::all_of(want.begin(), want.end(), [&](const std::string& w) { return have.count(w) > 0; });
  }
  const std::string* v = lookup(e, t.field);
  if (!v) return false;
  bool eq = wild ? glob(lower(*v), lower(t.value)) : lower(*v) == lower(t.value);
  return t.not_equal ? !eq : eq;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  std::optional<std::size_t> col(const std::string& n) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == n) return i;
    return std::nullopt;
  }
};

inline Table scan(const std::vector<Event>& events, const std::vector<Term>& terms) {
  std::vector<const Event*> keep;
  for (const auto& e : events) {
    bool ok = true;
    for (const auto& t : terms)
      if (hit(e, t) == t.negated) {
        ok = false;
        break;
      }
    if (ok) keep.push_back(&e);
  }
  Table t;
  t.columns = {"_time", "_raw", "host", "source", "sourcetype", "index"};
  std::set<std::string> names;
  for (const auto* e : keep)
    for (const auto& [k, v] : e->fields) names.insert(k);
  for (const auto& n : names)
    if (!t.col(n)) t.columns.push_back(n);
  for (const auto* e : keep) {
    std::vector<Cell> r(t.columns.size());
    r[0] = Cell::number(static_cast<double>(e->timestamp));
    r[1] = Cell::str(e->raw);
    r[2] = Cell::str(e->host);
    r[3] = Cell::str(e->source);
    r[4] = Cell::str(e->sourcetype);
    r[5] = Cell::str("main");
    for (std::size_t c = 6; c < t.columns.size(); ++c) {
      auto it = e->fields.find(t.columns[c]);
      if (it != e->fields.end()) r[c] = Cell::str(it->second);
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

struct Agg {
  std::string func, field, alias;
};

inline Cell aggregate(const Agg& a, const std::vector<const std::vector<Cell>*>& rows, std::optional<std::size_t> c) {
  if (a.field.empty()) return Cell::number(static_cast<double>(rows.size()));
  std::vector<Cell> vals;
  if (c)
    for (const auto* r : rows)
      if ((*r)[*c].kind != Cell::kNull) vals.push_back((*r)[*c]);
  if (a.func == "count") return Cell::number(static_cast<double>(vals.size()));
  if (a.func == "dc") {
    std::set<std::string> d;
    for (const auto& v : vals) d.insert(text_of(v));
    return Cell::number(static_cast<double>(d.size()));
  }
  std::vector<double> nums;
  for (const auto& v : vals)
    if (auto n = number_of(v)) nums.push_back(*n);
  if (nums.empty()) return Cell::null();
  if (a.func == "sum" || a.func == "avg") {
    double s = 0;
    for (double n : nums) s += n;
    return Cell::number(a.func == "sum" ? s : s / static_cast<double>(nums.size()));
  }
  if (a.func == "max") return Cell::number(*std::max_element(nums.begin(), nums.end()));
  return Cell::number(*std::min_element(nums.begin(), nums.end()));
}

inline void stats(Table& t, const std::vector<Agg>& aggs, const std::optional<std::string>& by) {
  std::vector<std::string> keys;
  std::map<std::string, std::vector<const std::vector<Cell>*>> groups;
  std::map<std::string, Cell> key_cell;
  auto bc = by ? t.col(*by) : std::nullopt;
  for (const auto& r : t.rows) {
    std::string k;
    if (by) {
      if (!bc || r[*bc].kind == Cell::kNull) continue;
      k = text_of(r[*bc]);
      if (!key_cell.count(k)) {
        keys.push_back(k);
        key_cell[k] = r[*bc];
      }
    } else if (groups.empty()) {
      keys.push_back(k);
    }
    groups[k].push_back(&r);
  }
  if (!by && keys.empty()) keys.push_back("");
  if (by)
    std::stable_sort(keys.begin(), keys.end(),
                     [&](const std::string& a, const std::string& b) { return order(key_cell[a], key_cell[b]) < 0; });
  Table out;
  if (by) out.columns.push_back(*by);
  for (const auto& a : aggs) out.columns.push_back(a.alias);
  for (const auto& k : keys) {
    std::vector<Cell> row;
    if (by) row.push_back(key_cell[k]);
    for (const auto& a : aggs) row.push_back(aggregate(a, groups[k], a.field.empty() ? std::nullopt : t.col(a.field)));
    out.rows.push_back(std::move(row));
  }
  t = std::move(out);
}

inline void top(Table& t, std::size_t n, const std::string& field) {
  auto c = t.col(field);
  std::vector<std::pair<Cell, std::size_t>> counts;
  std::size_t total = 0;
  if (c)
    for (const auto& r : t.rows) {
      if (r[*c].kind == Cell::kNull) continue;
      ++total;
      auto it = std::find_if(counts.begin(), counts.end(),
                             [&](const auto& p) { return text_of(p.first) == text_of(r[*c]); });
      if (it == counts.end()) counts.emplace_back(r[*c], 1);
      else ++it->second;
    }
  std::stable_sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (n > 0 && counts.size() > n) counts.resize(n);
  Table out;
  out.columns = {field, "count", "percent"};
  for (const auto& [v, k] : counts)
    out.rows.push_back({v, Cell::number(static_cast<double>(k)),
                        Cell::number(std::round(100.0 * static_cast<double>(k) / static_cast<double>(total)))});
  t = std::move(out);
}

inline void sort_by(Table& t, const std::string& field, bool desc, std::size_t limit) {
  auto c = t.col(field);
  if (c)
    std::stable_sort(t.rows.begin(), t.rows.end(), [&](const auto& a, const auto& b) {
      const Cell& x = a[*c];
      const Cell& y = b[*c];
      if ((x.kind == Cell::kNull) != (y.kind == Cell::kNull)) return y.kind == Cell::kNull;
      int o = order(x, y);
      return desc ? o > 0 : o < 0;
    });
  if (limit > 0 && t.rows.size() > limit) t.rows.resize(limit);
}

inline void project(Table& t, const std::vector<std::string>& fields) {
  Table out;
  std::vector<std::optional<std::size_t>> src;
  for (const auto& f : fields) {
    if (std::find(out.columns.begin(), out.columns.end(), f) != out.columns.end()) continue;
    out.columns.push_back(f);
    src.push_back(t.col(f));
  }
  for (const auto& r : t.rows) {
    std::vector<Cell> row;
    for (const auto& s : src) row.push_back(s ? r[*s] : Cell::null());
    out.rows.push_back(std::move(row));
  }
  t = std::move(out);
}

// where <field> <op> <number>: null and missing fail the test.
inline void where(Table& t, const std::string& field, const std::string& op, double rhs) {
  auto c = t.col(field);
  std::vector<std::vector<Cell>> keep;
  for (auto& r : t.rows) {
    if (!c || r[*c].kind == Cell::kNull) continue;
    int o = order(r[*c], Cell::number(rhs));
    bool ok = op == "==" ? o == 0 : op == "!=" ? o != 0 : op == "<" ? o < 0 : op == "<=" ? o <= 0
            : op == ">" ? o > 0 : o >= 0;
    if (ok) keep.push_back(std::move(r));
  }
  t.rows = std::move(keep);
}

// eval <name> = <field> * <k>: rows whose field is not numeric are dropped,
// a missing field yields null.
inline void eval_scale(Table& t, const std::string& name, const std::string& field, double k) {
  auto c = t.col(field);
  auto dst = t.col(name);
  if (!dst) {
    t.columns.push_back(name);
    for (auto& r : t.rows) r.push_back(Cell::null());
    dst = t.columns.size() - 1;
  }
  std::vector<std::vector<Cell>> keep;
  for (auto& r : t.rows) {
    if (!c || r[*c].kind == Cell::kNull) {
      r[*dst] = Cell::null();
      keep.push_back(std::move(r));
      continue;
    }
    auto n = number_of(r[*c]);
    if (!n) continue;
    r[*dst] = Cell::number(*n * k);
    keep.push_back(std::move(r));
  }
  t.rows = std::move(keep);
}

inline void timechart_count(Table& t, std::int64_t span) {
  std::map<std::int64_t, std::size_t> bins;
  auto c = t.col("_time");
  for (const auto& r : t.rows) {
    auto ts = static_cast<std::int64_t>(r[*c].num);
    std::int64_t b = ts / span - ((ts % span != 0 && ts < 0) ? 1 : 0);
    ++bins[b];
  }
  Table out;
  out.columns = {"_time", "count"};
  if (!bins.empty())
    for (auto b = bins.begin()->first; b <= bins.rbegin()->first; ++b)
      out.rows.push_back({Cell::number(static_cast<double>(b * span)),
                          Cell::number(static_cast<double>(bins.count(b) ? bins[b] : 0))});
  t = std::move(out);
}

}  // namespace ref

namespace oracle {

using ref::Cell;

// A query as text plus the reference program that computes it.
struct Case {
  std::string text;
  std::function<ref::Table(const std::vector<Event>&)> run;
};

struct Vocab {
  std::vector<std::string> words;
  std::map<std::string, std::vector<std::string>> values;  // field -> observed values
};

inline Vocab vocabulary(const std::vector<Event>& events, std::mt19937_64& rng) {
  Vocab v;
  std::set<std::string> w;
  std::map<std::string, std::set<std::string>> vals;
  std::uniform_int_distribution<std::size_t> pick(0, events.size() - 1);
  for (int i = 0; i < 300; ++i) {
    const auto& e = events[pick(rng)];
    for (const auto& t : ref::words(e.raw))
      if (t.size() >= 2 && w.size() < 400) w.insert(t);
    for (const auto& [k, val] : e.fields)
      if (val.size() < 40) vals[k].insert(val);
  }
  v.words.assign(w.begin(), w.end());
  v.words.push_back("zzznotthere");
  for (auto& [k, s] : vals) v.values[k].assign(s.begin(), s.end());
  return v;
}

template <class T>
const T& choose(const std::vector<T>& xs, std::mt19937_64& rng) {
  return xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)];
}

inline Case random_case(const Vocab& v, std::mt19937_64& rng) {
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  auto num = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  std::vector<ref::Term> terms;
  std::string text;
  auto add = [&](const std::string& piece, ref::Term t) {
    text += (text.empty() ? "" : " ") + piece;
    terms.push_back(std::move(t));
  };
  int n_terms = num(0, 3);
  if (coin(0.4)) {
    std::string st = coin(0.5) ? "applog" : "accesslog";
    add("sourcetype=" + st, {ref::Term::kField, false, false, "sourcetype", st});
  }
  const std::vector<std::string> fields = {"level", "component", "method", "status", "query_id", "user", "action"};
  for (int i = 0; i < n_terms; ++i) {
    int kind = num(0, 5);
    if (kind <= 1) {
      const auto& w = choose(v.words, rng);
      bool neg = coin(0.2);
      add((neg ? "NOT " : "") + w, {ref::Term::kWord, neg, false, "", w});
    } else if (kind == 2) {
      const auto& w = choose(v.words, rng);
      std::string pat = w.substr(0, std::max<std::size_t>(1, w.size() / 2)) + "*";
      add(pat, {ref::Term::kWord, false, false, "", pat});
    } else {
      const auto& f = choose(fields, rng);
      auto it = v.values.find(f);
      if (it == v.values.end() || it->second.empty()) continue;
      std::string val = choose(it->second, rng);
      if (val.find_first_of(" \"=|()") != std::string::npos) continue;
      if (coin(0.3)) val = val.substr(0, std::max<std::size_t>(1, val.size() / 2)) + "*";
      bool ne = coin(0.15);
      bool neg = !ne && coin(0.15);
      add((neg ? "NOT " : "") + f + (ne ? "!=" : "=") + val, {ref::Term::kField, neg, ne, f, val});
    }
  }
  if (text.empty()) text = "*";

  // Pipeline stages, each paired with its reference step.
  std::vector<std::function<void(ref::Table&)>> steps;
  const std::vector<std::string> numeric = {"ms", "status", "bytes", "queue_depth"};
  const std::vector<std::string> groupers = {"level", "component", "status", "method", "sourcetype", "query_id"};
  int n_stages = num(0, 3);
  bool aggregated = false;
  for (int s = 0; s < n_stages && !aggregated; ++s) {
    int kind = num(0, 8);
    if (kind == 0) {
      std::string f = choose(numeric, rng);
      std::string op = choose(std::vector<std::string>{"<", "<=", ">", ">=", "==", "!="}, rng);
      int k = f == "status" ? choose(std::vector<int>{200, 302, 404, 500}, rng) : num(0, 6000);
      text += " | where " + f + " " + op + " " + std::to_string(k);
      steps.push_back([=](ref::Table& t) { ref::where(t, f, op, k); });
    } else if (kind == 1) {
      std::string f = choose(numeric, rng);
      int k = num(2, 9);
      text += " | eval scaled = " + f + " * " + std::to_string(k);
      steps.push_back([=](ref::Table& t) { ref::eval_scale(t, "scaled", f, k); });
    } else if (kind == 2 || kind == 3) {
      std::vector<ref::Agg> aggs = {{"count", "", "n"}};
      std::string spec = "count as n";
      int extra = num(0, 3);
      for (int a = 0; a < extra; ++a) {
        std::string fn = choose(std::vector<std::string>{"sum", "avg", "max", "min", "dc", "count"}, rng);
        std::string f = fn == "dc" ? choose(groupers, rng) : choose(numeric, rng);
        std::string alias = "a" + std::to_string(a);
        aggs.push_back({fn, f, alias});
        spec += ", " + fn + "(" + f + ") as " + alias;
      }
      std::optional<std::string> by;
      if (coin(0.7)) by = choose(groupers, rng);
      text += " | stats " + spec + (by ? " by " + *by : "");
      steps.push_back([=](ref::Table& t) { ref::stats(t, aggs, by); });
      aggregated = true;
    } else if (kind == 4) {
      std::string f = choose(numeric, rng);
      bool desc = coin(0.5);
      std::size_t lim = static_cast<std::size_t>(num(1, 30));
      text += " | sort " + std::string(desc ? "-" : "") + f + " | head " + std::to_string(lim);
      steps.push_back([=](ref::Table& t) { ref::sort_by(t, f, desc, lim); });
    } else if (kind == 5) {
      std::size_t lim = static_cast<std::size_t>(num(1, 50));
      text += " | head " + std::to_string(lim);
      steps.push_back([=](ref::Table& t) {
        if (t.rows.size() > lim) t.rows.resize(lim);
      });
    } else if (kind == 6) {
      std::size_t n = static_cast<std::size_t>(num(1, 8));
      std::string f = choose(groupers, rng);
      text += " | top " + std::to_string(n) + " " + f;
      steps.push_back([=](ref::Table& t) { ref::top(t, n, f); });
      aggregated = true;
    } else if (kind == 7) {
      std::vector<std::string> cols = {"_time", choose(groupers, rng), choose(numeric, rng)};
      text += " | table " + cols[0] + ", " + cols[1] + ", " + cols[2];
      steps.push_back([=](ref::Table& t) { ref::project(t, cols); });
    } else {
      std::int64_t span = choose(std::vector<std::int64_t>{60, 600, 3600}, rng);
      text += " | timechart span=" + std::to_string(span) + "s count";
      steps.push_back([=](ref::Table& t) { ref::timechart_count(t, span * 1000000); });
      aggregated = true;
    }
  }
  return {text, [terms, steps](const std::vector<Event>& events) {
            auto t = ref::scan(events, terms);
            for (const auto& s : steps) s(t);
            return t;
          }};
}

inline bool same_cell(const Value& got, const Cell& want) {
  if (got.is_null() || want.kind == Cell::kNull) return got.is_null() && want.kind == Cell::kNull;
  if (got.is_string() && want.kind == Cell::kText) return *got.string_ptr() == want.text;
  auto a = got.as_number();
  auto b = ref::number_of(want);
  if (a && b) return std::fabs(*a - *b) <= 1e-9 * std::max(1.0, std::fabs(*b));
  return got.to_string() == ref::text_of(want);
}

inline std::string show(const Value& v) { return v.is_null() ? "<null>" : v.to_string(); }

}  // namespace oracle

// Seeded corpus indexed into several buckets, with the same events kept in
// memory for the reference.
struct Corpus {
  std::unique_ptr<index::IndexHandle> idx;
  ingest::RuleSet rules{ingest::default_break_rules(), ingest::default_extraction_rules()};
  ingest::Extractor extractor{rules.extraction};
  std::vector<Event> reference;

  query::ExecContext context() const {
    query::ExecContext ctx;
    ctx.indexes = {idx.get()};
    ctx.extractor = &extractor;
    return ctx;
  }
};

inline std::unique_ptr<Corpus> build_corpus(const std::filesystem::path& dir, std::uint64_t seed, std::size_t events) {
  auto c = std::make_unique<Corpus>();
  gen::GenProfile p;
  p.seed = seed;
  p.events = events;
  p.attack_rate = 0.002;
  gen::generate_corpus(p, dir / "corpus");

  index::RollPolicy roll;
  roll.max_bytes = 256 * 1024;  // several buckets, so bloom and time pruning take part
  roll.segment_bytes = 16 * 1024;
  c->idx = index::IndexHandle::open(dir / "data", "main", roll);
  for (const char* f : {gen::kAppFile, gen::kAccessFile}) {
    auto path = dir / "corpus" / f;
    ingest::SourceMeta meta{"gen", path.string(), ingest::infer_sourcetype(path)};
    for (auto e : ingest::ingest_file(path, meta, c->rules)) {
      e.id = c->idx->index_event(e);
      c->extractor.extract(e);
      c->reference.push_back(std::move(e));
    }
  }
  c->idx->flush();
  return c;
}

// Runs `count` generated queries through the engine and the reference.
struct Outcome {
  std::size_t queries = 0;
  std::size_t mismatched = 0;
  std::size_t nonempty = 0;
  std::vector<std::string> failures;  // query text plus the first difference
};

inline Outcome compare(const std::vector<Event>& reference, const query::ExecContext& ctx, std::size_t count,
                       std::uint64_t seed) {
  Outcome o;
  std::mt19937_64 rng(seed);
  auto vocab = oracle::vocabulary(reference, rng);
  for (std::size_t i = 0; i < count; ++i) {
    auto c = oracle::random_case(vocab, rng);
    auto got = query::execute(query::parse(c.text), ctx).table;
    auto want = c.run(reference);
    ++o.queries;
    o.nonempty += !want.rows.empty();
    std::string why;
    if (got.columns != want.columns) {
      why = "columns differ";
    } else if (got.rows.size() != want.rows.size()) {
      why = "got " + std::to_string(got.rows.size()) + " rows, want " + std::to_string(want.rows.size());
    } else {
      for (std::size_t r = 0; why.empty() && r < got.rows.size(); ++r)
        for (std::size_t k = 0; why.empty() && k < got.columns.size(); ++k)
          if (!oracle::same_cell(got.rows[r][k], want.rows[r][k]))
            why = "row " + std::to_string(r) + " column " + got.columns[k] + ": got " +
                  oracle::show(got.rows[r][k]) + ", want " + ref::text_of(want.rows[r][k]);
    }
    if (!why.empty()) {
      ++o.mismatched;
      o.failures.push_back(c.text + " -> " + why);
    }
  }
  return o;
}

}  // namespace logforge::testing
