#include "logforge/executor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::query {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string_view to_string(Density d) {
  switch (d) {
    case Density::kDense: return "Dense";
    case Density::kScatter: return "Scatter";
    case Density::kRare: return "Rare";
    case Density::kNeedleInHaystack: return "NeedleInHaystack";
  }
  return "?";
}

Density classify_density(std::uint64_t hits, std::uint64_t scanned) {
  if (hits == 0) return Density::kNeedleInHaystack;
  // Integer comparisons avoid rounding at the exact boundaries.
  if (scanned <= hits * 1000ULL) return Density::kDense;
  if (scanned <= hits * 1000000ULL) return Density::kScatter;
  if (static_cast<long double>(scanned) <= static_cast<long double>(hits) * 1e9L) return Density::kRare;
  return Density::kNeedleInHaystack;
}

void ExecutionTrace::record(const std::string& name, double seconds, std::size_t in,
                            std::size_t out, std::size_t calls) {
  for (auto& c : components_) {
    if (c.name != name) continue;
    c.duration_s += seconds;
    c.calls += calls;
    c.input_count += in;
    c.output_count += out;
    return;
  }
  components_.push_back({name, seconds, calls, in, out});
}

const ProfileComponent* ExecutionTrace::find(std::string_view name) const {
  for (const auto& c : components_)
    if (c.name == name) return &c;
  return nullptr;
}

const ProfileComponent* SearchProfile::find(std::string_view name) const {
  for (const auto& c : components)
    if (c.name == name) return &c;
  return nullptr;
}

SearchProfile profile(const Query& q, const ExecutionTrace& trace) {
  SearchProfile p;
  (void)q;
  p.total_seconds = trace.total_seconds;
  p.components = trace.components();
  p.hits = trace.hits;
  p.scanned = trace.scanned;
  p.density = classify_density(trace.hits, trace.scanned);
  p.decompressed_segments = trace.scan.decompressed_segments;
  p.bloom_skips = trace.scan.bloom_skips;
  p.eval_errors = trace.eval_errors;
  return p;
}

namespace {

const std::string* event_value(const Event& e, const std::string& field) {
  if (field == "host") return &e.host;
  if (field == "source") return &e.source;
  if (field == "sourcetype") return &e.sourcetype;
  if (field == "_raw") return &e.raw;
  auto it = e.fields.find(field);
  return it == e.fields.end() ? nullptr : &it->second;
}

bool pattern_hit(const Event& e, const std::string& pattern) {
  SearchTerm t;
  t.value = pattern;
  t.kind = t.has_wildcard() ? SearchTerm::Kind::kWord : SearchTerm::Kind::kPhrase;
  return match_word(e.raw, t);
}

}  // namespace

std::vector<TransactionGroup> run_transaction(const std::vector<Event>& events,
                                              const TransactionOptions& options) {
  struct Open {
    TransactionGroup group;
    std::size_t seq;
  };
  std::vector<Open> done;
  std::map<std::string, Open> open;
  std::size_t seq = 0;
  auto close = [&](std::map<std::string, Open>::iterator it) {
    done.push_back(std::move(it->second));
    open.erase(it);
  };
  for (const auto& e : events) {
    const std::string* key = event_value(e, options.field);
    if (!key) continue;
    auto it = open.find(*key);
    if (it != open.end()) {
      const Event& last = it->second.group.events.back();
      bool paused = options.max_pause_us && e.timestamp - last.timestamp > *options.max_pause_us;
      bool restart = options.starts_with && pattern_hit(e, *options.starts_with);
      if (paused || restart) {
        close(it);
        it = open.end();
      }
    }
    if (it == open.end()) {
      Open o;
      o.group.key = *key;
      o.seq = seq++;
      it = open.emplace(*key, std::move(o)).first;
    }
    it->second.group.events.push_back(e);
    if (options.ends_with && pattern_hit(e, *options.ends_with)) close(it);
  }
  while (!open.empty()) close(open.begin());

  for (auto& o : done) {
    auto& g = o.group;
    g.duration_us = g.events.back().timestamp - g.events.front().timestamp;
    bool start_ok = !options.starts_with || pattern_hit(g.events.front(), *options.starts_with);
    bool end_ok = !options.ends_with || pattern_hit(g.events.back(), *options.ends_with);
    g.complete = start_ok && end_ok;
  }
  std::stable_sort(done.begin(), done.end(), [](const Open& a, const Open& b) {
    auto ta = a.group.events.front().timestamp, tb = b.group.events.front().timestamp;
    return ta != tb ? ta < tb : a.seq < b.seq;
  });
  std::vector<TransactionGroup> out;
  out.reserve(done.size());
  for (auto& o : done) out.push_back(std::move(o.group));
  return out;
}

std::vector<Pause> pauses(const std::vector<Timestamp>& times, std::int64_t threshold_us) {
  std::vector<Pause> out;
  for (std::size_t i = 1; i < times.size(); ++i) {
    std::int64_t gap = times[i] - times[i - 1];
    if (gap > threshold_us) out.push_back({times[i - 1], gap});
  }
  return out;
}

std::vector<HistogramBin> interarrival_histogram(const std::vector<Timestamp>& times,
                                                 std::int64_t bin_us) {
  if (times.size() < 2 || bin_us <= 0) return {};
  std::map<std::int64_t, std::size_t> bins;
  std::int64_t top = 0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    std::int64_t d = times[i] - times[i - 1];
    std::int64_t b = d >= 0 ? d / bin_us : -((-d + bin_us - 1) / bin_us);
    ++bins[b];
    top = std::max(top, b);
  }
  std::vector<HistogramBin> out;
  std::int64_t lo = std::min<std::int64_t>(0, bins.begin()->first);
  for (std::int64_t b = lo; b <= top; ++b) {
    auto it = bins.find(b);
    out.push_back({b * bin_us, it == bins.end() ? 0 : it->second});
  }
  return out;
}

ResultTable events_to_table(const std::vector<Event>& events,
                            const std::vector<std::string>& index_names) {
  ResultTable t;
  t.columns = {"_time", "_raw", "host", "source", "sourcetype", "index"};
  std::set<std::string> names;
  for (const auto& e : events)
    for (const auto& [k, v] : e.fields) names.insert(k);
  std::unordered_map<std::string, std::size_t> pos;
  for (const auto& n : names) {
    if (std::find(t.columns.begin(), t.columns.end(), n) != t.columns.end()) continue;
    pos[n] = t.columns.size();
    t.columns.push_back(n);
  }
  t.rows.reserve(events.size());
  t.provenance.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    Row r(t.columns.size());
    r[0] = Value(static_cast<long long>(e.timestamp));
    r[1] = Value(e.raw);
    r[2] = Value(e.host);
    r[3] = Value(e.source);
    r[4] = Value(e.sourcetype);
    if (i < index_names.size()) r[5] = Value(index_names[i]);
    for (const auto& [k, v] : e.fields) {
      auto it = pos.find(k);
      if (it != pos.end()) r[it->second] = Value(v);
    }
    t.rows.push_back(std::move(r));
    t.provenance.push_back({e.id});
  }
  return t;
}

namespace {

class ColumnMap {
 public:
  explicit ColumnMap(const ResultTable& t) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) idx_.emplace(t.columns[i], i);
  }
  std::optional<std::size_t> get(const std::string& name) const {
    auto it = idx_.find(name);
    if (it == idx_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> idx_;
};

FieldGetter row_getter(const ColumnMap& cols, const Row& row) {
  return [&cols, &row](const std::string& name) -> Value {
    auto i = cols.get(name);
    return i ? row[*i] : Value();
  };
}

std::vector<EventId> prov_of(const ResultTable& t, std::size_t r) {
  return t.has_provenance() && r < t.provenance.size() ? t.provenance[r] : std::vector<EventId>{};
}

void keep_rows(ResultTable& t, const std::vector<std::size_t>& order) {
  std::vector<Row> rows;
  std::vector<std::vector<EventId>> prov;
  rows.reserve(order.size());
  for (auto i : order) {
    rows.push_back(std::move(t.rows[i]));
    if (t.has_provenance()) prov.push_back(std::move(t.provenance[i]));
  }
  t.rows = std::move(rows);
  if (t.has_provenance()) t.provenance = std::move(prov);
}

Value cell_value(const std::string& s) {
  if (s.empty()) return Value();
  if (auto n = parse_number(s)) return Value(*n);
  return Value(s);
}

ml::DataTable to_data_table(const ResultTable& t) {
  ml::DataTable d(t.columns);
  for (const auto& r : t.rows) {
    std::vector<std::string> cells;
    cells.reserve(r.size());
    for (const auto& v : r) cells.push_back(v.to_string());
    d.add_row(std::move(cells));
  }
  return d;
}

// Copies columns that `d` has beyond `t` back into `t` (same row order).
void merge_new_columns(ResultTable& t, const ml::DataTable& d) {
  for (std::size_t c = t.columns.size(); c < d.columns().size(); ++c) {
    std::size_t col = t.ensure_column(d.columns()[c]);
    for (std::size_t r = 0; r < t.rows.size(); ++r) t.rows[r][col] = cell_value(d.rows()[r][c]);
  }
}

struct AggState {
  std::size_t count = 0;
  double sum = 0;
  std::size_t numeric = 0;
  std::optional<double> max, min;
  std::set<std::string> distinct;
};

void feed(AggState& s, const Aggregation& a, const Value& v) {
  if (a.field.empty()) {
    ++s.count;
    return;
  }
  if (v.is_null()) return;
  ++s.count;
  if (a.func == "dc") {
    s.distinct.insert(v.to_string());
    return;
  }
  if (auto n = v.as_number()) {
    ++s.numeric;
    s.sum += *n;
    s.max = s.max ? std::max(*s.max, *n) : *n;
    s.min = s.min ? std::min(*s.min, *n) : *n;
  }
}

Value finish(const AggState& s, const Aggregation& a) {
  if (a.func == "count") return Value(static_cast<double>(s.count));
  if (a.func == "dc") return Value(static_cast<double>(s.distinct.size()));
  if (s.numeric == 0) return Value();
  if (a.func == "sum") return Value(s.sum);
  if (a.func == "avg") return Value(s.sum / static_cast<double>(s.numeric));
  if (a.func == "max") return Value(*s.max);
  return Value(*s.min);
}

void run_stats(const Stage& st, ResultTable& t) {
  ColumnMap cols(t);
  struct Group {
    Row key;
    std::vector<AggState> states;
    std::vector<EventId> prov;
  };
  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> by_key;
  std::vector<std::optional<std::size_t>> agg_cols;
  for (const auto& a : st.aggregations)
    agg_cols.push_back(a.field.empty() ? std::nullopt : cols.get(a.field));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const Row& row = t.rows[r];
    Row key;
    std::string k;
    bool skip = false;
    for (const auto& f : st.by) {
      auto i = cols.get(f);
      Value v = i ? row[*i] : Value();
      if (v.is_null()) {
        skip = true;
        break;
      }
      k += v.is_number() ? "n" : "s";
      k += v.to_string();
      k.push_back('\x1f');
      key.push_back(std::move(v));
    }
    if (skip) continue;
    auto [it, fresh] = by_key.emplace(k, groups.size());
    if (fresh) groups.push_back({std::move(key), std::vector<AggState>(st.aggregations.size()), {}});
    Group& g = groups[it->second];
    for (std::size_t a = 0; a < st.aggregations.size(); ++a)
      feed(g.states[a], st.aggregations[a], agg_cols[a] ? row[*agg_cols[a]] : Value());
    auto p = prov_of(t, r);
    g.prov.insert(g.prov.end(), p.begin(), p.end());
  }
  if (st.by.empty() && groups.empty())
    groups.push_back({{}, std::vector<AggState>(st.aggregations.size()), {}});
  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    for (std::size_t i = 0; i < a.key.size(); ++i) {
      int c = compare_values(a.key[i], b.key[i]);
      if (c != 0) return c < 0;
    }
    return false;
  });
  ResultTable out;
  out.columns = st.by;
  for (const auto& a : st.aggregations) out.columns.push_back(a.alias);
  for (auto& g : groups) {
    Row row = g.key;
    for (std::size_t a = 0; a < st.aggregations.size(); ++a)
      row.push_back(finish(g.states[a], st.aggregations[a]));
    std::sort(g.prov.begin(), g.prov.end());
    out.rows.push_back(std::move(row));
    out.provenance.push_back(std::move(g.prov));
  }
  t = std::move(out);
}

void run_top(const Stage& st, ResultTable& t) {
  ColumnMap cols(t);
  const std::string& field = st.fields.front();
  auto col = cols.get(field);
  std::vector<std::pair<std::string, std::size_t>> counts;
  std::vector<std::vector<EventId>> provs;
  std::vector<Value> firsts;
  std::unordered_map<std::string, std::size_t> pos;
  std::size_t total = 0;
  if (col) {
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const Value& v = t.rows[r][*col];
      if (v.is_null()) continue;
      ++total;
      auto [it, fresh] = pos.emplace(v.to_string(), counts.size());
      if (fresh) {
        counts.emplace_back(v.to_string(), 0);
        provs.emplace_back();
        firsts.push_back(v);
      }
      ++counts[it->second].second;
      auto p = prov_of(t, r);
      provs[it->second].insert(provs[it->second].end(), p.begin(), p.end());
    }
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a].second > counts[b].second; });
  if (st.limit > 0 && order.size() > st.limit) order.resize(st.limit);
  ResultTable out;
  out.columns = {field, "count", "percent"};
  for (auto i : order) {
    double pct = std::round(100.0 * static_cast<double>(counts[i].second) / static_cast<double>(total));
    out.rows.push_back({firsts[i], Value(static_cast<double>(counts[i].second)), Value(pct)});
    out.provenance.push_back(std::move(provs[i]));
  }
  t = std::move(out);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

void run_timechart(const Stage& st, ResultTable& t) {
  ColumnMap cols(t);
  auto tcol = cols.get("_time");
  std::map<std::int64_t, std::pair<std::vector<AggState>, std::vector<EventId>>> bins;
  std::vector<std::optional<std::size_t>> agg_cols;
  for (const auto& a : st.aggregations)
    agg_cols.push_back(a.field.empty() ? std::nullopt : cols.get(a.field));
  if (tcol) {
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto ts = t.rows[r][*tcol].as_number();
      if (!ts) continue;
      std::int64_t b = floor_div(static_cast<std::int64_t>(*ts), st.span_us);
      auto& slot = bins[b];
      if (slot.first.empty()) slot.first.resize(st.aggregations.size());
      for (std::size_t a = 0; a < st.aggregations.size(); ++a)
        feed(slot.first[a], st.aggregations[a], agg_cols[a] ? t.rows[r][*agg_cols[a]] : Value());
      auto p = prov_of(t, r);
      slot.second.insert(slot.second.end(), p.begin(), p.end());
    }
  }
  ResultTable out;
  out.columns = {"_time"};
  for (const auto& a : st.aggregations) out.columns.push_back(a.alias);
  if (!bins.empty()) {
    for (std::int64_t b = bins.begin()->first; b <= bins.rbegin()->first; ++b) {
      auto it = bins.find(b);
      std::vector<AggState> empty(st.aggregations.size());
      const auto& states = it == bins.end() ? empty : it->second.first;
      Row row{Value(static_cast<long long>(b * st.span_us))};
      for (std::size_t a = 0; a < st.aggregations.size(); ++a)
        row.push_back(finish(states[a], st.aggregations[a]));
      out.rows.push_back(std::move(row));
      out.provenance.push_back(it == bins.end() ? std::vector<EventId>{} : it->second.second);
    }
  }
  t = std::move(out);
}

std::vector<Event> rows_to_events(const ResultTable& t, const std::vector<std::string>& extra) {
  ColumnMap cols(t);
  auto tcol = cols.get("_time");
  auto rcol = cols.get("_raw");
  std::vector<Event> events;
  events.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Event e;
    auto p = prov_of(t, r);
    e.id = p.empty() ? r : p.front();
    if (tcol)
      if (auto n = t.rows[r][*tcol].as_number()) e.timestamp = static_cast<Timestamp>(*n);
    if (rcol) e.raw = t.rows[r][*rcol].to_string();
    for (const auto& f : extra) {
      auto c = cols.get(f);
      if (!c || t.rows[r][*c].is_null()) continue;
      if (f == "host") e.host = t.rows[r][*c].to_string();
      else if (f == "source") e.source = t.rows[r][*c].to_string();
      else if (f == "sourcetype") e.sourcetype = t.rows[r][*c].to_string();
      else e.fields[f] = t.rows[r][*c].to_string();
    }
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<Timestamp> sorted_times(const ResultTable& t) {
  std::vector<Timestamp> out;
  if (auto c = t.column_index("_time"))
    for (const auto& r : t.rows)
      if (auto n = r[*c].as_number()) out.push_back(static_cast<Timestamp>(*n));
  std::sort(out.begin(), out.end());
  return out;
}

void run_transaction_stage(const Stage& st, ResultTable& t, ExecutionTrace& trace) {
  auto t0 = Clock::now();
  auto events = rows_to_events(t, {st.transaction.field});
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  trace.record("command.pretransaction", seconds_since(t0), t.rows.size(), events.size());
  auto groups = run_transaction(events, st.transaction);
  ResultTable out;
  out.columns = {st.transaction.field, "_time", "duration", "duration_us", "eventcount", "complete", "_raw"};
  for (const auto& g : groups) {
    std::string raw;
    std::vector<EventId> ids;
    for (const auto& e : g.events) {
      if (!raw.empty()) raw.push_back('\n');
      raw += e.raw;
      ids.push_back(e.id);
    }
    out.rows.push_back({Value(g.key), Value(static_cast<long long>(g.events.front().timestamp)),
                        Value(static_cast<double>(g.duration_us) / 1e6),
                        Value(static_cast<long long>(g.duration_us)),
                        Value(static_cast<double>(g.events.size())), Value(g.complete ? 1 : 0),
                        Value(std::move(raw))});
    out.provenance.push_back(std::move(ids));
  }
  t = std::move(out);
}

void run_project(const std::vector<std::string>& fields, ResultTable& t) {
  ColumnMap cols(t);
  std::vector<std::optional<std::size_t>> src;
  std::vector<std::string> names;
  for (const auto& f : fields) {
    if (std::find(names.begin(), names.end(), f) != names.end()) continue;
    names.push_back(f);
    src.push_back(cols.get(f));
  }
  for (auto& row : t.rows) {
    Row next;
    next.reserve(src.size());
    for (const auto& s : src) next.push_back(s ? row[*s] : Value());
    row = std::move(next);
  }
  t.columns = std::move(names);
}

void run_sort(const Stage& st, ResultTable& t) {
  ColumnMap cols(t);
  std::vector<std::pair<std::optional<std::size_t>, bool>> keys;
  for (const auto& k : st.sort_keys) keys.emplace_back(cols.get(k.field), k.descending);
  std::vector<std::size_t> order(t.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (const auto& [c, desc] : keys) {
      if (!c) continue;
      const Value& va = t.rows[a][*c];
      const Value& vb = t.rows[b][*c];
      // Nulls stay last in either direction.
      if (va.is_null() != vb.is_null()) return vb.is_null();
      int cmp = compare_values(va, vb);
      if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
    }
    return false;
  });
  if (st.limit > 0 && order.size() > st.limit) order.resize(st.limit);
  keep_rows(t, order);
}

void run_anomaly(const Stage& st, ResultTable& t) {
  std::vector<std::string> fields = st.fields;
  if (fields.empty())
    for (const auto& c : t.columns)
      if (!c.empty() && c[0] != '_') fields.push_back(c);
  double theta = ml::kDefaultOutlierThreshold;
  if (auto it = st.params.find("threshold"); it != st.params.end()) theta = *parse_number(it->second);
  const bool filter = st.params.at("action") == "filter";
  if (t.rows.empty()) return;
  auto data = to_data_table(t);
  auto rows = ml::anomaly_detect(data, fields, theta);
  ResultTable out;
  out.columns = t.columns;
  auto pcol = out.ensure_column("probability");
  auto ccol = out.ensure_column("probable_cause");
  auto ocol = out.ensure_column("isOutlier");
  for (const auto& a : rows) {
    if (filter && !a.is_outlier) continue;
    Row r = t.rows[a.row];
    r.resize(out.columns.size());
    r[pcol] = Value(a.probability);
    r[ccol] = a.probable_cause.empty() ? Value() : Value(a.probable_cause);
    r[ocol] = Value(a.is_outlier);
    out.rows.push_back(std::move(r));
    if (t.has_provenance()) out.provenance.push_back(t.provenance[a.row]);
  }
  t = std::move(out);
}

bool parse_bool(const std::string& s) {
  auto l = to_lower(s);
  if (l == "true" || l == "1" || l == "t" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "f" || l == "no") return false;
  throw ModelError("expected a boolean, got '" + s + "'");
}

void run_fit(const Stage& st, ResultTable& t, const ExecContext& ctx) {
  auto data = to_data_table(t);
  if (st.algorithm == "PCA") {
    auto k = parse_number(st.params.at("k"));
    if (!k || *k < 1) throw ModelError("k must be a positive integer");
    auto [model, out] = ml::fit_pca(data, st.fields, static_cast<std::size_t>(*k));
    if (!st.model_name.empty() && ctx.models) ctx.models->put(st.model_name, model);
    merge_new_columns(t, out);
    return;
  }
  ml::LogRegOptions opts;
  if (auto it = st.params.find("fit_intercept"); it != st.params.end())
    opts.fit_intercept = parse_bool(it->second);
  if (auto it = st.params.find("train_fraction"); it != st.params.end()) {
    auto v = parse_number(it->second);
    if (!v) throw ModelError("train_fraction must be a number");
    opts.train_fraction = *v;
  }
  if (auto it = st.params.find("seed"); it != st.params.end()) {
    auto v = parse_number(it->second);
    if (!v || *v < 0) throw ModelError("seed must be a non-negative integer");
    opts.seed = static_cast<std::uint64_t>(*v);
  }
  auto [model, report] = ml::fit_logreg(data, st.response, st.fields, opts);
  auto applied = ml::apply_model(model, data);
  if (!st.model_name.empty() && ctx.models) ctx.models->put(st.model_name, model);
  merge_new_columns(t, applied);
}

void run_apply(const Stage& st, ResultTable& t, const ExecContext& ctx) {
  if (!ctx.models) throw ModelError("no model store configured");
  const auto& model = ctx.models->get(st.model_name);
  auto applied = ml::apply_model(model, to_data_table(t));
  merge_new_columns(t, applied);
}

void run_classification(const Stage& st, ResultTable& t, bool matrix) {
  auto data = to_data_table(t);
  auto stats = ml::classification_stats(data, st.fields[0], st.fields[1]);
  ResultTable out;
  if (!matrix) {
    out.columns = {"accuracy", "precision", "recall", "f1"};
    out.rows.push_back({Value(stats.accuracy), Value(stats.precision), Value(stats.recall), Value(stats.f1)});
  } else {
    out.columns = {st.fields[0]};
    for (const auto& l : stats.labels) out.columns.push_back("predicted(" + l + ")");
    for (std::size_t i = 0; i < stats.labels.size(); ++i) {
      Row r{Value(stats.labels[i])};
      for (std::size_t j = 0; j < stats.labels.size(); ++j)
        r.push_back(Value(static_cast<double>(stats.confusion[i][j])));
      out.rows.push_back(std::move(r));
    }
  }
  t = std::move(out);
}

}  // namespace

void apply_stage(const Stage& st, ResultTable& t, const ExecContext& ctx, ExecutionTrace& trace) {
  switch (st.kind) {
    case StageKind::kSearch: {
      ColumnMap cols(t);
      auto raw = cols.get("_raw");
      std::vector<std::size_t> keep;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        bool ok = true;
        for (const auto& term : st.terms) {
          bool hit;
          if (term.kind == SearchTerm::Kind::kField) {
            auto c = cols.get(term.field);
            std::string s;
            const std::string* v = nullptr;
            if (c && !t.rows[r][*c].is_null()) {
              s = t.rows[r][*c].to_string();
              v = &s;
            }
            hit = match_field_value(v, term);
          } else {
            hit = raw && match_word(t.rows[r][*raw].to_string(), term);
          }
          if (hit == term.negated) {
            ok = false;
            break;
          }
        }
        if (ok) keep.push_back(r);
      }
      keep_rows(t, keep);
      return;
    }
    case StageKind::kWhere: {
      ColumnMap cols(t);
      EvalContext ec{ctx.lookup};
      std::vector<std::size_t> keep;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        try {
          if (evaluate(*st.predicate, row_getter(cols, t.rows[r]), ec).truthy()) keep.push_back(r);
        } catch (const EvalError&) {
          ++trace.eval_errors;
        }
      }
      keep_rows(t, keep);
      return;
    }
    case StageKind::kEval: {
      for (const auto& [name, e] : st.assignments) t.ensure_column(name);
      ColumnMap cols(t);
      EvalContext ec{ctx.lookup};
      std::vector<std::size_t> keep;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        try {
          for (const auto& [name, e] : st.assignments) {
            Value v = evaluate(*e, row_getter(cols, t.rows[r]), ec);
            t.rows[r][*cols.get(name)] = std::move(v);
          }
          keep.push_back(r);
        } catch (const EvalError&) {
          ++trace.eval_errors;
        }
      }
      keep_rows(t, keep);
      return;
    }
    case StageKind::kStats: run_stats(st, t); return;
    case StageKind::kTop: run_top(st, t); return;
    case StageKind::kTimechart: run_timechart(st, t); return;
    case StageKind::kTransaction: run_transaction_stage(st, t, trace); return;
    case StageKind::kTable: run_project(st.fields, t); return;
    case StageKind::kFields:
      if (!st.remove) {
        run_project(st.fields, t);
      } else {
        std::vector<std::string> rest;
        for (const auto& c : t.columns)
          if (std::find(st.fields.begin(), st.fields.end(), c) == st.fields.end()) rest.push_back(c);
        run_project(rest, t);
      }
      return;
    case StageKind::kSort: run_sort(st, t); return;
    case StageKind::kHead:
      if (t.rows.size() > st.limit) {
        t.rows.resize(st.limit);
        if (t.has_provenance()) t.provenance.resize(st.limit);
      }
      return;
    case StageKind::kAnomalyDetection: run_anomaly(st, t); return;
    case StageKind::kFit: run_fit(st, t, ctx); return;
    case StageKind::kApply: run_apply(st, t, ctx); return;
    case StageKind::kClassificationStatistics: run_classification(st, t, false); return;
    case StageKind::kConfusionMatrix: run_classification(st, t, true); return;
    case StageKind::kPauses: {
      ResultTable out;
      out.columns = {"_time", "gap_us", "gap_s"};
      for (const auto& p : pauses(sorted_times(t), st.span_us))
        out.rows.push_back({Value(static_cast<long long>(p.start)), Value(static_cast<long long>(p.gap_us)),
                            Value(static_cast<double>(p.gap_us) / 1e6)});
      t = std::move(out);
      return;
    }
    case StageKind::kInterarrival: {
      ResultTable out;
      out.columns = {"bin_us", "count"};
      for (const auto& b : interarrival_histogram(sorted_times(t), st.span_us))
        out.rows.push_back({Value(static_cast<long long>(b.lower_us)), Value(static_cast<double>(b.count))});
      t = std::move(out);
      return;
    }
  }
}

namespace {

// Runs the leading search stage against the indexes.
ResultTable run_search(const Stage& st, const ExecContext& ctx, ExecutionTrace& trace) {
  auto t0 = Clock::now();
  std::vector<index::IndexHandle*> targets;
  bool explicit_index = false;
  for (const auto& term : st.terms) {
    if (term.kind != SearchTerm::Kind::kIndex) continue;
    explicit_index = true;
    for (auto* h : ctx.indexes) {
      std::string name = h->name();
      if (match_field_value(&name, term) &&
          std::find(targets.begin(), targets.end(), h) == targets.end())
        targets.push_back(h);
    }
  }
  if (!explicit_index) targets = ctx.indexes;

  // Plain positive words and phrases narrow the candidates through the index.
  std::vector<std::string> index_terms;
  std::vector<const SearchTerm*> residual;
  for (const auto& term : st.terms) {
    if (term.kind == SearchTerm::Kind::kIndex) continue;
    bool pushdown = !term.negated && !term.has_wildcard() &&
                    (term.kind == SearchTerm::Kind::kWord || term.kind == SearchTerm::Kind::kPhrase);
    if (pushdown) {
      auto toks = index::tokenize(term.value);
      index_terms.insert(index_terms.end(), toks.begin(), toks.end());
      if (term.kind == SearchTerm::Kind::kPhrase || toks.empty()) residual.push_back(&term);
    } else {
      residual.push_back(&term);
    }
  }

  std::vector<Event> events;
  std::vector<std::string> names;
  double index_s = 0, rawdata_s = 0, kv_s = 0, regex_s = 0, filter_s = 0;
  std::size_t kv_in = 0, regex_in = 0, candidates = 0;
  for (auto* h : targets) {
    auto cr = h->candidate_events(index_terms, ctx.range, ctx.scan);
    index_s += cr.index_seconds;
    rawdata_s += cr.rawdata_seconds;
    trace.scan.scanned += cr.stats.scanned;
    trace.scan.decompressed_segments += cr.stats.decompressed_segments;
    trace.scan.bloom_skips += cr.stats.bloom_skips;
    trace.scan.time_skips += cr.stats.time_skips;
    trace.scan.buckets_visited += cr.stats.buckets_visited;
    candidates += cr.events.size();
    for (auto& e : cr.events) {
      if (ctx.extractor) {
        if (ctx.extractor->has_regex_rules(e.sourcetype)) {
          auto r0 = Clock::now();
          ctx.extractor->extract_regex(e);
          regex_s += seconds_since(r0);
          ++regex_in;
        }
        if (ctx.extractor->kv_enabled(e.sourcetype)) {
          auto k0 = Clock::now();
          ctx.extractor->extract_kv(e);
          kv_s += seconds_since(k0);
          ++kv_in;
        }
      }
      if (!residual.empty()) {
        auto f0 = Clock::now();
        bool ok = true;
        for (const auto* term : residual) {
          bool hit;
          if (term->kind == SearchTerm::Kind::kField) hit = match_field_value(event_value(e, term->field), *term);
          else hit = match_word(e.raw, *term);
          if (hit == term->negated) {
            ok = false;
            break;
          }
        }
        filter_s += seconds_since(f0);
        if (!ok) continue;
      }
      events.push_back(std::move(e));
      names.push_back(h->name());
    }
  }
  trace.scanned = trace.scan.scanned;
  trace.hits = events.size();
  trace.record("command.search.index", index_s, trace.scan.scanned, candidates);
  trace.record("command.search.rawdata", rawdata_s, trace.scan.decompressed_segments, candidates);
  trace.record("command.search.kv", kv_s, kv_in, kv_in);
  if (regex_in) trace.record("command.search.regex", regex_s, regex_in, regex_in);
  if (!residual.empty()) trace.record("command.search.filter", filter_s, candidates, events.size());
  ResultTable t = events_to_table(events, names);
  trace.record("command.search", seconds_since(t0), trace.scan.scanned, t.rows.size());
  return t;
}

}  // namespace

ExecResult execute(const Query& q, const ExecContext& ctx) {
  auto t0 = Clock::now();
  ExecutionTrace trace;
  if (q.stages.empty() || q.stages.front().kind != StageKind::kSearch)
    throw ParseError(1, "query must start with search terms", {"search terms"});
  ResultTable t = run_search(q.stages.front(), ctx, trace);
  double fields_s = 0;
  for (std::size_t i = 1; i < q.stages.size(); ++i) {
    const Stage& st = q.stages[i];
    auto s0 = Clock::now();
    std::size_t in = t.rows.size();
    apply_stage(st, t, ctx, trace);
    // Explicit `fields` stages fold into the final command.fields component.
    if (st.kind == StageKind::kFields) fields_s += seconds_since(s0);
    else trace.record("command." + std::string(to_string(st.kind)), seconds_since(s0), in, t.rows.size());
  }
  auto f0 = Clock::now();
  for (const auto& r : t.rows)
    if (r.size() != t.columns.size()) throw Error("internal: ragged result table");
  if (!t.has_provenance()) t.provenance.clear();
  trace.record("command.fields", fields_s + seconds_since(f0), t.rows.size(), t.rows.size());
  trace.total_seconds = seconds_since(t0);
  ExecResult out;
  out.profile = profile(q, trace);
  out.table = std::move(t);
  return out;
}

namespace {

nlohmann::json value_json(const Value& v) {
  if (v.is_null()) return nullptr;
  if (v.is_number()) {
    double d = v.number();
    if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9.0e15)
      return static_cast<std::int64_t>(d);
    return d;
  }
  return *v.string_ptr();
}

}  // namespace

nlohmann::json to_json(const ResultTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : r) row.push_back(value_json(v));
    rows.push_back(std::move(row));
  }
  return {{"columns", t.columns}, {"rows", std::move(rows)}};
}

nlohmann::json to_json(const SearchProfile& p) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : p.components)
    comps.push_back({{"name", c.name},
                     {"duration_s", c.duration_s},
                     {"calls", c.calls},
                     {"input_count", c.input_count},
                     {"output_count", c.output_count}});
  return {{"total_seconds", p.total_seconds},
          {"hits", p.hits},
          {"scanned", p.scanned},
          {"density", std::string(to_string(p.density))},
          {"decompressed_segments", p.decompressed_segments},
          {"bloom_skips", p.bloom_skips},
          {"eval_errors", p.eval_errors},
          {"components", std::move(comps)}};
}

}  // namespace logforge::query
