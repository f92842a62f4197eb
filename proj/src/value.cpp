#include "logforge/value.hpp"

#include <algorithm>

#include "logforge/strings.hpp"

namespace logforge {

std::optional<double> Value::as_number() const {
  if (auto* d = std::get_if<double>(&v_)) return *d;
  if (auto* s = std::get_if<std::string>(&v_)) return parse_number(*s);
  return std::nullopt;
}

std::string Value::to_string() const {
  if (auto* d = std::get_if<double>(&v_)) return format_number(*d);
  if (auto* s = std::get_if<std::string>(&v_)) return *s;
  return {};
}

bool Value::truthy() const {
  if (auto* d = std::get_if<double>(&v_)) return *d != 0.0;
  if (auto* s = std::get_if<std::string>(&v_)) return !s->empty();
  return false;
}

int compare_values(const Value& a, const Value& b) {
  if (a.is_null() || b.is_null()) {
    if (a.is_null() && b.is_null()) return 0;
    return a.is_null() ? 1 : -1;
  }
  auto na = a.as_number();
  auto nb = b.as_number();
  if (na && nb) return *na < *nb ? -1 : (*na > *nb ? 1 : 0);
  const std::string sa = a.to_string();
  const std::string sb = b.to_string();
  return sa < sb ? -1 : (sa > sb ? 1 : 0);
}

std::optional<std::size_t> ResultTable::column_index(std::string_view name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns.begin());
}

std::size_t ResultTable::ensure_column(const std::string& name) {
  if (auto i = column_index(name)) return *i;
  columns.push_back(name);
  for (auto& r : rows) r.emplace_back();
  return columns.size() - 1;
}

void ResultTable::add_row(Row row, std::vector<EventId> prov) {
  row.resize(columns.size());
  rows.push_back(std::move(row));
  if (!prov.empty() || !provenance.empty()) {
    provenance.resize(rows.size() - 1);
    provenance.push_back(std::move(prov));
  }
}

}  // namespace logforge
