#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "logforge/event.hpp"

namespace logforge {

// A result-table cell: null, number or string.
class Value {
 public:
  Value() = default;
  Value(double d) : v_(d) {}
  Value(int i) : v_(static_cast<double>(i)) {}
  Value(long long i) : v_(static_cast<double>(i)) {}
  Value(unsigned long long i) : v_(static_cast<double>(i)) {}
  Value(long i) : v_(static_cast<double>(i)) {}
  Value(unsigned long i) : v_(static_cast<double>(i)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}
  static Value boolean(bool b) { return Value(b ? 1.0 : 0.0); }

  bool is_null() const { return std::holds_alternative<std::monostate>(v_); }
  bool is_number() const { return std::holds_alternative<double>(v_); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }

  // Numbers as is; strings when they parse fully as a number.
  std::optional<double> as_number() const;
  const std::string* string_ptr() const { return std::get_if<std::string>(&v_); }
  double number() const { return std::get<double>(v_); }

  // Display form; null renders as the empty string.
  std::string to_string() const;
  bool truthy() const;

  friend bool operator==(const Value& a, const Value& b) = default;

 private:
  std::variant<std::monostate, double, std::string> v_;
};

// Three-way ordering used by sort and comparisons: numeric when both sides
// are numeric, otherwise lexicographic; null sorts last.
int compare_values(const Value& a, const Value& b);

using Row = std::vector<Value>;

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<Row> rows;
  std::vector<std::vector<EventId>> provenance;  // empty, or one entry per row

  std::optional<std::size_t> column_index(std::string_view name) const;
  // Returns the index of `name`, appending a null-filled column when absent.
  std::size_t ensure_column(const std::string& name);
  void add_row(Row row, std::vector<EventId> prov = {});
  bool has_provenance() const { return !provenance.empty(); }
};

}  // namespace logforge
