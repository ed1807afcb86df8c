#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "refine/csv.hpp"
#include "refine/error.hpp"
#include "refine/random.hpp"

namespace refine {

enum class ColumnKind { numeric, categorical };
enum class Task { classification, regression };
enum class Provenance { real, synthetic, augmented };

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::string description;
    /// Observed vocabulary of a categorical column, in canonical order.
    std::vector<std::string> categories;
    /// Synthetic rows may introduce categories outside the vocabulary.
    bool open = false;

    bool operator==(const Column&) const = default;
};

/// Sort labels numerically when they all parse as numbers, else lexically.
inline void sort_labels(std::vector<std::string>& labels) {
    const bool numeric = std::all_of(labels.begin(), labels.end(), [](const std::string& s) {
        return csv::parse_number(s).has_value();
    });
    if (numeric) {
        std::stable_sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
            return *csv::parse_number(a) < *csv::parse_number(b);
        });
    } else {
        std::sort(labels.begin(), labels.end());
    }
}

/// Column layout of a table. The target is one of the columns; a
/// classification target is categorical and its categories are the classes.
struct Schema {
    std::vector<Column> columns;
    std::size_t target = 0;
    Task task = Task::classification;

    bool operator==(const Schema&) const = default;

    const Column& target_column() const { return columns.at(target); }
    const std::string& target_name() const { return target_column().name; }
    const std::vector<std::string>& classes() const { return target_column().categories; }
    std::size_t num_classes() const { return task == Task::classification ? classes().size() : 0; }

    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i].name == name) return i;
        }
        return std::nullopt;
    }

    std::vector<std::size_t> feature_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (i != target) out.push_back(i);
        }
        return out;
    }

    std::optional<std::size_t> category_index(std::size_t column, std::string_view value) const {
        const auto& cats = columns.at(column).categories;
        const auto it = std::find(cats.begin(), cats.end(), value);
        if (it == cats.end()) return std::nullopt;
        return static_cast<std::size_t>(it - cats.begin());
    }

    std::optional<std::size_t> class_index(std::string_view label) const {
        return category_index(target, label);
    }

    void validate() const {
        if (columns.empty()) throw InputError("schema has no columns");
        std::set<std::string> seen;
        for (const auto& c : columns) {
            if (c.name.empty()) throw InputError("schema column with empty name");
            if (!seen.insert(c.name).second) throw InputError("duplicate column name '" + c.name + "'");
        }
        if (target >= columns.size()) throw InputError("target index out of range");
        const auto& t = target_column();
        if (task == Task::classification) {
            if (t.kind != ColumnKind::categorical) {
                throw InputError("classification target '" + t.name + "' must be categorical");
            }
            if (t.categories.size() < 2) {
                throw InputError("classification target '" + t.name + "' needs at least 2 labels");
            }
        } else if (t.kind != ColumnKind::numeric) {
            throw InputError("regression target '" + t.name + "' must be numeric");
        }
    }
};

using Cell = std::variant<double, std::string>;
using Row = std::vector<Cell>;

inline std::string cell_text(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return csv::format_number(*d);
    return std::get<std::string>(c);
}

/// A typed table. Rows are stored in schema column order.
struct Dataset {
    Schema schema;
    std::vector<Row> rows;
    Provenance provenance = Provenance::real;

    bool operator==(const Dataset&) const = default;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }

    double number(std::size_t row, std::size_t col) const { return std::get<double>(rows[row][col]); }
    const std::string& category(std::size_t row, std::size_t col) const {
        return std::get<std::string>(rows[row][col]);
    }

    /// Class index of a row's label (classification only).
    std::size_t label(std::size_t row) const {
        const auto idx = schema.class_index(category(row, schema.target));
        if (!idx) throw InputError("label '" + category(row, schema.target) + "' not in schema classes");
        return *idx;
    }

    /// Numeric value of a row's target (regression only).
    double target_value(std::size_t row) const { return number(row, schema.target); }

    Dataset subset(std::span<const std::size_t> ids) const {
        Dataset out{schema, {}, provenance};
        out.rows.reserve(ids.size());
        for (auto i : ids) out.rows.push_back(rows.at(i));
        return out;
    }

    void append(const Dataset& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    }
};

struct InferOptions {
    /// Target column name; empty selects the last column.
    std::string target;
    /// Integer-valued targets with at most this many distinct values are classes.
    std::size_t class_cap = 20;
};

namespace detail {

inline bool is_integer_valued(double v) { return std::floor(v) == v; }

/// Convert raw text to a typed cell for `column`, or explain why not.
inline std::optional<std::string> convert_cell(const Column& column, std::string_view text, Cell& out,
                                               bool allow_unknown_category) {
    if (column.kind == ColumnKind::numeric) {
        const auto v = csv::parse_number(text);
        if (!v) return "type: '" + std::string(text) + "' is not a number in column '" + column.name + "'";
        out = *v;
        return std::nullopt;
    }
    std::string value(csv::trim(text));
    if (value.empty()) return "missing value in column '" + column.name + "'";
    if (!allow_unknown_category && !column.open &&
        std::find(column.categories.begin(), column.categories.end(), value) == column.categories.end()) {
        return "vocabulary: '" + value + "' not a known category of column '" + column.name + "'";
    }
    out = std::move(value);
    return std::nullopt;
}

}  // namespace detail

/// Infer a schema from a header and data records.
inline Schema infer_schema(const csv::Record& header, const std::vector<csv::Record>& records,
                           const InferOptions& options = {}) {
    if (records.empty()) throw InputError("cannot infer a schema without data rows");
    Schema schema;
    for (std::size_t c = 0; c < header.size(); ++c) {
        Column col;
        col.name = header[c];
        bool numeric = true;
        std::set<std::string> vocab;
        for (const auto& r : records) {
            if (c >= r.size()) continue;
            if (numeric && !csv::parse_number(r[c])) numeric = false;
            vocab.insert(std::string(csv::trim(r[c])));
        }
        col.kind = numeric ? ColumnKind::numeric : ColumnKind::categorical;
        if (!numeric) {
            col.categories.assign(vocab.begin(), vocab.end());
            sort_labels(col.categories);
        }
        schema.columns.push_back(std::move(col));
    }
    if (options.target.empty()) {
        schema.target = header.size() - 1;
    } else {
        const auto t = schema.find(options.target);
        if (!t) throw InputError("target column '" + options.target + "' not found in header");
        schema.target = *t;
    }

    auto& target = schema.columns[schema.target];
    if (target.kind == ColumnKind::categorical) {
        schema.task = Task::classification;
    } else {
        std::set<double> distinct;
        bool integral = true;
        for (const auto& r : records) {
            const double v = *csv::parse_number(r[schema.target]);
            integral = integral && detail::is_integer_valued(v);
            distinct.insert(v);
        }
        if (integral && distinct.size() <= options.class_cap) {
            schema.task = Task::classification;
            target.kind = ColumnKind::categorical;
            std::set<std::string> labels;
            for (const auto& r : records) labels.insert(std::string(csv::trim(r[schema.target])));
            target.categories.assign(labels.begin(), labels.end());
            sort_labels(target.categories);
        } else {
            schema.task = Task::regression;
        }
    }
    return schema;
}

/// Parse CSV text into a dataset. With a schema, the header must name
/// exactly the schema's columns (any order) and every cell must type-check;
/// empty categorical vocabularies in the schema are filled from the data.
inline Dataset parse_csv(std::string_view text, const std::optional<Schema>& schema = std::nullopt,
                         const InferOptions& options = {}) {
    const auto records = csv::read(text);
    if (records.empty()) throw CsvError(0, "missing header row");
    csv::Record header = records.front();
    for (auto& h : header) h = std::string(csv::trim(h));
    {
        std::set<std::string> names;
        for (const auto& h : header) {
            if (h.empty()) throw CsvError(0, "empty column name in header");
            if (!names.insert(h).second) throw CsvError(0, "duplicate header name '" + h + "'");
        }
    }
    std::vector<csv::Record> body(records.begin() + 1, records.end());
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i].size() != header.size()) {
            throw CsvError(i + 1, "expected " + std::to_string(header.size()) + " fields, got " +
                                      std::to_string(body[i].size()));
        }
        for (const auto& cell : body[i]) {
            if (csv::trim(cell).empty()) throw CsvError(i + 1, "missing value");
        }
    }

    Dataset ds;
    if (schema) {
        ds.schema = *schema;
    } else if (body.empty()) {
        // Header only: every column is numeric until proven otherwise.
        for (const auto& h : header) ds.schema.columns.push_back({h, ColumnKind::numeric, "", {}, false});
        ds.schema.target = header.size() - 1;
        if (!options.target.empty()) {
            const auto t = ds.schema.find(options.target);
            if (!t) throw InputError("target column '" + options.target + "' not found in header");
            ds.schema.target = *t;
        }
        ds.schema.task = Task::regression;
        return ds;
    } else {
        ds.schema = infer_schema(header, body, options);
    }

    // Map schema column -> position in the file.
    std::vector<std::size_t> position(ds.schema.columns.size());
    if (header.size() != ds.schema.columns.size()) {
        throw CsvError(0, "header has " + std::to_string(header.size()) + " columns, schema has " +
                              std::to_string(ds.schema.columns.size()));
    }
    for (std::size_t c = 0; c < ds.schema.columns.size(); ++c) {
        const auto it = std::find(header.begin(), header.end(), ds.schema.columns[c].name);
        if (it == header.end()) throw CsvError(0, "header lacks column '" + ds.schema.columns[c].name + "'");
        position[c] = static_cast<std::size_t>(it - header.begin());
    }

    // Fill empty vocabularies from the data when a sidecar left them out.
    for (std::size_t c = 0; c < ds.schema.columns.size(); ++c) {
        auto& col = ds.schema.columns[c];
        if (col.kind != ColumnKind::categorical || !col.categories.empty()) continue;
        std::set<std::string> vocab;
        for (const auto& r : body) vocab.insert(std::string(csv::trim(r[position[c]])));
        col.categories.assign(vocab.begin(), vocab.end());
        sort_labels(col.categories);
    }
    if (!body.empty()) ds.schema.validate();

    ds.rows.reserve(body.size());
    for (std::size_t i = 0; i < body.size(); ++i) {
        Row row(ds.schema.columns.size());
        for (std::size_t c = 0; c < ds.schema.columns.size(); ++c) {
            if (auto err = detail::convert_cell(ds.schema.columns[c], body[i][position[c]], row[c], false)) {
                throw CsvError(i + 1, *err);
            }
        }
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

inline std::string to_csv(const Dataset& ds) {
    std::string out;
    csv::Record header;
    for (const auto& c : ds.schema.columns) header.push_back(c.name);
    csv::append_record(out, header);
    csv::Record rec;
    for (const auto& row : ds.rows) {
        rec.clear();
        for (const auto& cell : row) rec.push_back(cell_text(cell));
        csv::append_record(out, rec);
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// --- schema sidecar --------------------------------------------------------

inline nlohmann::json schema_to_json(const Schema& schema) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : schema.columns) {
        nlohmann::json j{{"name", c.name}, {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"}};
        if (!c.description.empty()) j["description"] = c.description;
        if (c.kind == ColumnKind::categorical) j["categories"] = c.categories;
        if (c.open) j["open"] = true;
        cols.push_back(std::move(j));
    }
    return {{"columns", std::move(cols)},
            {"target", schema.target_name()},
            {"task", schema.task == Task::classification ? "classification" : "regression"}};
}

inline Schema schema_from_json(const nlohmann::json& j) {
    try {
        Schema s;
        for (const auto& jc : j.at("columns")) {
            Column c;
            c.name = jc.at("name").get<std::string>();
            const auto kind = jc.at("kind").get<std::string>();
            if (kind == "numeric") {
                c.kind = ColumnKind::numeric;
            } else if (kind == "categorical") {
                c.kind = ColumnKind::categorical;
            } else {
                throw InputError("unknown column kind '" + kind + "'");
            }
            c.description = jc.value("description", "");
            c.categories = jc.value("categories", std::vector<std::string>{});
            c.open = jc.value("open", false);
            s.columns.push_back(std::move(c));
        }
        const auto target = j.at("target").get<std::string>();
        const auto t = s.find(target);
        if (!t) throw InputError("schema target '" + target + "' is not a column");
        s.target = *t;
        const auto task = j.value("task", "");
        if (task == "classification") {
            s.task = Task::classification;
            s.columns[s.target].kind = ColumnKind::categorical;
            if (j.contains("classes")) s.columns[s.target].categories = j["classes"].get<std::vector<std::string>>();
        } else if (task == "regression") {
            s.task = Task::regression;
        } else {
            throw InputError("schema task must be 'classification' or 'regression'");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad schema document: ") + e.what());
    }
}

// --- statistics ------------------------------------------------------------

struct NumericStats {
    double min = 0, max = 0, mean = 0, std = 0;
};

struct ColumnStats {
    std::size_t row_count = 0;
    /// Indexed by schema column; set for numeric columns only.
    std::vector<std::optional<NumericStats>> numeric;
    /// Indexed by schema column; populated for categorical columns only.
    std::vector<std::map<std::string, std::size_t>> frequencies;

    double range(std::size_t col) const {
        const auto& s = numeric.at(col);
        return s ? s->max - s->min : 0.0;
    }
};

/// Exact per-column statistics; standard deviation uses the population (1/n) form.
inline ColumnStats column_stats(const Dataset& ds) {
    if (ds.empty()) throw InputError("column statistics need at least one row");
    const std::size_t ncol = ds.schema.columns.size();
    ColumnStats st;
    st.row_count = ds.size();
    st.numeric.resize(ncol);
    st.frequencies.resize(ncol);
    for (std::size_t c = 0; c < ncol; ++c) {
        if (ds.schema.columns[c].kind == ColumnKind::numeric) {
            NumericStats s{ds.number(0, c), ds.number(0, c), 0, 0};
            double sum = 0;
            for (std::size_t r = 0; r < ds.size(); ++r) {
                const double v = ds.number(r, c);
                s.min = std::min(s.min, v);
                s.max = std::max(s.max, v);
                sum += v;
            }
            s.mean = sum / static_cast<double>(ds.size());
            double ss = 0;
            for (std::size_t r = 0; r < ds.size(); ++r) {
                const double d = ds.number(r, c) - s.mean;
                ss += d * d;
            }
            s.std = std::sqrt(ss / static_cast<double>(ds.size()));
            // Summation rounding can push the mean a hair outside [min, max].
            s.mean = std::clamp(s.mean, s.min, s.max);
            st.numeric[c] = s;
        } else {
            for (std::size_t r = 0; r < ds.size(); ++r) ++st.frequencies[c][ds.category(r, c)];
        }
    }
    return st;
}

// --- splitting -------------------------------------------------------------

struct Split {
    Dataset train;
    Dataset test;
};

/// Draw `n` training rows (class-balanced for classification); the rest
/// form the test set. Both keep the source row order.
inline Split stratified_split(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    if (ds.schema.task == Task::classification) {
        const std::size_t k = ds.schema.num_classes();
        if (k == 0 || n % k != 0) {
            throw InputError("training size " + std::to_string(n) + " is not divisible by the " +
                             std::to_string(k) + " classes");
        }
        const std::size_t per_class = n / k;
        std::vector<std::vector<std::size_t>> by_class(k);
        for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.label(i)].push_back(i);
        for (std::size_t c = 0; c < k; ++c) {
            if (by_class[c].size() < per_class) {
                throw InputError("class '" + ds.schema.classes()[c] + "' has " +
                                 std::to_string(by_class[c].size()) + " rows, needs " +
                                 std::to_string(per_class));
            }
            rng.shuffle(by_class[c]);
            chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + per_class);
        }
    } else {
        if (n > ds.size()) {
            throw InputError("training size " + std::to_string(n) + " exceeds " + std::to_string(ds.size()) +
                             " rows");
        }
        std::vector<std::size_t> all(ds.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        rng.shuffle(all);
        chosen.assign(all.begin(), all.begin() + n);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> rest;
    std::size_t next = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (next < chosen.size() && chosen[next] == i) {
            ++next;
        } else {
            rest.push_back(i);
        }
    }
    return {ds.subset(chosen), ds.subset(rest)};
}

}  // namespace refine
