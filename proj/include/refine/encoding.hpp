#pragma once

#include <cstddef>
#include <vector>

#include "refine/dataset.hpp"

namespace refine {

/// Dense numeric view of a dataset's features for the tree learners.
/// Categorical cells become their vocabulary index (-1 when unknown).
struct FeatureMatrix {
    std::size_t rows = 0;
    std::vector<std::size_t> columns;  ///< schema column of each feature
    std::vector<bool> categorical;
    std::vector<double> values;  ///< row-major, rows x columns.size()
    /// Class index (classification) or target value (regression).
    std::vector<double> targets;

    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t f) const { return values[r * columns.size() + f]; }
};

inline double encode_cell(const Schema& schema, std::size_t col, const Cell& cell) {
    if (schema.columns[col].kind == ColumnKind::numeric) return std::get<double>(cell);
    const auto idx = schema.category_index(col, std::get<std::string>(cell));
    return idx ? static_cast<double>(*idx) : -1.0;
}

inline FeatureMatrix encode(const Dataset& ds) {
    FeatureMatrix m;
    m.rows = ds.size();
    m.columns = ds.schema.feature_indices();
    for (auto c : m.columns) m.categorical.push_back(ds.schema.columns[c].kind == ColumnKind::categorical);
    m.values.reserve(m.rows * m.columns.size());
    m.targets.reserve(m.rows);
    const bool classification = ds.schema.task == Task::classification;
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (auto c : m.columns) m.values.push_back(encode_cell(ds.schema, c, ds.rows[r][c]));
        m.targets.push_back(classification ? static_cast<double>(ds.label(r)) : ds.target_value(r));
    }
    return m;
}

}  // namespace refine
