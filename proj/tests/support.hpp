#pragma once

#include <filesystem>
#include <string>

#include "refine/dataset.hpp"

namespace testing_support {

inline refine::Dataset table(const std::string& csv_text, const std::string& target = "") {
    refine::InferOptions opt;
    opt.target = target;
    return refine::parse_csv(csv_text, std::nullopt, opt);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("refine_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_support
