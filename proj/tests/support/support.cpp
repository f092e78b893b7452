// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "support.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace desta::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string pattern = (fs::temp_directory_path() / "desta-test-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) {
        throw std::runtime_error("mkdtemp failed");
    }
    path_ = pattern;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path source_path(const std::string& relative) {
    return fs::path(DESTA_SOURCE_DIR) / relative;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string* why) {
    auto listing = [](const fs::path& root) {
        std::set<std::string> names;
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (entry.is_regular_file()) {
                names.insert(fs::relative(entry.path(), root).string());
            }
        }
        return names;
    };
    auto la = listing(a);
    auto lb = listing(b);
    if (la != lb) {
        if (why != nullptr) {
            *why = "file sets differ";
        }
        return false;
    }
    for (const auto& name : la) {
        if (read_file(a / name) != read_file(b / name)) {
            if (why != nullptr) {
                *why = name + " differs";
            }
            return false;
        }
    }
    return true;
}

} // namespace desta::testing
