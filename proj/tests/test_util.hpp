#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

namespace test_util {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() /
                ("gabornet_" + name + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::filesystem::path> relative_files(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.push_back(std::filesystem::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Same relative file set with byte-identical contents.
inline bool trees_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
    const auto fa = relative_files(a);
    if (fa != relative_files(b) || fa.empty()) return false;
    for (const auto& f : fa) {
        if (slurp(a / f) != slurp(b / f)) return false;
    }
    return true;
}

/// Euclidean distance between two flat indices on an n-by-n periodic grid.
inline double torus_distance(std::size_t i, std::size_t j, std::size_t n) {
    auto wrap = [n](long d) {
        d = std::labs(d);
        return std::min<long>(d, static_cast<long>(n) - d);
    };
    const long dr = wrap(static_cast<long>(i / n) - static_cast<long>(j / n));
    const long dc = wrap(static_cast<long>(i % n) - static_cast<long>(j % n));
    return std::sqrt(static_cast<double>(dr * dr + dc * dc));
}

} // namespace test_util
