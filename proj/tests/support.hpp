#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "micloc/geometry.hpp"

namespace testing {

inline constexpr double pi = 3.14159265358979323846;

inline micloc::MicArray reference_array() { return micloc::MicArray::load(MICLOC_DATA_DIR "/array30.txt"); }

inline micloc::ScanGrid reference_grid() { return micloc::ScanGrid(2.0, 45.0 * pi / 180.0, 15); }

// Small irregular planar array for fast exhaustive checks.
inline micloc::MicArray small_array()
{
    return micloc::MicArray({{0.10, 0.00, 0.0},
                             {-0.04, 0.09, 0.0},
                             {-0.07, -0.06, 0.0},
                             {0.03, -0.11, 0.0},
                             {0.00, 0.03, 0.0},
                             {0.12, 0.12, 0.0}});
}

// Fresh per-test scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("micloc-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testing

#include <array>
#include <cmath>

namespace testing {

inline std::vector<std::array<double, 3>> mic_points(const micloc::MicArray& a)
{
    std::vector<std::array<double, 3>> out;
    for (const auto& p : a.positions()) out.push_back({p.x(), p.y(), p.z()});
    return out;
}

// Grid points computed from the defining formulas, independent of ScanGrid.
inline std::vector<std::array<double, 3>> grid_points(double z0, double alpha, std::size_t n)
{
    const double side = 2.0 * z0 * std::tan(alpha / 2.0);
    const double dx = side / static_cast<double>(n - 1);
    std::vector<std::array<double, 3>> out;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            out.push_back({-side / 2.0 + static_cast<double>(c) * dx, -side / 2.0 + static_cast<double>(r) * dx, z0});
    return out;
}

} // namespace testing

#include "micloc/error.hpp"

namespace testing {

// Code of the micloc::Error thrown by f; ErrorCode::state stands in for
// "nothing thrown" in tests that never expect state errors.
template <typename F>
micloc::ErrorCode code_of(F&& f)
{
    try {
        f();
    } catch (const micloc::Error& e) {
        return e.code();
    }
    return micloc::ErrorCode::state;
}

} // namespace testing
