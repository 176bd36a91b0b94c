#include "micloc/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "micloc/error.hpp"

namespace micloc {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

MicArray::MicArray(std::vector<Point3> positions) : positions_(std::move(positions)), center_(Point3::Zero())
{
    require(!positions_.empty(), "microphone array needs at least one microphone");
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        const Point3& p = positions_[i];
        require(p.allFinite(), "microphone " + std::to_string(i) + " has a non-finite coordinate");
        for (std::size_t j = 0; j < i; ++j) {
            if (positions_[j] == p)
                fail(ErrorCode::invalid_argument,
                     "microphones " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
        }
        center_ += p;
        h = fnv1a(p.data(), 3 * sizeof(double), h);
    }
    center_ /= static_cast<double>(positions_.size());
    fingerprint_ = static_cast<std::size_t>(h);
}

double MicArray::diameter() const
{
    double d = 0.0;
    for (std::size_t i = 0; i < positions_.size(); ++i)
        for (std::size_t j = i + 1; j < positions_.size(); ++j)
            d = std::max(d, (positions_[i] - positions_[j]).norm());
    return d;
}

MicArray MicArray::parse(std::istream& in)
{
    std::vector<Point3> positions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream fields(line);
        double xyz[3];
        std::size_t count = 0;
        std::string token;
        while (fields >> token) {
            if (count == 3) fail(ErrorCode::format, "array file line " + std::to_string(lineno) + ": more than 3 values");
            char* end = nullptr;
            xyz[count] = std::strtod(token.c_str(), &end);
            if (end == token.c_str() || *end != '\0')
                fail(ErrorCode::format, "array file line " + std::to_string(lineno) + ": bad number '" + token + "'");
            ++count;
        }
        if (count == 0) continue;
        if (count != 3) fail(ErrorCode::format, "array file line " + std::to_string(lineno) + ": expected 3 values");
        positions.emplace_back(xyz[0], xyz[1], xyz[2]);
    }
    if (positions.empty()) fail(ErrorCode::format, "array file contains no microphones");
    return MicArray(std::move(positions));
}

MicArray MicArray::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::file_not_found, "cannot open array file " + path.string());
    return parse(in);
}

ScanGrid::ScanGrid(double z0, double alpha, std::size_t n) : z0_(z0), alpha_(alpha), n_(n)
{
    require(std::isfinite(z0) && z0 > 0.0, "grid distance z0 must be positive");
    require(alpha > 0.0 && alpha < std::numbers::pi, "opening angle must lie in (0, pi)");
    require(n >= 2, "grid needs at least 2 points per side");
    side_ = 2.0 * z0 * std::tan(alpha / 2.0);
    spacing_ = side_ / static_cast<double>(n - 1);
}

std::size_t ScanGrid::check(std::size_t index) const
{
    if (index >= size())
        fail(ErrorCode::out_of_range,
             "grid index " + std::to_string(index) + " outside [0, " + std::to_string(size()) + ")");
    return index;
}

std::size_t ScanGrid::index(std::size_t row, std::size_t col) const
{
    if (row >= n_ || col >= n_) fail(ErrorCode::out_of_range, "grid row/col outside grid");
    return row * n_ + col;
}

Point3 ScanGrid::point(std::size_t index) const
{
    check(index);
    // Offsets are taken from the grid center so odd grids hit (0, 0, z0) exactly.
    const double half = static_cast<double>(n_ - 1) / 2.0;
    const double x = (static_cast<double>(index % n_) - half) * spacing_;
    const double y = (static_cast<double>(index / n_) - half) * spacing_;
    return {x, y, z0_};
}

bool ScanGrid::on_boundary(std::size_t index) const
{
    const std::size_t r = row(index), c = col(index);
    return r == 0 || c == 0 || r + 1 == n_ || c + 1 == n_;
}

bool ScanGrid::adjacent(std::size_t a, std::size_t b) const
{
    if (a == b) return false;
    const auto dr = static_cast<long>(row(a)) - static_cast<long>(row(b));
    const auto dc = static_cast<long>(col(a)) - static_cast<long>(col(b));
    return std::labs(dr) <= 1 && std::labs(dc) <= 1;
}

ScanGrid build_grid(double z0, double alpha, std::size_t n) { return ScanGrid(z0, alpha, n); }

SteeringVector steering_vector(const MicArray& array, const Point3& focus, double f, double c0)
{
    require(f > 0.0, "frequency must be positive");
    require(c0 > 0.0, "speed of sound must be positive");
    const double r0 = (focus - array.center()).norm();
    if (r0 == 0.0) fail(ErrorCode::singular_geometry, "focus coincides with the array center");
    const double k = 2.0 * std::numbers::pi * f / c0;

    SteeringVector sv;
    sv.focus = focus;
    sv.frequency = f;
    sv.entries.resize(static_cast<Eigen::Index>(array.size()));
    for (std::size_t m = 0; m < array.size(); ++m) {
        const double rm = (focus - array.position(m)).norm();
        if (rm == 0.0) fail(ErrorCode::singular_geometry, "focus coincides with microphone " + std::to_string(m));
        sv.entries[static_cast<Eigen::Index>(m)] = std::polar(rm / r0, -k * rm);
    }
    return sv;
}

double rayleigh_resolution(double diameter, double z, double f, double alpha, double c)
{
    require(diameter > 0.0 && z > 0.0 && f > 0.0 && alpha > 0.0 && c > 0.0,
            "resolution arguments must all be positive");
    const double ca = std::cos(alpha / 2.0);
    return 1.22 / (ca * ca * ca) * (z * c) / (diameter * f);
}

} // namespace micloc
