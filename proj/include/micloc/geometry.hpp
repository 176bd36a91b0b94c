#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

namespace micloc {

using Point3 = Eigen::Vector3d;
using cdouble = std::complex<double>;

inline constexpr double default_speed_of_sound = 340.0;

// Planar (or arbitrary) microphone layout. Positions are in meters; the
// center is always the arithmetic mean of the positions.
class MicArray {
public:
    explicit MicArray(std::vector<Point3> positions);

    std::size_t size() const noexcept { return positions_.size(); }
    const std::vector<Point3>& positions() const noexcept { return positions_; }
    const Point3& position(std::size_t m) const { return positions_.at(m); }
    const Point3& center() const noexcept { return center_; }

    // Largest pairwise distance between microphones.
    double diameter() const;

    // Order-sensitive hash of the coordinates, used to key caches.
    std::size_t fingerprint() const noexcept { return fingerprint_; }

    static MicArray parse(std::istream& in);
    static MicArray load(const std::filesystem::path& path);

private:
    std::vector<Point3> positions_;
    Point3 center_;
    std::size_t fingerprint_ = 0;
};

// N x N grid of candidate source points in the plane z = z0, spanning
// [-L/2, L/2]^2 with boundary points included. Index = row * N + col with
// x running along columns (fastest) and y along rows.
class ScanGrid {
public:
    ScanGrid(double z0, double alpha, std::size_t n);

    double z0() const noexcept { return z0_; }
    double alpha() const noexcept { return alpha_; }
    std::size_t n_per_side() const noexcept { return n_; }
    std::size_t size() const noexcept { return n_ * n_; }
    double side_length() const noexcept { return side_; }
    double spacing() const noexcept { return spacing_; }

    std::size_t index(std::size_t row, std::size_t col) const;
    std::size_t row(std::size_t index) const { return check(index) / n_; }
    std::size_t col(std::size_t index) const { return check(index) % n_; }
    Point3 point(std::size_t index) const;

    bool on_boundary(std::size_t index) const;
    // 8-neighbourhood adjacency (Chebyshev distance of one cell).
    bool adjacent(std::size_t a, std::size_t b) const;

    bool operator==(const ScanGrid& other) const noexcept
    {
        return z0_ == other.z0_ && alpha_ == other.alpha_ && n_ == other.n_;
    }

private:
    std::size_t check(std::size_t index) const;

    double z0_;
    double alpha_;
    std::size_t n_;
    double side_;
    double spacing_;
};

ScanGrid build_grid(double z0, double alpha, std::size_t n);

struct SteeringVector {
    Eigen::VectorXcd entries;
    Point3 focus;
    double frequency = 0.0;
};

// Monopole steering vector e_m = (|r - r_m| / |r|) exp(-j 2 pi f |r - r_m| / c0),
// where |r| is measured from the focus to the array center.
SteeringVector steering_vector(const MicArray& array, const Point3& focus, double f, double c0);

// Rayleigh-type resolution limit of conventional beamforming,
// R = 1.22 / cos(alpha/2)^3 * z c / (D f).
double rayleigh_resolution(double diameter, double z, double f, double alpha, double c);

inline double degrees_to_radians(double deg) { return deg * 3.14159265358979323846 / 180.0; }

} // namespace micloc
