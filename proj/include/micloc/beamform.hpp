#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "micloc/csm.hpp"
#include "micloc/geometry.hpp"

namespace micloc {

// Conventional beamformer output over a scan grid.
struct DirtyMap {
    std::vector<double> values;
    double frequency = 0.0;

    std::size_t size() const noexcept { return values.size(); }
};

// M x S matrix whose column s is e(r_s), plus the squared column norms.
struct SteeringMatrix {
    Eigen::MatrixXcd columns;
    Eigen::VectorXd squared_norms;
};

// Steering vectors for every grid point, memoized per (array, grid, f, c0).
// The cache is process-wide, bounded, and safe for concurrent callers.
std::shared_ptr<const SteeringMatrix> steering_matrix(const MicArray& array, const ScanGrid& grid, double f,
                                                      double c0);

// b(r) = e(r)^H C e(r) / |e(r)|^4 at every grid point. With diagonal_removal
// the CSM diagonal is zeroed first; the denominator is unchanged, so values
// may dip below zero and are reported as-is.
DirtyMap das_map(const SpectralMatrix& csm, const MicArray& array, const ScanGrid& grid,
                 double c0 = default_speed_of_sound, bool diagonal_removal = false);

// PSF(r | r_s) = |e(r)^H e(r_s)|^2 / |e(r)|^4 for all grid points r.
std::vector<double> psf_column(const MicArray& array, const ScanGrid& grid, double f, double c0,
                               std::size_t source_index);

// Grid points that are >= all 8-neighbours, strictly above neighbours that
// precede them in index order (one peak per plateau), and >= rel_threshold
// times the global maximum.
std::vector<std::size_t> local_maxima(const ScanGrid& grid, std::span<const double> values, double rel_threshold);

} // namespace micloc
