#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "micloc/beamform.hpp"
#include "micloc/csm.hpp"
#include "micloc/geometry.hpp"

namespace micloc {

// Column s holds the PSF of a unit source at grid point s; diagonal is 1.
struct PropagationMatrix {
    Eigen::MatrixXd entries;
    double frequency = 0.0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(entries.rows()); }
};

enum class Sweep { forward, alternating };

struct ResidualSample {
    std::size_t iteration;
    double residual; // |A x - b|_2
};

struct DamasResult {
    SourceDistribution solution;
    std::size_t iterations_run = 0;
    std::vector<ResidualSample> residual_history;
};

PropagationMatrix build_propagation_matrix(const MicArray& array, const ScanGrid& grid, double f,
                                           double c0 = default_speed_of_sound);

// Projected Gauss-Seidel relaxation of A x = b under x >= 0, starting from
// x = 0. Alternating mode runs every second sweep in reverse index order.
// The residual is recorded after sweep 1, every 10th sweep, and the last.
DamasResult damas_solve(const PropagationMatrix& a, const DirtyMap& b, std::size_t iterations,
                        Sweep sweep = Sweep::alternating);

// Same relaxation from a caller-provided nonnegative starting point.
DamasResult damas_solve(const PropagationMatrix& a, const DirtyMap& b, std::size_t iterations, Sweep sweep,
                        std::vector<double> initial);

double damas_residual(const PropagationMatrix& a, const std::vector<double>& x, const std::vector<double>& b);

} // namespace micloc
