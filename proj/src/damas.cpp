#include "micloc/damas.hpp"

#include <cmath>
#include <string>

#include "micloc/error.hpp"

namespace micloc {

PropagationMatrix build_propagation_matrix(const MicArray& array, const ScanGrid& grid, double f, double c0)
{
    const auto sm = steering_matrix(array, grid, f, c0);
    const auto s = static_cast<Eigen::Index>(grid.size());

    PropagationMatrix a;
    a.frequency = f;
    a.entries.resize(s, s);
    // Gram matrix of steering vectors: g(r, s) = e(r)^H e(s).
    const Eigen::MatrixXcd gram = sm->columns.adjoint() * sm->columns;
#pragma omp parallel for schedule(static)
    for (long col = 0; col < static_cast<long>(s); ++col) {
        for (Eigen::Index r = 0; r < s; ++r) {
            const double norm2 = sm->squared_norms[r];
            a.entries(r, col) = std::norm(gram(r, col)) / (norm2 * norm2);
        }
    }
    return a;
}

double damas_residual(const PropagationMatrix& a, const std::vector<double>& x, const std::vector<double>& b)
{
    const auto s = static_cast<Eigen::Index>(a.size());
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), s), bv(b.data(), s);
    return (a.entries * xv - bv).norm();
}

DamasResult damas_solve(const PropagationMatrix& a, const DirtyMap& b, std::size_t iterations, Sweep sweep)
{
    return damas_solve(a, b, iterations, sweep, std::vector<double>(a.size(), 0.0));
}

DamasResult damas_solve(const PropagationMatrix& a, const DirtyMap& b, std::size_t iterations, Sweep sweep,
                        std::vector<double> x)
{
    const std::size_t s = a.size();
    if (b.size() != s || static_cast<std::size_t>(a.entries.cols()) != s || x.size() != s)
        fail(ErrorCode::dimension_mismatch, "DAMAS system is " + std::to_string(a.entries.rows()) + "x" +
                                                std::to_string(a.entries.cols()) + " but the map has " +
                                                std::to_string(b.size()) + " entries");
    require(iterations >= 1, "DAMAS needs at least one iteration");
    for (std::size_t i = 0; i < s; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (std::abs(a.entries(ii, ii) - 1.0) > 1e-9)
            fail(ErrorCode::invalid_argument, "propagation matrix diagonal entry " + std::to_string(i) + " is " +
                                                  std::to_string(a.entries(ii, ii)) + ", expected 1");
        require(x[i] >= 0.0, "DAMAS starting point must be nonnegative");
    }

    // Row-major copy so each relaxation step walks contiguous memory.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = a.entries;
    DamasResult result;
    for (std::size_t it = 1; it <= iterations; ++it) {
        const bool reverse = sweep == Sweep::alternating && it % 2 == 0;
        for (std::size_t step = 0; step < s; ++step) {
            const std::size_t i = reverse ? s - 1 - step : step;
            const double* row = rows.data() + i * s;
            double acc = 0.0;
            for (std::size_t t = 0; t < s; ++t) acc += row[t] * x[t];
            acc -= row[i] * x[i];
            x[i] = std::max(0.0, b.values[i] - acc);
        }
        if (it == 1 || it % 10 == 0 || it == iterations)
            result.residual_history.push_back({it, damas_residual(a, x, b.values)});
    }
    result.iterations_run = iterations;
    result.solution = SourceDistribution(std::move(x));
    return result;
}

} // namespace micloc
