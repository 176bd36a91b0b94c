#include "micloc/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <mutex>
#include <string>
#include <tuple>

#include "micloc/error.hpp"

namespace micloc {

namespace {

struct CacheKey {
    std::size_t array;
    double z0, alpha;
    std::size_t n;
    double f, c0;

    bool operator==(const CacheKey&) const = default;
};

class SteeringCache {
public:
    std::shared_ptr<const SteeringMatrix> get(const MicArray& array, const ScanGrid& grid, double f, double c0)
    {
        const CacheKey key{array.fingerprint(), grid.z0(), grid.alpha(), grid.n_per_side(), f, c0};
        {
            std::lock_guard lock(mutex_);
            for (const auto& [k, v] : entries_)
                if (k == key) return v;
        }
        auto computed = std::make_shared<const SteeringMatrix>(compute(array, grid, f, c0));
        std::lock_guard lock(mutex_);
        entries_.emplace_back(key, computed);
        if (entries_.size() > capacity) entries_.pop_front();
        return computed;
    }

private:
    static SteeringMatrix compute(const MicArray& array, const ScanGrid& grid, double f, double c0)
    {
        SteeringMatrix sm;
        const auto s = static_cast<Eigen::Index>(grid.size());
        sm.columns.resize(static_cast<Eigen::Index>(array.size()), s);
        sm.squared_norms.resize(s);
        for (Eigen::Index i = 0; i < s; ++i) {
            sm.columns.col(i) = steering_vector(array, grid.point(static_cast<std::size_t>(i)), f, c0).entries;
            sm.squared_norms[i] = sm.columns.col(i).squaredNorm();
        }
        return sm;
    }

    static constexpr std::size_t capacity = 16;
    std::mutex mutex_;
    std::deque<std::pair<CacheKey, std::shared_ptr<const SteeringMatrix>>> entries_;
};

SteeringCache& cache()
{
    static SteeringCache instance;
    return instance;
}

} // namespace

std::shared_ptr<const SteeringMatrix> steering_matrix(const MicArray& array, const ScanGrid& grid, double f,
                                                      double c0)
{
    return cache().get(array, grid, f, c0);
}

DirtyMap das_map(const SpectralMatrix& csm, const MicArray& array, const ScanGrid& grid, double c0,
                 bool diagonal_removal)
{
    if (csm.m() != array.size())
        fail(ErrorCode::dimension_mismatch, "CSM has M=" + std::to_string(csm.m()) + " but the array has M=" +
                                                std::to_string(array.size()));
    require(csm.frequency > 0.0, "CSM frequency must be positive");

    const auto sm = steering_matrix(array, grid, csm.frequency, c0);
    const Eigen::MatrixXcd c = diagonal_removal ? remove_diagonal(csm).entries : csm.entries;

    DirtyMap map;
    map.frequency = csm.frequency;
    map.values.resize(grid.size());
    const auto s = static_cast<long>(grid.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < s; ++i) {
        const auto e = sm->columns.col(i);
        const double norm2 = sm->squared_norms[i];
        const Eigen::VectorXcd ce = c * e;
        map.values[static_cast<std::size_t>(i)] = e.dot(ce).real() / (norm2 * norm2);
    }
    return map;
}

std::vector<double> psf_column(const MicArray& array, const ScanGrid& grid, double f, double c0,
                               std::size_t source_index)
{
    if (source_index >= grid.size())
        fail(ErrorCode::invalid_argument, "source index " + std::to_string(source_index) + " outside the grid");
    const auto sm = steering_matrix(array, grid, f, c0);
    const auto src = sm->columns.col(static_cast<Eigen::Index>(source_index));
    std::vector<double> column(grid.size());
    for (std::size_t r = 0; r < grid.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        const double norm2 = sm->squared_norms[i];
        column[r] = std::norm(sm->columns.col(i).dot(src)) / (norm2 * norm2);
    }
    return column;
}

std::vector<std::size_t> local_maxima(const ScanGrid& grid, std::span<const double> values, double rel_threshold)
{
    if (values.size() != grid.size()) fail(ErrorCode::dimension_mismatch, "map size does not match the grid");
    double peak = values.empty() ? 0.0 : values[0];
    for (double v : values) peak = std::max(peak, v);
    const auto n = static_cast<long>(grid.n_per_side());
    std::vector<std::size_t> out;
    for (long r = 0; r < n; ++r) {
        for (long c = 0; c < n; ++c) {
            const auto i = static_cast<std::size_t>(r * n + c);
            const double v = values[i];
            if (v < rel_threshold * peak) continue;
            bool is_max = true;
            for (long dr = -1; dr <= 1 && is_max; ++dr)
                for (long dc = -1; dc <= 1 && is_max; ++dc) {
                    const long rr = r + dr, cc = c + dc;
                    if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= n || cc >= n) continue;
                    const auto j = static_cast<std::size_t>(rr * n + cc);
                    if (values[j] > v || (j < i && values[j] == v)) is_max = false;
                }
            if (is_max) out.push_back(i);
        }
    }
    return out;
}

} // namespace micloc
