#pragma once

#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "micloc/geometry.hpp"

namespace micloc {

// Cross-spectral matrix at a single frequency. Entries are Hermitian.
struct SpectralMatrix {
    double frequency = 0.0;
    Eigen::MatrixXcd entries;

    std::size_t m() const noexcept { return static_cast<std::size_t>(entries.rows()); }
    double trace() const { return entries.diagonal().real().sum(); }
};

// Nonnegative source powers q_s^2, one per grid point.
class SourceDistribution {
public:
    SourceDistribution() = default;
    explicit SourceDistribution(std::vector<double> powers);

    static SourceDistribution zeros(std::size_t s) { return SourceDistribution(std::vector<double>(s, 0.0)); }

    std::size_t size() const noexcept { return powers_.size(); }
    const std::vector<double>& powers() const noexcept { return powers_; }
    double operator[](std::size_t i) const { return powers_.at(i); }
    void set(std::size_t i, double power);

private:
    std::vector<double> powers_;
};

enum class Window { rectangular, hann };

// Channel-major multichannel time series: signals(m, t).
using Signals = Eigen::MatrixXd;

// C = (1/I) sum_i p_i p_i^H from I consecutive non-overlapping frames. p_i holds
// the unnormalized DFT coefficient of each (windowed) frame at bin_freq.
SpectralMatrix csm_from_snapshots(const Signals& signals, double sample_rate, std::size_t frame_len,
                                  std::size_t n_frames, Window window, double bin_freq);

// C = sum_s q_s^2 e(r_s) e(r_s)^H over the active (q_s^2 > 0) sources.
SpectralMatrix synthesize_csm(const MicArray& array, const ScanGrid& grid, const SourceDistribution& sources,
                              double f, double c0 = default_speed_of_sound);

inline constexpr double no_noise = std::numeric_limits<double>::infinity();

// Adds the expected CSM of white noise sitting snr_db below the mean
// per-microphone signal power: C + sigma^2 I, sigma^2 = (tr C / M) 10^(-snr/10).
SpectralMatrix add_noise(const SpectralMatrix& csm, double snr_db);
double noise_power(const SpectralMatrix& csm, double snr_db);

SpectralMatrix remove_diagonal(const SpectralMatrix& csm);

// Stochastic counterpart of synthesize_csm + add_noise: time series whose
// frames carry independent circular-Gaussian source amplitudes and white
// noise, calibrated so csm_from_snapshots (rectangular window) converges to
// synthesize_csm + sigma^2 I as n_frames grows. f must sit on the FFT grid.
Signals simulate_snapshots(const MicArray& array, const ScanGrid& grid, const SourceDistribution& sources, double f,
                           double c0, double snr_db, double sample_rate, std::size_t frame_len, std::size_t n_frames,
                           std::mt19937_64& rng);

} // namespace micloc
