#include "micloc/csm.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "micloc/error.hpp"
#include "micloc/random.hpp"

namespace micloc {

SourceDistribution::SourceDistribution(std::vector<double> powers) : powers_(std::move(powers))
{
    for (std::size_t i = 0; i < powers_.size(); ++i)
        require(std::isfinite(powers_[i]) && powers_[i] >= 0.0,
                "source power at index " + std::to_string(i) + " must be finite and nonnegative");
}

void SourceDistribution::set(std::size_t i, double power)
{
    require(std::isfinite(power) && power >= 0.0, "source power must be finite and nonnegative");
    powers_.at(i) = power;
}

namespace {

// Integer FFT bin for bin_freq, or an error if it falls between bins.
std::size_t fft_bin(double bin_freq, double sample_rate, std::size_t frame_len)
{
    require(sample_rate > 0.0, "sample rate must be positive");
    require(frame_len >= 1, "frame length must be positive");
    const double exact = bin_freq * static_cast<double>(frame_len) / sample_rate;
    const double k = std::round(exact);
    if (!(bin_freq >= 0.0) || std::abs(exact - k) > 1e-9 * std::max(1.0, exact) ||
        k >= static_cast<double>(frame_len))
        fail(ErrorCode::invalid_argument, "frequency " + std::to_string(bin_freq) + " Hz is not on the FFT grid (" +
                                              std::to_string(sample_rate / static_cast<double>(frame_len)) +
                                              " Hz spacing)");
    return static_cast<std::size_t>(k);
}

} // namespace

SpectralMatrix csm_from_snapshots(const Signals& signals, double sample_rate, std::size_t frame_len,
                                  std::size_t n_frames, Window window, double bin_freq)
{
    require(signals.rows() >= 1, "need at least one channel");
    require(n_frames >= 1, "need at least one frame");
    const std::size_t bin = fft_bin(bin_freq, sample_rate, frame_len);
    if (static_cast<std::size_t>(signals.cols()) < n_frames * frame_len)
        fail(ErrorCode::insufficient_data, "need " + std::to_string(n_frames * frame_len) + " samples per channel, got " +
                                               std::to_string(signals.cols()));

    const auto n = static_cast<Eigen::Index>(frame_len);
    Eigen::VectorXcd kernel(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        double w = 1.0;
        if (window == Window::hann)
            w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(frame_len));
        // Reduce the phase index modulo frame_len to keep the argument small.
        const auto phase_index = static_cast<double>((bin * static_cast<std::size_t>(t)) % frame_len);
        kernel[t] = std::polar(w, -2.0 * std::numbers::pi * phase_index / static_cast<double>(frame_len));
    }

    const Eigen::Index m = signals.rows();
    SpectralMatrix csm;
    csm.frequency = bin_freq;
    csm.entries = Eigen::MatrixXcd::Zero(m, m);
    Eigen::VectorXcd p(m);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const auto frame = signals.middleCols(static_cast<Eigen::Index>(i * frame_len), n);
        p = frame.cast<cdouble>() * kernel;
        csm.entries.noalias() += p * p.adjoint();
    }
    csm.entries /= static_cast<double>(n_frames);
    // Enforce exact Hermitian symmetry against rounding in the outer products.
    csm.entries = (0.5 * (csm.entries + csm.entries.adjoint())).eval();
    return csm;
}

SpectralMatrix synthesize_csm(const MicArray& array, const ScanGrid& grid, const SourceDistribution& sources,
                              double f, double c0)
{
    if (sources.size() != grid.size())
        fail(ErrorCode::dimension_mismatch, "source distribution has " + std::to_string(sources.size()) +
                                                " entries, grid has " + std::to_string(grid.size()));
    const auto m = static_cast<Eigen::Index>(array.size());
    SpectralMatrix csm;
    csm.frequency = f;
    csm.entries = Eigen::MatrixXcd::Zero(m, m);
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const double q2 = sources[s];
        if (q2 <= 0.0) continue;
        const auto e = steering_vector(array, grid.point(s), f, c0).entries;
        csm.entries.noalias() += q2 * (e * e.adjoint());
    }
    return csm;
}

double noise_power(const SpectralMatrix& csm, double snr_db)
{
    require(!std::isnan(snr_db), "SNR must not be NaN");
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    const double tr = csm.trace();
    require(csm.m() > 0 && tr > 0.0, "SNR is undefined for a CSM with zero trace");
    return (tr / static_cast<double>(csm.m())) / std::pow(10.0, snr_db / 10.0);
}

SpectralMatrix add_noise(const SpectralMatrix& csm, double snr_db)
{
    const double sigma2 = noise_power(csm, snr_db);
    SpectralMatrix out = csm;
    if (sigma2 == 0.0) return out;
    for (Eigen::Index i = 0; i < out.entries.rows(); ++i) out.entries(i, i) += sigma2;
    return out;
}

SpectralMatrix remove_diagonal(const SpectralMatrix& csm)
{
    SpectralMatrix out = csm;
    out.entries.diagonal().setZero();
    return out;
}

Signals simulate_snapshots(const MicArray& array, const ScanGrid& grid, const SourceDistribution& sources, double f,
                           double c0, double snr_db, double sample_rate, std::size_t frame_len, std::size_t n_frames,
                           std::mt19937_64& rng)
{
    const std::size_t bin = fft_bin(f, sample_rate, frame_len);
    require(bin != 0 && 2 * bin != frame_len, "simulation frequency must avoid the DC and Nyquist bins");
    require(n_frames >= 1, "need at least one frame");

    const SpectralMatrix clean = synthesize_csm(array, grid, sources, f, c0);
    const double sigma2 = clean.trace() > 0.0 ? noise_power(clean, snr_db) : 0.0;
    const double noise_sd = std::sqrt(sigma2 / static_cast<double>(frame_len));

    std::vector<std::size_t> active;
    std::vector<Eigen::VectorXcd> steer;
    for (std::size_t s = 0; s < sources.size(); ++s) {
        if (sources[s] <= 0.0) continue;
        active.push_back(s);
        steer.push_back(steering_vector(array, grid.point(s), f, c0).entries);
    }

    const auto m = static_cast<Eigen::Index>(array.size());
    const auto n = static_cast<Eigen::Index>(frame_len);
    Signals out(m, static_cast<Eigen::Index>(n_frames * frame_len));
    const auto normal = [](std::mt19937_64& g) { return standard_normal(g); };
    Eigen::VectorXcd amplitude(m);
    for (std::size_t i = 0; i < n_frames; ++i) {
        amplitude.setZero();
        for (std::size_t a = 0; a < active.size(); ++a) {
            const double sd = std::sqrt(sources[active[a]] / 2.0);
            const cdouble q(sd * normal(rng), sd * normal(rng));
            amplitude += q * steer[a];
        }
        // A real tone Re(A (2/N) exp(j 2 pi k t / N)) has DFT coefficient A at bin k.
        for (Eigen::Index t = 0; t < n; ++t) {
            const auto phase_index = static_cast<double>((bin * static_cast<std::size_t>(t)) % frame_len);
            const cdouble carrier =
                std::polar(2.0 / static_cast<double>(frame_len),
                           2.0 * std::numbers::pi * phase_index / static_cast<double>(frame_len));
            const Eigen::Index col = static_cast<Eigen::Index>(i * frame_len) + t;
            for (Eigen::Index ch = 0; ch < m; ++ch)
                out(ch, col) = (amplitude[ch] * carrier).real() + noise_sd * normal(rng);
        }
    }
    return out;
}

} // namespace micloc
