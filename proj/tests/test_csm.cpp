#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include <Eigen/Eigenvalues>

#include "micloc/csm.hpp"
#include "micloc/error.hpp"
#include "support.hpp"

using namespace micloc;
using testing::pi;

namespace {

const ScanGrid small_grid(1.0, 1.0, 5);

SourceDistribution random_sources(std::size_t s, std::size_t active, std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> pick(0, s - 1);
    std::uniform_real_distribution<double> power(0.1, 2.0);
    auto d = SourceDistribution::zeros(s);
    for (std::size_t i = 0; i < active; ++i) d.set(pick(rng), power(rng));
    return d;
}

double max_abs(const Eigen::MatrixXcd& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace

TEST_CASE("single source gives a rank-one CSM with trace |e|^2")
{
    const MicArray a = testing::reference_array();
    const ScanGrid g = testing::reference_grid();
    auto q = SourceDistribution::zeros(g.size());
    q.set(112, 1.0);
    const SpectralMatrix c = synthesize_csm(a, g, q, 8000.0);
    const auto e = steering_vector(a, g.point(112), 8000.0, 340.0).entries;
    CHECK(c.m() == 30);
    CHECK(c.trace() == doctest::Approx(e.squaredNorm()).epsilon(1e-13));
    CHECK(max_abs(c.entries - e * e.adjoint()) < 1e-14);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(c.entries);
    const auto& ev = eig.eigenvalues();
    CHECK(ev[29] == doctest::Approx(e.squaredNorm()).epsilon(1e-12));
    for (int i = 0; i < 29; ++i) CHECK(std::abs(ev[i]) < 1e-12);
}

TEST_CASE("CSM is Hermitian positive semidefinite with trace sum q^2 |e_s|^2")
{
    const MicArray a = testing::small_array();
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_sources(small_grid.size(), 1 + trial % 5, rng);
        const double f = 500.0 + 400.0 * trial;
        const SpectralMatrix c = synthesize_csm(a, small_grid, q, f);
        CHECK(max_abs(c.entries - c.entries.adjoint()) < 1e-14);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(c.entries);
        CHECK(eig.eigenvalues().minCoeff() > -1e-12 * c.trace());
        double want = 0.0;
        for (std::size_t s = 0; s < q.size(); ++s)
            if (q[s] > 0) want += q[s] * steering_vector(a, small_grid.point(s), f, 340.0).entries.squaredNorm();
        CHECK(c.trace() == doctest::Approx(want).epsilon(1e-13));
    }
}

TEST_CASE("CSM synthesis is linear in the source powers")
{
    const MicArray a = testing::small_array();
    std::mt19937_64 rng(5);
    const auto p = random_sources(small_grid.size(), 3, rng);
    const auto r = random_sources(small_grid.size(), 4, rng);
    std::vector<double> sum(small_grid.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0 * p[i] + r[i];
    const auto cp = synthesize_csm(a, small_grid, p, 2500.0);
    const auto cr = synthesize_csm(a, small_grid, r, 2500.0);
    const auto cs = synthesize_csm(a, small_grid, SourceDistribution(sum), 2500.0);
    CHECK(max_abs(cs.entries - (2.0 * cp.entries + cr.entries)) < 1e-13);
}

TEST_CASE("no sources yields the zero matrix")
{
    const auto c = synthesize_csm(testing::small_array(), small_grid, SourceDistribution::zeros(25), 1000.0);
    CHECK(max_abs(c.entries) == 0.0);
}

TEST_CASE("synthesis rejects mismatched source vectors and bad powers")
{
    const MicArray a = testing::small_array();
    try {
        synthesize_csm(a, small_grid, SourceDistribution::zeros(24), 1000.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
    CHECK_THROWS_AS(SourceDistribution(std::vector<double>{1.0, -0.5}), Error);
    CHECK_THROWS_AS(SourceDistribution(std::vector<double>{NAN}), Error);
}

TEST_CASE("noise adds sigma^2 on the diagonal only")
{
    const MicArray a = testing::reference_array();
    const ScanGrid g = testing::reference_grid();
    auto q = SourceDistribution::zeros(g.size());
    q.set(10, 1.0);
    q.set(100, 0.5);
    const auto c = synthesize_csm(a, g, q, 5000.0);
    const auto n = add_noise(c, 15.0);
    const double sigma2 = c.trace() / 30.0 * std::pow(10.0, -1.5);
    CHECK(noise_power(c, 15.0) == doctest::Approx(sigma2).epsilon(1e-15));
    const Eigen::MatrixXcd diff = n.entries - c.entries;
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 30; ++j) {
            if (i == j)
                CHECK(diff(i, j).real() == doctest::Approx(sigma2).epsilon(1e-12));
            else
                CHECK(std::abs(diff(i, j)) == 0.0);
        }
    // Mean per-microphone signal power over noise power recovers the SNR.
    CHECK(10.0 * std::log10(c.trace() / 30.0 / sigma2) == doctest::Approx(15.0));

    const auto same = add_noise(c, no_noise);
    CHECK(max_abs(same.entries - c.entries) == 0.0);

    try {
        add_noise(SpectralMatrix{1000.0, Eigen::MatrixXcd::Zero(3, 3)}, 10.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_argument);
    }
}

TEST_CASE("diagonal removal zeroes the diagonal and keeps the rest")
{
    const MicArray a = testing::small_array();
    std::mt19937_64 rng(3);
    const auto c = add_noise(synthesize_csm(a, small_grid, random_sources(25, 3, rng), 3000.0), 0.0);
    const auto d = remove_diagonal(c);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            if (i == j)
                CHECK(d.entries(i, j) == std::complex<double>(0.0, 0.0));
            else
                CHECK(d.entries(i, j) == c.entries(i, j));
        }
    CHECK(d.trace() == 0.0);
}

TEST_CASE("snapshot CSM equals a naive DFT average")
{
    const std::size_t m = 4, n = 64, frames = 5;
    const double sr = 6400.0, f = 1500.0; // bin 15
    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal;
    Signals x(m, n * frames + 10);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index t = 0; t < x.cols(); ++t) x(i, t) = normal(rng);

    for (Window w : {Window::rectangular, Window::hann}) {
        const auto c = csm_from_snapshots(x, sr, n, frames, w, f);
        std::vector<std::complex<long double>> want(m * m);
        for (std::size_t fr = 0; fr < frames; ++fr) {
            std::vector<std::complex<long double>> p(m);
            for (std::size_t ch = 0; ch < m; ++ch)
                for (std::size_t t = 0; t < n; ++t) {
                    const long double win =
                        w == Window::hann ? 0.5L - 0.5L * std::cos(2.0L * 3.14159265358979323846L * t / n) : 1.0L;
                    const long double ang = -2.0L * 3.14159265358979323846L * 15.0L * t / n;
                    p[ch] += win * x(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(fr * n + t)) *
                             std::complex<long double>(std::cos(ang), std::sin(ang));
                }
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) want[i * m + j] += p[i] * std::conj(p[j]);
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const auto wv = want[i * m + j] / static_cast<long double>(frames);
                const auto got = c.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                CHECK(std::abs(got.real() - static_cast<double>(wv.real())) < 1e-10);
                CHECK(std::abs(got.imag() - static_cast<double>(wv.imag())) < 1e-10);
            }
        CHECK(c.frequency == f);
    }
}

TEST_CASE("a pure tone on the bin yields its complex amplitude outer product")
{
    const std::size_t n = 128;
    const double sr = 12800.0, f = 2000.0; // bin 20
    const Eigen::VectorXcd amp = (Eigen::VectorXcd(3) << std::complex<double>(1.0, 0.5), std::complex<double>(-0.3, 0.2),
                                  std::complex<double>(0.0, -1.2))
                                     .finished();
    Signals x(3, n * 2);
    for (Eigen::Index ch = 0; ch < 3; ++ch)
        for (Eigen::Index t = 0; t < x.cols(); ++t)
            x(ch, t) = (amp[ch] * std::polar(2.0 / n, 2.0 * pi * 20.0 * static_cast<double>(t) / n)).real();
    const auto c = csm_from_snapshots(x, sr, n, 2, Window::rectangular, f);
    CHECK(max_abs(c.entries - amp * amp.adjoint()) < 1e-12);
}

TEST_CASE("snapshot CSM validates its inputs")
{
    Signals x = Signals::Zero(2, 100);
    try {
        csm_from_snapshots(x, 1000.0, 50, 3, Window::rectangular, 100.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::insufficient_data);
    }
    try {
        csm_from_snapshots(x, 1000.0, 50, 1, Window::rectangular, 110.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_argument);
    }
    const auto c = csm_from_snapshots(x, 1000.0, 50, 2, Window::rectangular, 100.0);
    CHECK(max_abs(c.entries) == 0.0);
}

TEST_CASE("simulated snapshots converge to the synthesized CSM plus noise")
{
    const MicArray a = testing::small_array();
    auto q = SourceDistribution::zeros(25);
    q.set(6, 1.0);
    q.set(18, 0.5);
    const double f = 2000.0, sr = 6400.0;
    const std::size_t n = 128;
    const auto target = add_noise(synthesize_csm(a, small_grid, q, f), 10.0);
    const auto error_for = [&](std::size_t frames) {
        std::mt19937_64 rng(99);
        const Signals x = simulate_snapshots(a, small_grid, q, f, 340.0, 10.0, sr, n, frames, rng);
        const auto c = csm_from_snapshots(x, sr, n, frames, Window::rectangular, f);
        return (c.entries - target.entries).norm() / target.entries.norm();
    };
    const double coarse = error_for(50);
    const double fine = error_for(3200);
    CHECK(fine < 0.08);
    CHECK(fine < coarse / 3.0);
}

TEST_CASE("snapshot simulation is reproducible under a seed")
{
    const MicArray a = testing::small_array();
    auto q = SourceDistribution::zeros(25);
    q.set(12, 1.0);
    std::mt19937_64 r1(4), r2(4);
    const Signals x1 = simulate_snapshots(a, small_grid, q, 2000.0, 340.0, 15.0, 6400.0, 64, 4, r1);
    const Signals x2 = simulate_snapshots(a, small_grid, q, 2000.0, 340.0, 15.0, 6400.0, 64, 4, r2);
    CHECK(x1 == x2);
}
