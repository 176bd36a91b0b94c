#include "micloc/micloc.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <new>
#include <string>

#include "micloc/beamform.hpp"
#include "micloc/csm.hpp"
#include "micloc/damas.hpp"
#include "micloc/datagen.hpp"
#include "micloc/error.hpp"
#include "micloc/geometry.hpp"
#include "micloc/io.hpp"
#include "micloc/neuralnet.hpp"
#include "micloc/random.hpp"

using namespace micloc;

struct micloc_array {
    MicArray value;
};
struct micloc_grid {
    ScanGrid value;
};
struct micloc_csm {
    SpectralMatrix value;
};
struct micloc_propagation {
    PropagationMatrix value;
    PropagationFileInfo info;
};
struct micloc_dataset {
    Dataset value;
};
struct micloc_network {
    Network<float> value;
};
struct micloc_evaluation {
    AccuracyReport report;
    FailureReport failures;
    std::size_t k;
};

namespace {

thread_local std::string last_error;

micloc_status to_status(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_argument: return MICLOC_ERR_INVALID_ARGUMENT;
    case ErrorCode::dimension_mismatch: return MICLOC_ERR_DIMENSION_MISMATCH;
    case ErrorCode::singular_geometry: return MICLOC_ERR_SINGULAR_GEOMETRY;
    case ErrorCode::insufficient_data: return MICLOC_ERR_INSUFFICIENT_DATA;
    case ErrorCode::state: return MICLOC_ERR_STATE;
    case ErrorCode::io: return MICLOC_ERR_IO;
    case ErrorCode::file_not_found: return MICLOC_ERR_FILE_NOT_FOUND;
    case ErrorCode::format: return MICLOC_ERR_FORMAT;
    case ErrorCode::out_of_range: return MICLOC_ERR_OUT_OF_RANGE;
    }
    return MICLOC_ERR_INTERNAL;
}

struct NullArgument {
    const char* name;
};

struct BufferTooSmall {
    std::string message;
};

template <typename Fn>
micloc_status guard(Fn&& fn) noexcept
{
    try {
        fn();
        return MICLOC_OK;
    } catch (const Error& e) {
        last_error = e.what();
        return to_status(e.code());
    } catch (const NullArgument& e) {
        last_error = std::string("argument '") + e.name + "' must not be NULL";
        return MICLOC_ERR_NULL_ARGUMENT;
    } catch (const BufferTooSmall& e) {
        last_error = e.message;
        return MICLOC_ERR_BUFFER_TOO_SMALL;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return MICLOC_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return MICLOC_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown failure";
        return MICLOC_ERR_INTERNAL;
    }
}

template <typename P>
P* nonnull(P* p, const char* name)
{
    if (p == nullptr) throw NullArgument{name};
    return p;
}

void check_len(std::size_t got, std::size_t need, const char* what)
{
    if (got < need)
        throw BufferTooSmall{std::string(what) + " buffer holds " + std::to_string(got) + " values, need " +
                             std::to_string(need)};
}

} // namespace

extern "C" {

const char* micloc_version(void) { return "0.1.0"; }

const char* micloc_status_name(micloc_status status)
{
    switch (status) {
    case MICLOC_OK: return "ok";
    case MICLOC_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case MICLOC_ERR_DIMENSION_MISMATCH: return "dimension-mismatch";
    case MICLOC_ERR_SINGULAR_GEOMETRY: return "singular-geometry";
    case MICLOC_ERR_INSUFFICIENT_DATA: return "insufficient-data";
    case MICLOC_ERR_STATE: return "state";
    case MICLOC_ERR_IO: return "io";
    case MICLOC_ERR_FILE_NOT_FOUND: return "file-not-found";
    case MICLOC_ERR_FORMAT: return "format";
    case MICLOC_ERR_OUT_OF_RANGE: return "out-of-range";
    case MICLOC_ERR_NULL_ARGUMENT: return "null-argument";
    case MICLOC_ERR_BUFFER_TOO_SMALL: return "buffer-too-small";
    case MICLOC_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* micloc_last_error(void) { return last_error.c_str(); }

// ---- geometry ---------------------------------------------------------------

micloc_status micloc_array_load(const char* path, micloc_array** out)
{
    return guard([&] {
        auto array = MicArray::load(nonnull(path, "path"));
        *nonnull(out, "out") = new micloc_array{std::move(array)};
    });
}

micloc_status micloc_array_create(const double* xyz, size_t m, micloc_array** out)
{
    return guard([&] {
        nonnull(xyz, "xyz");
        std::vector<Point3> positions;
        for (size_t i = 0; i < m; ++i) positions.emplace_back(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
        *nonnull(out, "out") = new micloc_array{MicArray(std::move(positions))};
    });
}

void micloc_array_free(micloc_array* array) { delete array; }

size_t micloc_array_size(const micloc_array* array) { return array ? array->value.size() : 0; }

micloc_status micloc_array_diameter(const micloc_array* array, double* out)
{
    return guard([&] { *nonnull(out, "out") = nonnull(array, "array")->value.diameter(); });
}

micloc_status micloc_grid_create(double z0, double alpha, size_t n, micloc_grid** out)
{
    return guard([&] {
        auto grid = build_grid(z0, alpha, n);
        *nonnull(out, "out") = new micloc_grid{grid};
    });
}

void micloc_grid_free(micloc_grid* grid) { delete grid; }
size_t micloc_grid_size(const micloc_grid* grid) { return grid ? grid->value.size() : 0; }
size_t micloc_grid_n(const micloc_grid* grid) { return grid ? grid->value.n_per_side() : 0; }
double micloc_grid_side_length(const micloc_grid* grid) { return grid ? grid->value.side_length() : 0.0; }
double micloc_grid_spacing(const micloc_grid* grid) { return grid ? grid->value.spacing() : 0.0; }

micloc_status micloc_grid_point(const micloc_grid* grid, size_t index, double xyz[3])
{
    return guard([&] {
        const Point3 p = nonnull(grid, "grid")->value.point(index);
        nonnull(xyz, "xyz");
        xyz[0] = p.x();
        xyz[1] = p.y();
        xyz[2] = p.z();
    });
}

micloc_status micloc_steering_vector(const micloc_array* array, const double focus[3], double f, double c0,
                                     double* re_im, size_t len)
{
    return guard([&] {
        nonnull(focus, "focus");
        const auto sv = steering_vector(nonnull(array, "array")->value, Point3(focus[0], focus[1], focus[2]), f, c0);
        check_len(len, 2 * array->value.size(), "steering vector");
        nonnull(re_im, "re_im");
        for (Eigen::Index m = 0; m < sv.entries.size(); ++m) {
            re_im[2 * m] = sv.entries[m].real();
            re_im[2 * m + 1] = sv.entries[m].imag();
        }
    });
}

micloc_status micloc_rayleigh_resolution(double diameter, double z, double f, double alpha, double c, double* out)
{
    return guard([&] { *nonnull(out, "out") = rayleigh_resolution(diameter, z, f, alpha, c); });
}

// ---- cross-spectral matrices ------------------------------------------------

micloc_status micloc_csm_synthesize(const micloc_array* array, const micloc_grid* grid, const double* powers, size_t s,
                                    double f, double c0, micloc_csm** out)
{
    return guard([&] {
        nonnull(powers, "powers");
        SourceDistribution sources(std::vector<double>(powers, powers + s));
        auto csm = synthesize_csm(nonnull(array, "array")->value, nonnull(grid, "grid")->value, sources, f, c0);
        *nonnull(out, "out") = new micloc_csm{std::move(csm)};
    });
}

micloc_status micloc_csm_from_entries(const double* re_im, size_t m, double f, micloc_csm** out)
{
    return guard([&] {
        nonnull(re_im, "re_im");
        require(m >= 1, "CSM needs at least one microphone");
        SpectralMatrix csm;
        csm.frequency = f;
        csm.entries.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < m; ++j) {
                const size_t k = i * m + j;
                csm.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = {re_im[2 * k], re_im[2 * k + 1]};
            }
        *nonnull(out, "out") = new micloc_csm{std::move(csm)};
    });
}

micloc_status micloc_csm_from_snapshots(const double* signals, size_t m, size_t samples, double sample_rate,
                                        size_t frame_len, size_t n_frames, micloc_window window, double bin_freq,
                                        micloc_csm** out)
{
    return guard([&] {
        nonnull(signals, "signals");
        using RowSignals = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const Signals data = Eigen::Map<const RowSignals>(signals, static_cast<Eigen::Index>(m),
                                                          static_cast<Eigen::Index>(samples));
        auto csm = csm_from_snapshots(data, sample_rate, frame_len, n_frames,
                                      window == MICLOC_WINDOW_HANN ? Window::hann : Window::rectangular, bin_freq);
        *nonnull(out, "out") = new micloc_csm{std::move(csm)};
    });
}

void micloc_csm_free(micloc_csm* csm) { delete csm; }

micloc_status micloc_csm_add_noise(micloc_csm* csm, double snr_db)
{
    return guard([&] {
        auto& c = nonnull(csm, "csm")->value;
        c = add_noise(c, snr_db);
    });
}

micloc_status micloc_csm_remove_diagonal(micloc_csm* csm)
{
    return guard([&] {
        auto& c = nonnull(csm, "csm")->value;
        c = remove_diagonal(c);
    });
}

size_t micloc_csm_size(const micloc_csm* csm) { return csm ? csm->value.m() : 0; }
double micloc_csm_frequency(const micloc_csm* csm) { return csm ? csm->value.frequency : 0.0; }

micloc_status micloc_csm_trace(const micloc_csm* csm, double* out)
{
    return guard([&] { *nonnull(out, "out") = nonnull(csm, "csm")->value.trace(); });
}

micloc_status micloc_csm_entries(const micloc_csm* csm, double* re_im, size_t len)
{
    return guard([&] {
        const auto& c = nonnull(csm, "csm")->value;
        const size_t m = c.m();
        check_len(len, 2 * m * m, "CSM");
        nonnull(re_im, "re_im");
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < m; ++j) {
                const auto v = c.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                re_im[2 * (i * m + j)] = v.real();
                re_im[2 * (i * m + j) + 1] = v.imag();
            }
    });
}

micloc_status micloc_csm_load(const char* path, micloc_csm** out)
{
    return guard([&] {
        auto csm = load_csm(nonnull(path, "path"));
        *nonnull(out, "out") = new micloc_csm{std::move(csm)};
    });
}

micloc_status micloc_csm_save(const micloc_csm* csm, const char* path, micloc_csm_encoding encoding)
{
    return guard([&] {
        save_csm(nonnull(path, "path"), nonnull(csm, "csm")->value,
                 encoding == MICLOC_CSM_JSON ? CsmEncoding::json : CsmEncoding::hex);
    });
}

// ---- beamforming ------------------------------------------------------------

micloc_status micloc_das_map(const micloc_csm* csm, const micloc_array* array, const micloc_grid* grid, double c0,
                             int diagonal_removal, double* out, size_t s)
{
    return guard([&] {
        const auto map = das_map(nonnull(csm, "csm")->value, nonnull(array, "array")->value,
                                 nonnull(grid, "grid")->value, c0, diagonal_removal != 0);
        check_len(s, map.size(), "map");
        std::copy(map.values.begin(), map.values.end(), nonnull(out, "out"));
    });
}

micloc_status micloc_psf_column(const micloc_array* array, const micloc_grid* grid, double f, double c0,
                                size_t source_index, double* out, size_t s)
{
    return guard([&] {
        const auto column =
            psf_column(nonnull(array, "array")->value, nonnull(grid, "grid")->value, f, c0, source_index);
        check_len(s, column.size(), "PSF");
        std::copy(column.begin(), column.end(), nonnull(out, "out"));
    });
}

micloc_status micloc_top_k(const double* values, size_t n, size_t k, size_t* out)
{
    return guard([&] {
        nonnull(values, "values");
        // Compared in double precision; the float top_k could merge close values.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        require(k <= n, "k exceeds the number of values");
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](size_t a, size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
        order.resize(k);
        std::sort(order.begin(), order.end());
        std::copy(order.begin(), order.end(), nonnull(out, "out"));
    });
}

micloc_status micloc_count_local_maxima(const micloc_grid* grid, const double* values, size_t s, double rel_threshold,
                                        size_t* count)
{
    return guard([&] {
        const auto peaks = local_maxima(nonnull(grid, "grid")->value,
                                        std::span<const double>(nonnull(values, "values"), s), rel_threshold);
        *nonnull(count, "count") = peaks.size();
    });
}

micloc_status micloc_map_save_csv(const micloc_grid* grid, const double* values, size_t s, const char* path)
{
    return guard([&] {
        save_map_csv(nonnull(path, "path"), nonnull(grid, "grid")->value,
                     std::span<const double>(nonnull(values, "values"), s));
    });
}

micloc_status micloc_map_save_pgm(const micloc_grid* grid, const double* values, size_t s, const char* path)
{
    return guard([&] {
        save_map_pgm(nonnull(path, "path"), nonnull(grid, "grid")->value,
                     std::span<const double>(nonnull(values, "values"), s));
    });
}

micloc_status micloc_map_load_csv(const char* path, double* values, size_t cap, size_t* len)
{
    return guard([&] {
        const auto loaded = load_map_csv(nonnull(path, "path"));
        *nonnull(len, "len") = loaded.size();
        if (cap < loaded.size())
            throw BufferTooSmall{"map file has " + std::to_string(loaded.size()) + " values, buffer holds " +
                                 std::to_string(cap)};
        std::copy(loaded.begin(), loaded.end(), nonnull(values, "values"));
    });
}

// ---- DAMAS ------------------------------------------------------------------

micloc_status micloc_propagation_build(const micloc_array* array, const micloc_grid* grid, double f, double c0,
                                       micloc_propagation** out)
{
    return guard([&] {
        const auto& a = nonnull(array, "array")->value;
        const auto& g = nonnull(grid, "grid")->value;
        auto matrix = build_propagation_matrix(a, g, f, c0);
        PropagationFileInfo info{c0, a.fingerprint(), g.z0(), g.alpha()};
        *nonnull(out, "out") = new micloc_propagation{std::move(matrix), info};
    });
}

micloc_status micloc_propagation_load(const char* path, micloc_propagation** out)
{
    return guard([&] {
        PropagationFileInfo info;
        auto matrix = load_propagation_matrix(nonnull(path, "path"), &info);
        *nonnull(out, "out") = new micloc_propagation{std::move(matrix), info};
    });
}

micloc_status micloc_propagation_save(const micloc_propagation* a, const char* path)
{
    return guard([&] { save_propagation_matrix(nonnull(path, "path"), nonnull(a, "a")->value, a->info); });
}

void micloc_propagation_free(micloc_propagation* a) { delete a; }
size_t micloc_propagation_size(const micloc_propagation* a) { return a ? a->value.size() : 0; }

micloc_status micloc_propagation_matches(const micloc_propagation* a, const micloc_array* array, const micloc_grid* grid,
                                         double f, double c0, int* matches)
{
    return guard([&] {
        const auto& p = nonnull(a, "a")->value;
        const auto& info = a->info;
        const auto& g = nonnull(grid, "grid")->value;
        *nonnull(matches, "matches") = p.size() == g.size() && p.frequency == f && info.c0 == c0 &&
                                       info.array_fingerprint == nonnull(array, "array")->value.fingerprint() &&
                                       info.z0 == g.z0() && info.alpha == g.alpha();
    });
}

micloc_status micloc_damas_solve(const micloc_propagation* a, const double* dirty_map, size_t s, size_t iterations,
                                 micloc_sweep sweep, double* solution, micloc_residual* history, size_t history_cap,
                                 size_t* history_len)
{
    return guard([&] {
        DirtyMap b;
        b.values.assign(nonnull(dirty_map, "dirty_map"), dirty_map + s);
        b.frequency = nonnull(a, "a")->value.frequency;
        const auto result = damas_solve(a->value, b, iterations,
                                        sweep == MICLOC_SWEEP_FORWARD ? Sweep::forward : Sweep::alternating);
        const auto& x = result.solution.powers();
        std::copy(x.begin(), x.end(), nonnull(solution, "solution"));
        if (history_len) *history_len = result.residual_history.size();
        if (history)
            for (size_t i = 0; i < std::min(history_cap, result.residual_history.size()); ++i)
                history[i] = {result.residual_history[i].iteration, result.residual_history[i].residual};
    });
}

// ---- datasets ---------------------------------------------------------------

void micloc_dataset_config_default(micloc_dataset_config* config)
{
    if (!config) return;
    const DatasetConfig d;
    *config = {d.frequency, d.c0, d.snr_db, d.count, d.k, d.seed, d.stochastic_noise ? 1 : 0, d.snapshot_frames};
}

micloc_status micloc_sample_scenario(const micloc_grid* grid, size_t k, uint64_t seed, size_t* indices)
{
    return guard([&] {
        std::mt19937_64 rng = derived_stream(seed, 0);
        const auto key = sample_scenario(nonnull(grid, "grid")->value, k, rng).key();
        std::copy(key.begin(), key.end(), nonnull(indices, "indices"));
    });
}

micloc_status micloc_dataset_generate(const micloc_array* array, const micloc_grid* grid,
                                      const micloc_dataset_config* config, micloc_dataset** out)
{
    return guard([&] {
        const auto& c = *nonnull(config, "config");
        DatasetConfig cfg;
        cfg.frequency = c.frequency;
        cfg.c0 = c.c0;
        cfg.snr_db = c.snr_db;
        cfg.count = c.count;
        cfg.k = c.k;
        cfg.seed = c.seed;
        cfg.stochastic_noise = c.stochastic_noise != 0;
        cfg.snapshot_frames = c.snapshot_frames;
        auto ds = make_dataset(nonnull(array, "array")->value, nonnull(grid, "grid")->value, cfg);
        *nonnull(out, "out") = new micloc_dataset{std::move(ds)};
    });
}

micloc_status micloc_dataset_load(const char* path, micloc_dataset** out)
{
    return guard([&] {
        auto ds = Dataset::load(nonnull(path, "path"));
        *nonnull(out, "out") = new micloc_dataset{std::move(ds)};
    });
}

micloc_status micloc_dataset_save(const micloc_dataset* ds, const char* path)
{
    return guard([&] { nonnull(ds, "ds")->value.save(nonnull(path, "path")); });
}

void micloc_dataset_free(micloc_dataset* ds) { delete ds; }

micloc_status micloc_dataset_info_get(const micloc_dataset* ds, micloc_dataset_info* info)
{
    return guard([&] {
        const auto& d = nonnull(ds, "ds")->value;
        const auto& m = d.meta();
        *nonnull(info, "info") = {d.size(),
                                  m.m,
                                  m.s,
                                  m.k,
                                  m.in_channels,
                                  d.count(Split::train),
                                  d.count(Split::validation),
                                  d.count(Split::test),
                                  m.frequency,
                                  m.c0,
                                  m.snr_db,
                                  m.seed};
    });
}

// ---- network ----------------------------------------------------------------

micloc_status micloc_network_create(size_t m, size_t s, size_t in_channels, uint64_t seed, micloc_network** out)
{
    return guard([&] {
        auto net = build_network<float>(m, s, in_channels, seed);
        *nonnull(out, "out") = new micloc_network{std::move(net)};
    });
}

micloc_status micloc_network_load(const char* path, micloc_network** out)
{
    return guard([&] {
        auto net = load_weights(nonnull(path, "path"));
        *nonnull(out, "out") = new micloc_network{std::move(net)};
    });
}

micloc_status micloc_network_save(const micloc_network* net, const char* path)
{
    return guard([&] { save_weights(nonnull(net, "net")->value, nonnull(path, "path")); });
}

void micloc_network_free(micloc_network* net) { delete net; }

size_t micloc_network_parameter_count(const micloc_network* net) { return net ? net->value.parameter_count() : 0; }

micloc_status micloc_network_shape(const micloc_network* net, size_t* m, size_t* s, size_t* in_channels)
{
    return guard([&] {
        const auto& spec = nonnull(net, "net")->value.spec();
        if (m) *m = spec.m;
        if (s) *s = spec.s;
        if (in_channels) *in_channels = spec.in_channels;
    });
}

micloc_status micloc_network_predict(micloc_network* net, const float* input, size_t count, float* out, size_t out_len)
{
    return guard([&] {
        auto& n = nonnull(net, "net")->value;
        const auto& spec = n.spec();
        check_len(out_len, count * spec.s, "prediction");
        const std::span<const float> in(nonnull(input, "input"), count * spec.m * spec.m * spec.in_channels);
        const auto y = predict(n, in, count);
        std::copy(y.begin(), y.end(), nonnull(out, "out"));
    });
}

micloc_status micloc_network_predict_csm(micloc_network* net, const micloc_csm* csm, float* out, size_t s)
{
    return guard([&] {
        auto& n = nonnull(net, "net")->value;
        const auto& c = nonnull(csm, "csm")->value;
        const auto& spec = n.spec();
        if (c.m() != spec.m || spec.in_channels != 2)
            throw Error(ErrorCode::dimension_mismatch, "network expects a " + std::to_string(spec.m) + "-microphone CSM with " +
                                                           std::to_string(spec.in_channels) + " channels, got M=" +
                                                           std::to_string(c.m()));
        check_len(s, spec.s, "prediction");
        const Tensor<float> x({spec.m, spec.m, 2}, csm_to_input(c));
        const auto y = n.forward(x);
        std::copy(y.values.begin(), y.values.end(), nonnull(out, "out"));
    });
}

void micloc_train_config_default(micloc_train_config* config)
{
    if (!config) return;
    const TrainConfig d;
    *config = {d.epochs, d.batch_size, d.seed, d.learning_rate, d.beta1, nullptr, nullptr};
}

micloc_status micloc_network_train(micloc_network* net, const micloc_dataset* ds, const micloc_train_config* config,
                                   micloc_epoch* history, size_t history_cap, double* initial_train_loss,
                                   double* initial_validation_loss)
{
    return guard([&] {
        auto& n = nonnull(net, "net")->value;
        const auto& d = nonnull(ds, "ds")->value;
        const auto& c = *nonnull(config, "config");
        if (n.spec().m != d.meta().m || n.spec().s != d.meta().s || n.spec().in_channels != d.meta().in_channels)
            throw Error(ErrorCode::dimension_mismatch,
                        "network (m=" + std::to_string(n.spec().m) + ", s=" + std::to_string(n.spec().s) +
                            ") does not match dataset (m=" + std::to_string(d.meta().m) + ", s=" + std::to_string(d.meta().s) + ")");
        TrainConfig cfg;
        cfg.epochs = c.epochs;
        cfg.batch_size = c.batch_size;
        cfg.seed = c.seed;
        cfg.learning_rate = c.learning_rate;
        cfg.beta1 = c.beta1;
        if (c.on_epoch) {
            cfg.on_epoch = [&c](std::size_t epoch, double tl, double vl) {
                const micloc_epoch e{epoch, tl, vl};
                c.on_epoch(&e, c.user);
            };
        }
        const auto h = train(n, d.view(Split::train), d.view(Split::validation), cfg);
        if (history)
            for (size_t i = 0; i < std::min(history_cap, h.epochs.size()); ++i)
                history[i] = {h.epochs[i].epoch, h.epochs[i].train_loss, h.epochs[i].validation_loss};
        if (initial_train_loss) *initial_train_loss = h.initial_train_loss;
        if (initial_validation_loss) *initial_validation_loss = h.initial_validation_loss;
    });
}

// ---- evaluation -------------------------------------------------------------

namespace {

micloc_evaluation* make_evaluation(AccuracyReport report, std::size_t k)
{
    auto* ev = new micloc_evaluation{std::move(report), {}, k};
    ev->failures = edge_failure_report(ev->report.records);
    return ev;
}

} // namespace

micloc_status micloc_evaluate(micloc_network* net, const micloc_dataset* ds, size_t k, micloc_evaluation** out)
{
    return guard([&] {
        auto report = evaluate_accuracy(nonnull(net, "net")->value, nonnull(ds, "ds")->value, k);
        *nonnull(out, "out") = make_evaluation(std::move(report), k);
    });
}

micloc_status micloc_evaluate_oracle(const micloc_dataset* ds, size_t k, micloc_evaluation** out)
{
    return guard([&] {
        const auto& d = nonnull(ds, "ds")->value;
        const std::size_t first = d.offset(Split::test);
        auto report = evaluate_accuracy(
            [&](std::span<const float>, std::size_t count) {
                std::vector<float> y;
                for (std::size_t i = 0; i < count; ++i) {
                    const auto label = d.label(first + i);
                    y.insert(y.end(), label.begin(), label.end());
                }
                return y;
            },
            d, k);
        *nonnull(out, "out") = make_evaluation(std::move(report), k);
    });
}

void micloc_evaluation_free(micloc_evaluation* ev) { delete ev; }

micloc_status micloc_evaluation_summary(const micloc_evaluation* ev, micloc_eval_summary* out)
{
    return guard([&] {
        const auto& r = nonnull(ev, "ev")->report;
        const auto& f = ev->failures;
        *nonnull(out, "out") = {r.accuracy, r.correct,  r.total,  f.failures,        f.boundary,
                                f.adjacent, f.boundary_and_adjacent, f.neither, r.seconds_per_sample};
    });
}

micloc_status micloc_evaluation_record(const micloc_evaluation* ev, size_t i, size_t* truth, size_t* predicted,
                                       int* correct, int* boundary, int* adjacent)
{
    return guard([&] {
        const auto& records = nonnull(ev, "ev")->report.records;
        if (i >= records.size())
            throw Error(ErrorCode::out_of_range, "record " + std::to_string(i) + " of " + std::to_string(records.size()));
        const auto& r = records[i];
        if (truth) std::copy(r.truth.begin(), r.truth.end(), truth);
        if (predicted) std::copy(r.predicted.begin(), r.predicted.end(), predicted);
        if (correct) *correct = r.correct;
        if (boundary) *boundary = r.boundary;
        if (adjacent) *adjacent = r.adjacent;
    });
}

} // extern "C"
