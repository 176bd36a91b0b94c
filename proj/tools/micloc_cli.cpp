// micloc: command-line front end over the C API.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "micloc/micloc.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

#ifndef MICLOC_DEFAULT_ARRAY
#define MICLOC_DEFAULT_ARRAY "data/array30.txt"
#endif

namespace {

constexpr double pi = 3.14159265358979323846;

// Exit codes. Library statuses map onto the range 3..9.
enum Exit : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,
    exit_file_not_found = 3,
    exit_io = 4,
    exit_format = 5,
    exit_dimension = 6,
    exit_range = 7,
    exit_invalid = 8,
    exit_numeric = 9,
};

struct Failure {
    int exit;
    std::string code;
    std::string message;
};

int exit_for(micloc_status s)
{
    switch (s) {
    case MICLOC_ERR_FILE_NOT_FOUND: return exit_file_not_found;
    case MICLOC_ERR_IO: return exit_io;
    case MICLOC_ERR_FORMAT: return exit_format;
    case MICLOC_ERR_DIMENSION_MISMATCH: return exit_dimension;
    case MICLOC_ERR_OUT_OF_RANGE: return exit_range;
    case MICLOC_ERR_INVALID_ARGUMENT:
    case MICLOC_ERR_NULL_ARGUMENT:
    case MICLOC_ERR_BUFFER_TOO_SMALL: return exit_invalid;
    case MICLOC_ERR_SINGULAR_GEOMETRY:
    case MICLOC_ERR_INSUFFICIENT_DATA:
    case MICLOC_ERR_STATE: return exit_numeric;
    default: return exit_internal;
    }
}

void check(micloc_status s)
{
    if (s != MICLOC_OK) throw Failure{exit_for(s), micloc_status_name(s), micloc_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{exit_usage, "usage", message}; }

// RAII owners for the opaque handles.
template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ArrayPtr = std::unique_ptr<micloc_array, Deleter<micloc_array, micloc_array_free>>;
using GridPtr = std::unique_ptr<micloc_grid, Deleter<micloc_grid, micloc_grid_free>>;
using CsmPtr = std::unique_ptr<micloc_csm, Deleter<micloc_csm, micloc_csm_free>>;
using PropagationPtr = std::unique_ptr<micloc_propagation, Deleter<micloc_propagation, micloc_propagation_free>>;
using DatasetPtr = std::unique_ptr<micloc_dataset, Deleter<micloc_dataset, micloc_dataset_free>>;
using NetworkPtr = std::unique_ptr<micloc_network, Deleter<micloc_network, micloc_network_free>>;
using EvaluationPtr = std::unique_ptr<micloc_evaluation, Deleter<micloc_evaluation, micloc_evaluation_free>>;

struct Common {
    std::string array = MICLOC_DEFAULT_ARRAY;
    double z0 = 2.0;
    double alpha_deg = 45.0;
    std::size_t n = 15;
    double freq = 8000.0;
    double c0 = 340.0;
    double snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool snr_default_finite)
{
    if (snr_default_finite) c.snr_db = 15.0;
    app->add_option("--array", c.array, "microphone position file (x y z per line)")->capture_default_str();
    app->add_option("--z0", c.z0, "distance from array plane to scan plane [m]")->capture_default_str();
    app->add_option("--alpha-deg", c.alpha_deg, "full opening angle of the scan area [deg]")->capture_default_str();
    app->add_option("--n", c.n, "grid points per side")->capture_default_str();
    app->add_option("--freq", c.freq, "frequency [Hz]")->capture_default_str();
    app->add_option("--c0", c.c0, "speed of sound [m/s]")->capture_default_str();
    app->add_option("--snr-db", c.snr_db, "signal-to-noise ratio [dB], inf disables noise")->capture_default_str();
    app->add_option("--seed", c.seed, "random seed")->capture_default_str();
    app->add_option("--out", c.out, "output path");
    app->add_option("--config", "JSON file with flat keys named like the flags");
}

ArrayPtr load_array(const Common& c)
{
    micloc_array* a = nullptr;
    check(micloc_array_load(c.array.c_str(), &a));
    return ArrayPtr(a);
}

GridPtr make_grid(const Common& c)
{
    micloc_grid* g = nullptr;
    check(micloc_grid_create(c.z0, c.alpha_deg * pi / 180.0, c.n, &g));
    return GridPtr(g);
}

CsmPtr load_csm(const std::string& path)
{
    micloc_csm* csm = nullptr;
    check(micloc_csm_load(path.c_str(), &csm));
    return CsmPtr(csm);
}

void require_out(const Common& c)
{
    if (c.out.empty()) usage_error("--out is required");
}

json number(double v)
{
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

std::vector<std::size_t> top_k(const std::vector<double>& v, std::size_t k)
{
    std::vector<std::size_t> idx(std::min(k, v.size()));
    check(micloc_top_k(v.data(), v.size(), idx.size(), idx.data()));
    return idx;
}

std::vector<double> dirty_map(const micloc_csm* csm, const micloc_array* array, const micloc_grid* grid, double c0,
                              bool dr)
{
    std::vector<double> map(micloc_grid_size(grid));
    check(micloc_das_map(csm, array, grid, c0, dr ? 1 : 0, map.data(), map.size()));
    return map;
}

std::size_t argmax(const std::vector<double>& v)
{
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename F>
double seconds(F&& f)
{
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Best of `reps` wall-clock timings after one warm-up call.
template <typename F>
double best_time(F&& f, int reps)
{
    f();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < reps; ++i) best = std::min(best, seconds(f));
    return best;
}

// Loads the propagation matrix from `cache` when it matches the
// configuration, otherwise builds it (and stores it when a cache path is set).
PropagationPtr propagation(const micloc_array* array, const micloc_grid* grid, double f, double c0,
                           const std::string& cache, bool* reused)
{
    *reused = false;
    micloc_propagation* a = nullptr;
    if (!cache.empty() && fs::exists(cache) && micloc_propagation_load(cache.c_str(), &a) == MICLOC_OK) {
        PropagationPtr loaded(a);
        int matches = 0;
        check(micloc_propagation_matches(loaded.get(), array, grid, f, c0, &matches));
        if (matches) {
            *reused = true;
            return loaded;
        }
    }
    check(micloc_propagation_build(array, grid, f, c0, &a));
    PropagationPtr built(a);
    if (!cache.empty()) check(micloc_propagation_save(built.get(), cache.c_str()));
    return built;
}

struct Damas {
    std::vector<double> solution;
    std::vector<micloc_residual> history;
};

Damas run_damas(const micloc_propagation* a, const std::vector<double>& b, std::size_t iterations, micloc_sweep sweep)
{
    Damas r;
    r.solution.resize(b.size());
    // Samples at sweep 1, every 10th sweep and the last one.
    r.history.resize(iterations / 10 + 2);
    std::size_t len = 0;
    check(micloc_damas_solve(a, b.data(), b.size(), iterations, sweep, r.solution.data(), r.history.data(),
                             r.history.size(), &len));
    r.history.resize(std::min(len, r.history.size()));
    return r;
}

micloc_sweep parse_sweep(const std::string& s)
{
    if (s == "forward") return MICLOC_SWEEP_FORWARD;
    if (s == "alternating") return MICLOC_SWEEP_ALTERNATING;
    usage_error("unknown sweep mode '" + s + "' (expected forward or alternating)");
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return parts;
}

template <typename T>
T parse_number(const std::string& text, const std::string& token)
{
    T v{};
    std::size_t used = 0;
    try {
        if constexpr (std::is_floating_point_v<T>)
            v = static_cast<T>(std::stod(text, &used));
        else {
            if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
            v = static_cast<T>(std::stoull(text, &used));
        }
    } catch (const std::exception&) {
        usage_error("malformed token '" + token + "'");
    }
    if (used != text.size()) usage_error("malformed token '" + token + "'");
    return v;
}

std::vector<std::size_t> parse_index_list(const std::string& s)
{
    std::vector<std::size_t> out;
    for (const auto& tok : split(s, ',')) out.push_back(parse_number<std::size_t>(tok, tok));
    return out;
}

void write_csv_history(const std::string& path, const std::vector<micloc_residual>& history)
{
    std::ofstream f(path);
    if (!f) throw Failure{exit_io, "io", "cannot open '" + path + "' for writing"};
    f << "iteration,residual\n";
    f.precision(17);
    for (const auto& h : history) f << h.iteration << ',' << h.residual << '\n';
    if (!f) throw Failure{exit_io, "io", "write to '" + path + "' failed"};
}

void write_json(const std::string& path, const json& j)
{
    std::ofstream f(path);
    if (!f) throw Failure{exit_io, "io", "cannot open '" + path + "' for writing"};
    f << j.dump(2) << '\n';
    if (!f) throw Failure{exit_io, "io", "write to '" + path + "' failed"};
}

// ---- subcommands --------------------------------------------------------------

struct SynthArgs {
    Common c;
    std::string sources;
    std::size_t random_k = 0;
    std::string encoding = "hex";
};

int cmd_synth(const SynthArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    if (args.sources.empty() == (args.random_k == 0)) usage_error("give exactly one of --sources or --random-k");
    auto array = load_array(c);
    auto grid = make_grid(c);
    const std::size_t s = micloc_grid_size(grid.get());

    std::vector<double> powers(s, 0.0);
    json scenario = json::array();
    if (!args.sources.empty()) {
        for (const auto& tok : split(args.sources, ',')) {
            const auto parts = split(tok, ':');
            if (parts.size() != 2) usage_error("malformed source token '" + tok + "' (expected idx:power)");
            const auto idx = parse_number<std::size_t>(parts[0], tok);
            const auto q2 = parse_number<double>(parts[1], tok);
            if (idx >= s)
                throw Failure{exit_range, "out-of-range",
                              "source index " + std::to_string(idx) + " outside grid of " + std::to_string(s) + " points"};
            if (!(q2 >= 0.0) || !std::isfinite(q2)) usage_error("malformed source token '" + tok + "' (power must be >= 0)");
            powers[idx] += q2;
        }
    } else {
        std::vector<std::size_t> idx(args.random_k);
        check(micloc_sample_scenario(grid.get(), args.random_k, c.seed, idx.data()));
        for (auto i : idx) powers[i] = 1.0;
    }
    for (std::size_t i = 0; i < s; ++i)
        if (powers[i] > 0.0) scenario.push_back({{"index", i}, {"power", powers[i]}});

    micloc_csm* raw = nullptr;
    check(micloc_csm_synthesize(array.get(), grid.get(), powers.data(), s, c.freq, c.c0, &raw));
    CsmPtr csm(raw);
    check(micloc_csm_add_noise(csm.get(), c.snr_db));
    const micloc_csm_encoding enc = args.encoding == "json" ? MICLOC_CSM_JSON : MICLOC_CSM_HEX;
    check(micloc_csm_save(csm.get(), c.out.c_str(), enc));
    double trace = 0.0;
    check(micloc_csm_trace(csm.get(), &trace));
    json j{{"sources", scenario},  {"frequency_hz", c.freq}, {"snr_db", number(c.snr_db)},
           {"m", micloc_csm_size(csm.get())}, {"trace", trace},     {"out", c.out}};
    if (args.random_k) j["seed"] = c.seed;
    std::cout << j.dump() << '\n';
    return exit_ok;
}

struct BeamformArgs {
    Common c;
    std::string csm;
    bool diagonal_removal = false;
    std::string pgm;
};

int cmd_beamform(const BeamformArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    auto array = load_array(c);
    auto grid = make_grid(c);
    auto csm = load_csm(args.csm);
    const auto map = dirty_map(csm.get(), array.get(), grid.get(), c.c0, args.diagonal_removal);
    check(micloc_map_save_csv(grid.get(), map.data(), map.size(), c.out.c_str()));
    if (!args.pgm.empty()) check(micloc_map_save_pgm(grid.get(), map.data(), map.size(), args.pgm.c_str()));
    const auto peak = argmax(map);
    std::cout << json{{"peak_index", peak}, {"peak_value", map[peak]}, {"frequency_hz", micloc_csm_frequency(csm.get())},
                      {"diagonal_removal", args.diagonal_removal}, {"out", c.out}}
                     .dump()
              << '\n';
    return exit_ok;
}

struct DamasArgs {
    Common c;
    std::string csm;
    bool diagonal_removal = false;
    std::size_t iterations = 1000;
    std::string sweep = "alternating";
    std::string residuals;
    std::string cache;
    std::string pgm;
    std::size_t k = 3;
    double support_threshold = 1e-6;
};

// Indices whose value exceeds rel times the map maximum. DAMAS leaves
// rounding-level residue (~1e-15) next to true sources; this ignores it.
std::vector<std::size_t> support(const std::vector<double>& v, double rel)
{
    std::vector<std::size_t> out;
    if (v.empty()) return out;
    const double cut = rel * *std::max_element(v.begin(), v.end());
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] > cut && v[i] > 0.0) out.push_back(i);
    return out;
}

int cmd_damas(const DamasArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    const auto sweep = parse_sweep(args.sweep);
    auto array = load_array(c);
    auto grid = make_grid(c);
    auto csm = load_csm(args.csm);
    const double f = micloc_csm_frequency(csm.get());
    const auto b = dirty_map(csm.get(), array.get(), grid.get(), c.c0, args.diagonal_removal);
    bool reused = false;
    auto a = propagation(array.get(), grid.get(), f, c.c0, args.cache, &reused);
    Damas result;
    const double t = seconds([&] { result = run_damas(a.get(), b, args.iterations, sweep); });
    check(micloc_map_save_csv(grid.get(), result.solution.data(), result.solution.size(), c.out.c_str()));
    if (!args.residuals.empty()) write_csv_history(args.residuals, result.history);
    if (!args.pgm.empty())
        check(micloc_map_save_pgm(grid.get(), result.solution.data(), result.solution.size(), args.pgm.c_str()));
    std::size_t nonzero = 0;
    for (double v : result.solution) nonzero += v > 0.0 ? 1 : 0;
    const auto supp = support(result.solution, args.support_threshold);
    std::cout << json{{"iterations", args.iterations},
                      {"sweep", args.sweep},
                      {"residual", result.history.empty() ? 0.0 : result.history.back().residual},
                      {"nonzero", nonzero},
                      {"support", supp.size() <= 64 ? json(supp) : json(supp.size())},
                      {"top_k", top_k(result.solution, args.k)},
                      {"seconds", t},
                      {"propagation_cached", reused},
                      {"out", c.out}}
                     .dump()
              << '\n';
    return exit_ok;
}

struct GenArgs {
    Common c;
    std::size_t count = 40000;
    std::size_t k = 3;
    bool stochastic = false;
    std::size_t frames = 64;
};

int cmd_gen(const GenArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    auto array = load_array(c);
    auto grid = make_grid(c);
    micloc_dataset_config cfg;
    micloc_dataset_config_default(&cfg);
    cfg.frequency = c.freq;
    cfg.c0 = c.c0;
    cfg.snr_db = c.snr_db;
    cfg.count = args.count;
    cfg.k = args.k;
    cfg.seed = c.seed;
    cfg.stochastic_noise = args.stochastic ? 1 : 0;
    cfg.snapshot_frames = args.frames;
    micloc_dataset* raw = nullptr;
    const double t = seconds([&] { check(micloc_dataset_generate(array.get(), grid.get(), &cfg, &raw)); });
    DatasetPtr ds(raw);
    check(micloc_dataset_save(ds.get(), c.out.c_str()));
    micloc_dataset_info info;
    check(micloc_dataset_info_get(ds.get(), &info));
    std::cout << json{{"count", info.count}, {"train", info.train},     {"validation", info.validation},
                      {"test", info.test},   {"m", info.m},             {"s", info.s},
                      {"k", info.k},         {"frequency_hz", info.frequency}, {"snr_db", number(info.snr_db)},
                      {"seed", info.seed},   {"seconds", t},            {"out", c.out}}
                     .dump()
              << '\n';
    return exit_ok;
}

struct TrainArgs {
    Common c;
    std::string data;
    std::string init;
    std::size_t epochs = 10;
    std::size_t batch = 32;
    double lr = 0.001;
    double beta1 = 0.9;
    std::string history;
    bool quiet = false;
};

void on_epoch(const micloc_epoch* e, void* user)
{
    if (*static_cast<bool*>(user)) return;
    std::cerr << "epoch " << e->epoch << " train_loss " << e->train_loss << " validation_loss " << e->validation_loss
              << std::endl;
}

int cmd_train(TrainArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    micloc_dataset* rawds = nullptr;
    check(micloc_dataset_load(args.data.c_str(), &rawds));
    DatasetPtr ds(rawds);
    micloc_dataset_info info;
    check(micloc_dataset_info_get(ds.get(), &info));
    micloc_network* rawnet = nullptr;
    if (args.init.empty())
        check(micloc_network_create(info.m, info.s, info.in_channels, c.seed, &rawnet));
    else
        check(micloc_network_load(args.init.c_str(), &rawnet));
    NetworkPtr net(rawnet);

    micloc_train_config cfg;
    micloc_train_config_default(&cfg);
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.seed = c.seed;
    cfg.learning_rate = args.lr;
    cfg.beta1 = args.beta1;
    cfg.on_epoch = on_epoch;
    cfg.user = &args.quiet;
    std::vector<micloc_epoch> history(args.epochs);
    double init_train = 0.0, init_val = 0.0;
    const double t = seconds([&] {
        check(micloc_network_train(net.get(), ds.get(), &cfg, history.data(), history.size(), &init_train, &init_val));
    });
    check(micloc_network_save(net.get(), c.out.c_str()));
    if (!args.history.empty()) {
        std::ofstream f(args.history);
        if (!f) throw Failure{exit_io, "io", "cannot open '" + args.history + "' for writing"};
        f << "epoch,train_loss,validation_loss\n";
        f.precision(17);
        for (const auto& e : history) f << e.epoch << ',' << e.train_loss << ',' << e.validation_loss << '\n';
        if (!f) throw Failure{exit_io, "io", "write to '" + args.history + "' failed"};
    }
    json epochs = json::array();
    for (const auto& e : history)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
    std::cout << json{{"initial_train_loss", init_train},
                      {"initial_validation_loss", init_val},
                      {"epochs", epochs},
                      {"parameters", micloc_network_parameter_count(net.get())},
                      {"seconds", t},
                      {"out", c.out}}
                     .dump()
              << '\n';
    return exit_ok;
}

struct EvalArgs {
    Common c;
    std::string data;
    std::string weights;
    bool oracle = false;
    std::size_t k = 3;
};

json evaluation_json(const micloc_evaluation* ev, std::size_t k)
{
    micloc_eval_summary s;
    check(micloc_evaluation_summary(ev, &s));
    const auto frac = [&](std::size_t n) { return s.failures ? static_cast<double>(n) / static_cast<double>(s.failures) : 0.0; };
    json failures = json::array();
    std::vector<std::size_t> truth(k), predicted(k);
    for (std::size_t i = 0; i < s.total; ++i) {
        int correct = 0, boundary = 0, adjacent = 0;
        check(micloc_evaluation_record(ev, i, truth.data(), predicted.data(), &correct, &boundary, &adjacent));
        if (!correct)
            failures.push_back({{"sample", i},
                                {"truth", truth},
                                {"predicted", predicted},
                                {"boundary", boundary != 0},
                                {"adjacent", adjacent != 0}});
    }
    return {{"accuracy", s.accuracy},
            {"correct", s.correct},
            {"total", s.total},
            {"seconds_per_sample", s.seconds_per_sample},
            {"failure_breakdown",
             {{"failures", s.failures},
              {"boundary", s.boundary_failures},
              {"adjacent", s.adjacent_failures},
              {"boundary_and_adjacent", s.boundary_and_adjacent_failures},
              {"neither", s.other_failures},
              {"boundary_fraction", frac(s.boundary_failures)},
              {"adjacent_fraction", frac(s.adjacent_failures)}}},
            {"failures", failures}};
}

int cmd_eval(const EvalArgs& args)
{
    const auto& c = args.c;
    if (args.oracle == !args.weights.empty()) usage_error("give exactly one of --weights or --oracle");
    micloc_dataset* rawds = nullptr;
    check(micloc_dataset_load(args.data.c_str(), &rawds));
    DatasetPtr ds(rawds);
    micloc_evaluation* rawev = nullptr;
    if (args.oracle) {
        check(micloc_evaluate_oracle(ds.get(), args.k, &rawev));
    } else {
        micloc_network* rawnet = nullptr;
        check(micloc_network_load(args.weights.c_str(), &rawnet));
        NetworkPtr net(rawnet);
        check(micloc_evaluate(net.get(), ds.get(), args.k, &rawev));
    }
    EvaluationPtr ev(rawev);
    micloc_dataset_info info;
    check(micloc_dataset_info_get(ds.get(), &info));
    json report = evaluation_json(ev.get(), args.k);
    report["frequency_hz"] = info.frequency;
    report["k"] = args.k;
    report["predictor"] = args.oracle ? "oracle" : "network";
    if (!c.out.empty()) write_json(c.out, report);
    json summary = report;
    summary.erase("failures");
    std::cout << summary.dump() << '\n';
    return exit_ok;
}

struct CompareArgs {
    Common c;
    std::string weights;
    std::string dispersed = "48,56,172";
    std::string adjacent = "64,65,160";
    std::size_t iterations = 1000;
    std::string sweep = "alternating";
    std::string cache;
    double peak_threshold = 0.5;
    int reps = 5;
};

int cmd_compare(const CompareArgs& args)
{
    const auto& c = args.c;
    require_out(c);
    const auto sweep = parse_sweep(args.sweep);
    auto array = load_array(c);
    auto grid = make_grid(c);
    const std::size_t s = micloc_grid_size(grid.get());
    NetworkPtr net;
    if (!args.weights.empty()) {
        micloc_network* raw = nullptr;
        check(micloc_network_load(args.weights.c_str(), &raw));
        net.reset(raw);
        std::size_t nm = 0, ns = 0;
        check(micloc_network_shape(net.get(), &nm, &ns, nullptr));
        if (nm != micloc_array_size(array.get()) || ns != s)
            throw Failure{exit_dimension, "dimension-mismatch",
                          "weights expect M=" + std::to_string(nm) + ", S=" + std::to_string(ns) + " but the array has M=" +
                              std::to_string(micloc_array_size(array.get())) + " and the grid S=" + std::to_string(s)};
    }
    fs::create_directories(c.out);
    bool reused = false;
    auto a = propagation(array.get(), grid.get(), c.freq, c.c0, args.cache, &reused);

    json scenarios = json::array();
    const std::pair<const char*, std::string> cases[] = {{"dispersed", args.dispersed}, {"adjacent", args.adjacent}};
    for (const auto& [name, list] : cases) {
        auto truth = parse_index_list(list);
        for (auto i : truth)
            if (i >= s) throw Failure{exit_range, "out-of-range", "source index " + std::to_string(i) + " outside grid"};
        std::sort(truth.begin(), truth.end());
        const std::size_t k = truth.size();
        std::vector<double> powers(s, 0.0);
        for (auto i : truth) powers[i] = 1.0;
        micloc_csm* raw = nullptr;
        check(micloc_csm_synthesize(array.get(), grid.get(), powers.data(), s, c.freq, c.c0, &raw));
        CsmPtr csm(raw);
        check(micloc_csm_add_noise(csm.get(), c.snr_db));

        json entry{{"name", name}, {"truth", truth}};
        const auto save = [&](const std::string& algo, const std::vector<double>& map) {
            const auto path = (fs::path(c.out) / (std::string(name) + "_" + algo + ".csv")).string();
            check(micloc_map_save_csv(grid.get(), map.data(), map.size(), path.c_str()));
            return path;
        };

        std::vector<double> bf;
        const double t_bf = best_time([&] { bf = dirty_map(csm.get(), array.get(), grid.get(), c.c0, false); }, args.reps);
        std::size_t maxima = 0;
        check(micloc_count_local_maxima(grid.get(), bf.data(), bf.size(), args.peak_threshold, &maxima));
        const auto bf_peaks = top_k(bf, k);
        entry["beamforming"] = {{"seconds", t_bf},
                                {"peaks", bf_peaks},
                                {"correct", bf_peaks == truth},
                                {"local_maxima_above_threshold", maxima},
                                {"separates_sources", maxima >= k},
                                {"map", save("beamforming", bf)}};

        Damas d;
        const double t_damas = seconds([&] { d = run_damas(a.get(), bf, args.iterations, sweep); });
        const auto damas_peaks = top_k(d.solution, k);
        entry["damas"] = {{"seconds", t_damas},
                          {"iterations", args.iterations},
                          {"peaks", damas_peaks},
                          {"correct", damas_peaks == truth},
                          {"support", support(d.solution, 1e-6)},
                          {"residual", d.history.empty() ? 0.0 : d.history.back().residual},
                          {"map", save("damas", d.solution)}};

        if (net) {
            std::vector<float> y(s);
            const double t_cnn = best_time([&] { check(micloc_network_predict_csm(net.get(), csm.get(), y.data(), s)); },
                                           args.reps);
            const std::vector<double> yd(y.begin(), y.end());
            const auto cnn_peaks = top_k(yd, k);
            entry["cnn"] = {{"seconds", t_cnn},
                            {"peaks", cnn_peaks},
                            {"correct", cnn_peaks == truth},
                            {"map", save("cnn", yd)}};
        } else {
            entry["cnn"] = nullptr;
        }
        scenarios.push_back(entry);
    }
    double resolution = 0.0, diameter = 0.0;
    check(micloc_array_diameter(array.get(), &diameter));
    check(micloc_rayleigh_resolution(diameter, c.z0, c.freq, c.alpha_deg * pi / 180.0, c.c0, &resolution));
    json report{{"frequency_hz", c.freq},
                {"snr_db", number(c.snr_db)},
                {"grid_spacing_m", micloc_grid_spacing(grid.get())},
                {"rayleigh_resolution_m", resolution},
                {"scenarios", scenarios}};
    write_json((fs::path(c.out) / "report.json").string(), report);
    std::cout << report.dump() << '\n';
    return exit_ok;
}

// Rewrites "--config FILE" into ordinary flags placed ahead of the
// user's own flags, so that explicit flags win (last value is kept).
// Keys unknown to the chosen subcommand are ignored, so one file can
// drive several subcommands.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args)
{
    if (args.empty()) return args;
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands({}))
        if (s->get_name() == args[0]) sub = s;
    if (!sub) return args;

    std::string path;
    std::vector<std::string> rest;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) usage_error("--config needs a file");
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw Failure{exit_file_not_found, "file-not-found", "config file '" + path + "' not found"};
    json cfg;
    try {
        in >> cfg;
    } catch (const json::exception& e) {
        throw Failure{exit_format, "format", "config file '" + path + "': " + e.what()};
    }
    if (!cfg.is_object()) throw Failure{exit_format, "format", "config file '" + path + "' must hold a JSON object"};

    std::vector<std::string> out{args[0]};
    for (const auto& [key, value] : cfg.items()) {
        const auto* opt = sub->get_option_no_throw("--" + key);
        if (!opt || key == "config") continue;
        if (value.is_boolean()) {
            if (opt->get_expected_min() != 0) usage_error("config key '" + key + "' needs a value, not a boolean");
            if (value.get<bool>()) out.push_back("--" + key);
            continue;
        }
        if (value.is_object() || value.is_array() || value.is_null())
            throw Failure{exit_format, "format", "config key '" + key + "' must be a string, number or boolean"};
        out.push_back("--" + key);
        out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

std::string one_line(std::string s)
{
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"micloc: acoustic source localization by beamforming, DAMAS and a CNN"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(micloc_version()));
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    SynthArgs synth;
    auto* s_synth = app.add_subcommand("synth-csm", "synthesize a cross-spectral matrix for point sources");
    add_common(s_synth, synth.c, false);
    s_synth->add_option("--sources", synth.sources, "comma-separated idx:power list");
    s_synth->add_option("--random-k", synth.random_k, "draw this many unit sources at random (uses --seed)");
    s_synth->add_option("--encoding", synth.encoding, "CSM file payload encoding")
        ->check(CLI::IsMember({"hex", "json"}))
        ->capture_default_str();

    BeamformArgs bf;
    auto* s_bf = app.add_subcommand("beamform", "conventional beamforming map from a CSM file");
    add_common(s_bf, bf.c, false);
    s_bf->add_option("--csm", bf.csm, "CSM file")->required();
    s_bf->add_flag("--diagonal-removal", bf.diagonal_removal, "zero the CSM diagonal first");
    s_bf->add_option("--pgm", bf.pgm, "also write a PGM heatmap");

    DamasArgs dm;
    auto* s_dm = app.add_subcommand("damas", "DAMAS deconvolution of the beamforming map");
    add_common(s_dm, dm.c, false);
    s_dm->add_option("--csm", dm.csm, "CSM file")->required();
    s_dm->add_flag("--diagonal-removal", dm.diagonal_removal, "beamform with the CSM diagonal removed");
    s_dm->add_option("--iterations", dm.iterations, "Gauss-Seidel sweeps")->capture_default_str();
    s_dm->add_option("--sweep", dm.sweep, "forward or alternating")->capture_default_str();
    s_dm->add_option("--residuals", dm.residuals, "residual history CSV");
    s_dm->add_option("--propagation-cache", dm.cache, "propagation matrix cache file");
    s_dm->add_option("--pgm", dm.pgm, "also write a PGM heatmap");
    s_dm->add_option("--k", dm.k, "number of peaks to report")->capture_default_str();
    s_dm->add_option("--support-threshold", dm.support_threshold, "support cut relative to the maximum")
        ->capture_default_str();

    GenArgs gen;
    auto* s_gen = app.add_subcommand("gen-data", "generate a labelled dataset of random scenarios");
    add_common(s_gen, gen.c, true);
    s_gen->add_option("--count", gen.count, "number of samples")->capture_default_str();
    s_gen->add_option("--k", gen.k, "sources per scenario")->capture_default_str();
    s_gen->add_flag("--stochastic-noise", gen.stochastic, "estimate CSMs from simulated noisy snapshots");
    s_gen->add_option("--frames", gen.frames, "snapshot frames per CSM in stochastic mode")->capture_default_str();

    TrainArgs tr;
    auto* s_tr = app.add_subcommand("train", "train the network on a dataset");
    add_common(s_tr, tr.c, false);
    s_tr->add_option("--data", tr.data, "dataset file")->required();
    s_tr->add_option("--init", tr.init, "start from these weights instead of a fresh network");
    s_tr->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
    s_tr->add_option("--batch", tr.batch, "batch size")->capture_default_str();
    s_tr->add_option("--lr", tr.lr, "ADAM learning rate")->capture_default_str();
    s_tr->add_option("--beta1", tr.beta1, "ADAM first-moment decay")->capture_default_str();
    s_tr->add_option("--history", tr.history, "per-epoch loss CSV");
    s_tr->add_flag("--quiet", tr.quiet, "no per-epoch progress on stderr");

    EvalArgs ev;
    auto* s_ev = app.add_subcommand("eval", "top-k accuracy on the dataset's test split");
    add_common(s_ev, ev.c, false);
    s_ev->add_option("--data", ev.data, "dataset file")->required();
    s_ev->add_option("--weights", ev.weights, "network weights file");
    s_ev->add_flag("--oracle", ev.oracle, "use a predictor that returns the true labels");
    s_ev->add_option("--k", ev.k, "sources per scenario")->capture_default_str();

    CompareArgs cmp;
    auto* s_cmp = app.add_subcommand("compare", "beamforming, DAMAS and CNN on two canonical scenarios");
    add_common(s_cmp, cmp.c, false);
    s_cmp->add_option("--weights", cmp.weights, "network weights trained at --freq");
    s_cmp->add_option("--dispersed", cmp.dispersed, "grid indices of the dispersed scenario")->capture_default_str();
    s_cmp->add_option("--adjacent", cmp.adjacent, "grid indices of the adjacent scenario")->capture_default_str();
    s_cmp->add_option("--iterations", cmp.iterations, "DAMAS sweeps")->capture_default_str();
    s_cmp->add_option("--sweep", cmp.sweep, "forward or alternating")->capture_default_str();
    s_cmp->add_option("--propagation-cache", cmp.cache, "propagation matrix cache file");
    s_cmp->add_option("--peak-threshold", cmp.peak_threshold, "relative level for counting local maxima")
        ->capture_default_str();
    s_cmp->add_option("--reps", cmp.reps, "timed repetitions (best is reported)")->capture_default_str();

    const auto fail = [](int code, const std::string& kind, const std::string& message) {
        std::cerr << json{{"error", kind}, {"message", one_line(message)}}.dump() << '\n';
        return code;
    };

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(app, std::move(args));
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForVersion& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            return fail(exit_usage, "usage", e.what());
        }
        if (s_synth->parsed()) return cmd_synth(synth);
        if (s_bf->parsed()) return cmd_beamform(bf);
        if (s_dm->parsed()) return cmd_damas(dm);
        if (s_gen->parsed()) return cmd_gen(gen);
        if (s_tr->parsed()) return cmd_train(tr);
        if (s_ev->parsed()) return cmd_eval(ev);
        if (s_cmp->parsed()) return cmd_compare(cmp);
        return fail(exit_usage, "usage", "no subcommand");
    } catch (const Failure& f) {
        return fail(f.exit, f.code, f.message);
    } catch (const fs::filesystem_error& e) {
        return fail(exit_io, "io", e.what());
    } catch (const std::exception& e) {
        return fail(exit_internal, "internal", e.what());
    }
}
