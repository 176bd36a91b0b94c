#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "micloc/csm.hpp"
#include "micloc/geometry.hpp"
#include "micloc/neuralnet.hpp"

namespace micloc {

struct Scenario {
    std::vector<std::size_t> source_indices; // distinct, in draw order
    std::vector<double> powers;
    double frequency = 0.0;

    SourceDistribution distribution(std::size_t s) const;
    // Sorted index set, the identity used for split disjointness.
    std::vector<std::size_t> key() const;
};

// k distinct indices drawn uniformly without replacement, unit powers.
Scenario sample_scenario(const ScanGrid& grid, std::size_t k, std::mt19937_64& rng, double frequency = 0.0);

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

struct DatasetConfig {
    double frequency = 8000.0;
    double c0 = default_speed_of_sound;
    double snr_db = 15.0; // +inf disables noise
    std::size_t count = 40000;
    std::size_t k = 3;
    std::uint64_t seed = 0;
    // Replace the expected-noise CSM with one averaged from simulated
    // snapshots (rectangular window, 1024-sample frames at 51.2 kHz).
    bool stochastic_noise = false;
    std::size_t snapshot_frames = 64;
};

struct DatasetMeta {
    std::size_t m = 0, s = 0, k = 0, in_channels = 2;
    double frequency = 0.0, c0 = 0.0, snr_db = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t array_fingerprint = 0;
    double z0 = 0.0, alpha = 0.0;
    std::size_t n_per_side = 0;
};

// Samples are held grouped by split (train, validation, test), generation
// order preserved within each split, so every split is a contiguous view.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(DatasetMeta meta) : meta_(meta) {}

    const DatasetMeta& meta() const noexcept { return meta_; }
    std::size_t size() const noexcept { return splits_.size(); }
    std::size_t input_length() const noexcept { return meta_.m * meta_.m * meta_.in_channels; }

    std::size_t count(Split split) const;
    std::size_t offset(Split split) const;
    SampleView view(Split split) const;

    Split split(std::size_t i) const { return splits_.at(i); }
    std::span<const std::uint32_t> indices(std::size_t i) const;
    std::span<const float> input(std::size_t i) const;
    std::span<const float> label(std::size_t i) const;

    // Appends a sample; samples must arrive in split order.
    void append(Split split, std::span<const std::uint32_t> indices, std::span<const float> input,
                std::span<const float> label);

    void save(const std::filesystem::path& path) const;
    static Dataset load(const std::filesystem::path& path);

private:
    DatasetMeta meta_;
    std::vector<Split> splits_;
    std::vector<std::uint32_t> indices_;
    std::vector<float> inputs_;
    std::vector<float> labels_;
};

// Fixed factor applied to CSM entries before they reach the network. Raw
// unit-source CSMs have diagonal entries near k; the scaled inputs leave the
// zero-output plateau much sooner at a learning rate of 0.001.
inline constexpr double input_scale = 0.1;

// input_scale * CSM as an M x M x 2 tensor: channel 0 real part, channel 1
// imaginary part.
std::vector<float> csm_to_input(const SpectralMatrix& csm);

// Noisy CSM for a scenario following the dataset configuration.
SpectralMatrix scenario_csm(const MicArray& array, const ScanGrid& grid, const Scenario& scenario,
                            const DatasetConfig& config, std::mt19937_64* snapshot_rng = nullptr);

// Samples `count` scenarios from per-sample seeded streams, assigns whole
// groups of identical index sets to one split (10% test, 10% validation,
// rest training), and synthesizes the inputs and labels.
Dataset make_dataset(const MicArray& array, const ScanGrid& grid, const DatasetConfig& config);

struct PredictionRecord {
    std::size_t sample = 0; // position within the test split
    std::vector<std::size_t> truth;
    std::vector<std::size_t> predicted;
    bool correct = false;
    bool boundary = false; // some true source on the grid edge
    bool adjacent = false; // two true sources in neighbouring cells
};

struct AccuracyReport {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    double seconds_per_sample = 0.0;
    std::vector<PredictionRecord> records;
};

// Indices of the k largest values, ties to the lower index, ascending.
std::vector<std::size_t> top_k(std::span<const float> values, std::size_t k);

using Predictor = std::function<std::vector<float>(std::span<const float> inputs, std::size_t count)>;

// Correct iff the top-k output indices equal the true index set.
AccuracyReport evaluate_accuracy(const Predictor& predictor, const Dataset& dataset, std::size_t k);
AccuracyReport evaluate_accuracy(Network<float>& net, const Dataset& dataset, std::size_t k);

struct FailureReport {
    std::size_t total = 0;
    std::size_t failures = 0;
    std::size_t boundary = 0;
    std::size_t adjacent = 0;
    std::size_t boundary_and_adjacent = 0;
    std::size_t neither = 0;

    double boundary_fraction() const { return failures ? static_cast<double>(boundary) / static_cast<double>(failures) : 0.0; }
    double adjacent_fraction() const { return failures ? static_cast<double>(adjacent) / static_cast<double>(failures) : 0.0; }
};

FailureReport edge_failure_report(std::span<const PredictionRecord> records);

} // namespace micloc
