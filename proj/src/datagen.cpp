#include "micloc/datagen.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "micloc/error.hpp"
#include "micloc/random.hpp"

namespace micloc {

SourceDistribution Scenario::distribution(std::size_t s) const
{
    auto dist = SourceDistribution::zeros(s);
    for (std::size_t i = 0; i < source_indices.size(); ++i) {
        if (source_indices[i] >= s)
            fail(ErrorCode::out_of_range, "scenario index " + std::to_string(source_indices[i]) + " outside grid of " +
                                              std::to_string(s) + " points");
        dist.set(source_indices[i], powers.at(i));
    }
    return dist;
}

std::vector<std::size_t> Scenario::key() const
{
    auto k = source_indices;
    std::sort(k.begin(), k.end());
    return k;
}

Scenario sample_scenario(const ScanGrid& grid, std::size_t k, std::mt19937_64& rng, double frequency)
{
    const std::size_t s = grid.size();
    if (k < 1 || k > s)
        fail(ErrorCode::invalid_argument, "cannot draw " + std::to_string(k) + " distinct sources from " +
                                              std::to_string(s) + " grid points");
    // Partial Fisher-Yates over a lazily materialized permutation.
    std::map<std::size_t, std::size_t> swapped;
    auto at = [&](std::size_t i) {
        auto it = swapped.find(i);
        return it == swapped.end() ? i : it->second;
    };
    Scenario sc;
    sc.frequency = frequency;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(rng, s - i);
        const std::size_t vi = at(i), vj = at(j);
        swapped[j] = vi;
        swapped[i] = vj;
        sc.source_indices.push_back(vj);
    }
    sc.powers.assign(k, 1.0);
    return sc;
}

// ---------------------------------------------------------------------------
// Dataset container

std::size_t Dataset::count(Split split) const
{
    return static_cast<std::size_t>(std::count(splits_.begin(), splits_.end(), split));
}

std::size_t Dataset::offset(Split split) const
{
    return static_cast<std::size_t>(std::find_if(splits_.begin(), splits_.end(),
                                                 [&](Split s) { return s >= split; }) -
                                    splits_.begin());
}

SampleView Dataset::view(Split split) const
{
    const std::size_t first = offset(split), n = count(split);
    const std::size_t len = input_length();
    return SampleView{std::span<const float>(inputs_).subspan(first * len, n * len),
                      std::span<const float>(labels_).subspan(first * meta_.s, n * meta_.s), n};
}

std::span<const std::uint32_t> Dataset::indices(std::size_t i) const
{
    return std::span<const std::uint32_t>(indices_).subspan(i * meta_.k, meta_.k);
}

std::span<const float> Dataset::input(std::size_t i) const
{
    return std::span<const float>(inputs_).subspan(i * input_length(), input_length());
}

std::span<const float> Dataset::label(std::size_t i) const
{
    return std::span<const float>(labels_).subspan(i * meta_.s, meta_.s);
}

void Dataset::append(Split split, std::span<const std::uint32_t> indices, std::span<const float> input,
                     std::span<const float> label)
{
    if (!splits_.empty() && split < splits_.back())
        fail(ErrorCode::invalid_argument, "dataset samples must be appended in split order");
    if (indices.size() != meta_.k || input.size() != input_length() || label.size() != meta_.s)
        fail(ErrorCode::dimension_mismatch, "sample does not match dataset dimensions");
    splits_.push_back(split);
    indices_.insert(indices_.end(), indices.begin(), indices.end());
    inputs_.insert(inputs_.end(), input.begin(), input.end());
    labels_.insert(labels_.end(), label.begin(), label.end());
}

namespace {

constexpr char dataset_magic[4] = {'M', 'L', 'D', 'S'};
constexpr std::uint32_t dataset_version = 2; // 2: inputs carry input_scale

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename V>
void put(std::ostream& out, V v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in)
{
    V v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) fail(ErrorCode::format, "dataset file truncated");
    return v;
}

} // namespace

void Dataset::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write dataset file " + path.string());
    out.write(dataset_magic, 4);
    put<std::uint32_t>(out, dataset_version);
    put<std::uint64_t>(out, size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.m));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.s));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.k));
    put<double>(out, meta_.frequency);
    put<double>(out, meta_.snr_db);
    put<std::uint64_t>(out, meta_.seed);
    put<std::uint64_t>(out, count(Split::train));
    put<std::uint64_t>(out, count(Split::validation));
    put<std::uint64_t>(out, count(Split::test));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.in_channels));
    put<double>(out, meta_.c0);
    put<std::uint64_t>(out, meta_.array_fingerprint);
    put<double>(out, meta_.z0);
    put<double>(out, meta_.alpha);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.n_per_side));
    for (std::size_t i = 0; i < size(); ++i) {
        put<std::uint8_t>(out, static_cast<std::uint8_t>(splits_[i]));
        const auto idx = indices(i);
        out.write(reinterpret_cast<const char*>(idx.data()), static_cast<std::streamsize>(idx.size_bytes()));
        const auto in = input(i);
        out.write(reinterpret_cast<const char*>(in.data()), static_cast<std::streamsize>(in.size_bytes()));
        const auto lb = label(i);
        out.write(reinterpret_cast<const char*>(lb.data()), static_cast<std::streamsize>(lb.size_bytes()));
    }
    if (!out) fail(ErrorCode::io, "failed writing dataset file " + path.string());
}

Dataset Dataset::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::file_not_found, "cannot open dataset file " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, dataset_magic, 4) != 0)
        fail(ErrorCode::format, path.string() + " is not a dataset file");
    if (const auto v = get<std::uint32_t>(in); v != dataset_version)
        fail(ErrorCode::format, "unsupported dataset version " + std::to_string(v));
    DatasetMeta meta;
    const auto total = get<std::uint64_t>(in);
    meta.m = get<std::uint32_t>(in);
    meta.s = get<std::uint32_t>(in);
    meta.k = get<std::uint32_t>(in);
    meta.frequency = get<double>(in);
    meta.snr_db = get<double>(in);
    meta.seed = get<std::uint64_t>(in);
    std::uint64_t counts[3];
    for (auto& c : counts) c = get<std::uint64_t>(in);
    meta.in_channels = get<std::uint32_t>(in);
    meta.c0 = get<double>(in);
    meta.array_fingerprint = get<std::uint64_t>(in);
    meta.z0 = get<double>(in);
    meta.alpha = get<double>(in);
    meta.n_per_side = get<std::uint32_t>(in);
    if (counts[0] + counts[1] + counts[2] != total) fail(ErrorCode::format, "dataset split counts do not add up");

    Dataset ds(meta);
    const std::size_t len = ds.input_length();
    ds.splits_.reserve(total);
    ds.indices_.resize(total * meta.k);
    ds.inputs_.resize(total * len);
    ds.labels_.resize(total * meta.s);
    // Records may come in any split order; place them grouped by split.
    std::size_t cursor[3] = {0, counts[0], counts[0] + counts[1]};
    std::vector<Split> splits(total);
    for (std::uint64_t r = 0; r < total; ++r) {
        const auto tag = get<std::uint8_t>(in);
        if (tag > 2) fail(ErrorCode::format, "bad split tag " + std::to_string(tag));
        const std::size_t i = cursor[tag]++;
        if (i >= (tag == 0 ? counts[0] : tag == 1 ? counts[0] + counts[1] : total))
            fail(ErrorCode::format, "dataset records disagree with the split counts");
        splits[i] = static_cast<Split>(tag);
        auto read = [&](void* dst, std::size_t bytes) {
            if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes)))
                fail(ErrorCode::format, "dataset file truncated at record " + std::to_string(r));
        };
        read(ds.indices_.data() + i * meta.k, meta.k * sizeof(std::uint32_t));
        read(ds.inputs_.data() + i * len, len * sizeof(float));
        read(ds.labels_.data() + i * meta.s, meta.s * sizeof(float));
    }
    if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::format, "trailing bytes after dataset records");
    ds.splits_ = std::move(splits);
    return ds;
}

// ---------------------------------------------------------------------------
// Generation

std::vector<float> csm_to_input(const SpectralMatrix& csm)
{
    const std::size_t m = csm.m();
    std::vector<float> out(m * m * 2);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const auto c = csm.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            out[(i * m + j) * 2] = static_cast<float>(input_scale * c.real());
            out[(i * m + j) * 2 + 1] = static_cast<float>(input_scale * c.imag());
        }
    return out;
}

SpectralMatrix scenario_csm(const MicArray& array, const ScanGrid& grid, const Scenario& scenario,
                            const DatasetConfig& config, std::mt19937_64* snapshot_rng)
{
    const auto sources = scenario.distribution(grid.size());
    if (!config.stochastic_noise) {
        SpectralMatrix csm = synthesize_csm(array, grid, sources, config.frequency, config.c0);
        return add_noise(csm, config.snr_db);
    }
    require(snapshot_rng != nullptr, "stochastic noise needs a random stream");
    constexpr double sample_rate = 51200.0;
    constexpr std::size_t frame_len = 1024;
    const Signals signals = simulate_snapshots(array, grid, sources, config.frequency, config.c0, config.snr_db,
                                               sample_rate, frame_len, config.snapshot_frames, *snapshot_rng);
    return csm_from_snapshots(signals, sample_rate, frame_len, config.snapshot_frames, Window::rectangular,
                              config.frequency);
}

Dataset make_dataset(const MicArray& array, const ScanGrid& grid, const DatasetConfig& config)
{
    require(config.count >= 10, "dataset needs at least 10 samples");
    require(config.frequency > 0.0, "dataset frequency must be positive");
    const std::size_t n = config.count;
    const std::size_t s = grid.size();

    std::vector<Scenario> scenarios(n);
    std::vector<std::mt19937_64> streams;
    streams.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        streams.push_back(derived_stream(config.seed, i));
        scenarios[i] = sample_scenario(grid, config.k, streams[i], config.frequency);
    }

    // Whole groups of identical index sets go to one split, test first.
    const std::size_t n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    const std::size_t n_val = n_test;
    std::map<std::vector<std::size_t>, std::vector<std::size_t>> groups;
    std::vector<std::vector<std::size_t>> group_order;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, inserted] = groups.try_emplace(scenarios[i].key());
        if (inserted) group_order.push_back(it->first);
        it->second.push_back(i);
    }
    std::vector<Split> split_of(n, Split::train);
    std::size_t filled_test = 0, filled_val = 0;
    for (const auto& key : group_order) {
        const auto& members = groups[key];
        Split target = Split::train;
        if (filled_test + members.size() <= n_test) {
            target = Split::test;
            filled_test += members.size();
        } else if (filled_val + members.size() <= n_val) {
            target = Split::validation;
            filled_val += members.size();
        }
        for (auto i : members) split_of[i] = target;
    }

    DatasetMeta meta;
    meta.m = array.size();
    meta.s = s;
    meta.k = config.k;
    meta.frequency = config.frequency;
    meta.c0 = config.c0;
    meta.snr_db = config.snr_db;
    meta.seed = config.seed;
    meta.array_fingerprint = array.fingerprint();
    meta.z0 = grid.z0();
    meta.alpha = grid.alpha();
    meta.n_per_side = grid.n_per_side();
    Dataset ds(meta);

    std::vector<std::vector<float>> inputs(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const auto u = static_cast<std::size_t>(i);
        inputs[u] = csm_to_input(scenario_csm(array, grid, scenarios[u], config, &streams[u]));
    }

    std::vector<float> label(s);
    std::vector<std::uint32_t> idx(config.k);
    for (Split split : {Split::train, Split::validation, Split::test}) {
        for (std::size_t i = 0; i < n; ++i) {
            if (split_of[i] != split) continue;
            std::fill(label.begin(), label.end(), 0.0f);
            for (std::size_t j = 0; j < config.k; ++j) {
                idx[j] = static_cast<std::uint32_t>(scenarios[i].source_indices[j]);
                label[scenarios[i].source_indices[j]] = static_cast<float>(scenarios[i].powers[j]);
            }
            ds.append(split, idx, inputs[i], label);
            std::vector<float>().swap(inputs[i]);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::size_t> top_k(std::span<const float> values, std::size_t k)
{
    require(k <= values.size(), "k exceeds the number of outputs");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

AccuracyReport evaluate_accuracy(const Predictor& predictor, const Dataset& dataset, std::size_t k)
{
    const SampleView test = dataset.view(Split::test);
    if (test.count == 0) fail(ErrorCode::invalid_argument, "test split is empty");
    const std::size_t s = dataset.meta().s;
    std::size_t n = dataset.meta().n_per_side;
    if (n == 0) n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s))));
    require(n * n == s, "dataset output length is not a square grid");
    const auto row = [n](std::size_t i) { return i / n; };
    const auto col = [n](std::size_t i) { return i % n; };

    const auto start = std::chrono::steady_clock::now();
    const std::vector<float> outputs = predictor(test.inputs, test.count);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (outputs.size() != test.count * s) fail(ErrorCode::dimension_mismatch, "predictor returned the wrong number of outputs");

    AccuracyReport report;
    report.total = test.count;
    report.seconds_per_sample = elapsed / static_cast<double>(test.count);
    const std::size_t first = dataset.offset(Split::test);
    for (std::size_t i = 0; i < test.count; ++i) {
        PredictionRecord rec;
        rec.sample = i;
        const auto idx = dataset.indices(first + i);
        rec.truth.assign(idx.begin(), idx.end());
        std::sort(rec.truth.begin(), rec.truth.end());
        rec.predicted = top_k(std::span<const float>(outputs).subspan(i * s, s), k);
        rec.correct = rec.predicted == rec.truth;
        for (std::size_t a = 0; a < rec.truth.size(); ++a) {
            const std::size_t t = rec.truth[a];
            if (row(t) == 0 || col(t) == 0 || row(t) + 1 == n || col(t) + 1 == n) rec.boundary = true;
            for (std::size_t b = a + 1; b < rec.truth.size(); ++b) {
                const std::size_t u = rec.truth[b];
                const auto dr = static_cast<long>(row(t)) - static_cast<long>(row(u));
                const auto dc = static_cast<long>(col(t)) - static_cast<long>(col(u));
                if (std::labs(dr) <= 1 && std::labs(dc) <= 1) rec.adjacent = true;
            }
        }
        report.correct += rec.correct ? 1 : 0;
        report.records.push_back(std::move(rec));
    }
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
    return report;
}

AccuracyReport evaluate_accuracy(Network<float>& net, const Dataset& dataset, std::size_t k)
{
    if (net.spec().m != dataset.meta().m || net.spec().s != dataset.meta().s ||
        net.spec().in_channels != dataset.meta().in_channels)
        fail(ErrorCode::dimension_mismatch, "network (m=" + std::to_string(net.spec().m) + ", s=" + std::to_string(net.spec().s) +
                                                ") does not match dataset (m=" + std::to_string(dataset.meta().m) +
                                                ", s=" + std::to_string(dataset.meta().s) + ")");
    return evaluate_accuracy([&net](std::span<const float> inputs, std::size_t count) { return predict(net, inputs, count); },
                             dataset, k);
}

FailureReport edge_failure_report(std::span<const PredictionRecord> records)
{
    FailureReport r;
    r.total = records.size();
    for (const auto& rec : records) {
        if (rec.correct) continue;
        ++r.failures;
        if (rec.boundary) ++r.boundary;
        if (rec.adjacent) ++r.adjacent;
        if (rec.boundary && rec.adjacent) ++r.boundary_and_adjacent;
        if (!rec.boundary && !rec.adjacent) ++r.neither;
    }
    return r;
}

} // namespace micloc
