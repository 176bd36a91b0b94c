#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "micloc/error.hpp"
#include "micloc/neuralnet.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace micloc;

namespace {

std::vector<std::vector<double>> raw_parameters(const Network<double>& net)
{
    std::vector<std::vector<double>> out;
    for (const auto* p : net.parameters()) out.push_back(p->values);
    return out;
}

} // namespace

TEST_CASE("full-size network has the expected layer shapes and parameter count")
{
    const auto net = build_network<float>(30, 225, 2, 1);
    CHECK(net.parameter_count() == 1671009);
    const std::vector<Shape> want{{30, 30, 64}, {30, 30, 64}, {15, 15, 64}, {15, 15, 128},
                                  {15, 15, 128}, {7, 7, 128}, {6272}, {225}};
    CHECK(net.layer_output_shapes() == want);
    const auto params = net.parameters();
    REQUIRE(params.size() == 10);
    CHECK(params[0]->shape == Shape{3, 3, 2, 64});
    CHECK(params[2]->shape == Shape{3, 3, 64, 64});
    CHECK(params[4]->shape == Shape{3, 3, 64, 128});
    CHECK(params[6]->shape == Shape{3, 3, 128, 128});
    CHECK(params[8]->shape == Shape{225, 6272});
    CHECK(params[9]->shape == Shape{225});
}

TEST_CASE("forward output shapes for single and batched inputs")
{
    auto net = build_network<float>(12, 9, 2, 3);
    CHECK(net.forward(Tensor<float>({12, 12, 2})).shape == Shape{9});
    CHECK(net.forward(Tensor<float>({5, 12, 12, 2})).shape == Shape{5, 9});
    try {
        net.forward(Tensor<float>({12, 11, 2}));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
    CHECK_THROWS_AS(build_network<float>(3, 9, 2, 0), Error);
}

TEST_CASE("glorot initialization: bounds, zero biases, variance, determinism")
{
    const auto a = build_network<double>(30, 225, 2, 42);
    const auto b = build_network<double>(30, 225, 2, 42);
    const auto c = build_network<double>(30, 225, 2, 43);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    const double fans[5][2] = {{18, 576}, {576, 576}, {576, 1152}, {1152, 1152}, {6272, 225}};
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->values == pb[i]->values);
        if (i % 2 == 1) {
            for (double v : pa[i]->values) CHECK(v == 0.0);
            continue;
        }
        CHECK(pa[i]->values != pc[i]->values);
        const double limit = std::sqrt(6.0 / (fans[i / 2][0] + fans[i / 2][1]));
        double sum2 = 0.0;
        for (double v : pa[i]->values) {
            CHECK(std::abs(v) <= limit);
            sum2 += v * v;
        }
        const double var = sum2 / static_cast<double>(pa[i]->size());
        CHECK(var == doctest::Approx(limit * limit / 3.0).epsilon(0.1));
    }
}

TEST_CASE("forward pass matches the nested-loop oracle")
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto net = build_network<double>(8, 4, 2, seed);
        std::mt19937_64 rng(seed + 100);
        for (auto* p : net.parameters())
            if (p->shape.size() == 1)
                for (auto& v : p->values) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
        const auto x = gradcheck::random_tensor({3, 8, 8, 2}, rng);
        const auto y = net.forward(x);
        const auto params = raw_parameters(net);
        for (std::size_t b = 0; b < 3; ++b) {
            const std::vector<double> sample(x.values.begin() + static_cast<long>(b * 128),
                                             x.values.begin() + static_cast<long>((b + 1) * 128));
            const auto want = oracle::cnn_forward(sample, 8, 2, params, 4);
            for (std::size_t o = 0; o < 4; ++o) CHECK(std::abs(y[b * 4 + o] - want[o]) < 1e-10);
        }
    }
    // Odd spatial size: pooling floors 9 -> 4 -> 2.
    auto odd = build_network<double>(9, 3, 2, 7);
    std::mt19937_64 rng(8);
    const auto x = gradcheck::random_tensor({9, 9, 2}, rng);
    const auto y = odd.forward(x);
    const auto want = oracle::cnn_forward(x.values, 9, 2, raw_parameters(odd), 3);
    for (std::size_t o = 0; o < 3; ++o) CHECK(std::abs(y[o] - want[o]) < 1e-10);
}

TEST_CASE("float network agrees with its double cast")
{
    auto f = build_network<float>(8, 4, 2, 5);
    auto d = f.cast<double>();
    std::mt19937_64 rng(6);
    const auto xd = gradcheck::random_tensor({2, 8, 8, 2}, rng);
    const auto yf = f.forward(xd.cast<float>());
    const auto yd = d.forward(xd);
    for (std::size_t i = 0; i < yd.size(); ++i) CHECK(std::abs(yf[i] - yd[i]) < 1e-4);
}

TEST_CASE("layer gradients match central finite differences")
{
    for (std::uint64_t seed : {1u, 2u}) {
        const auto conv = gradcheck::conv_layer(false, seed);
        const auto conv_relu = gradcheck::conv_layer(true, seed);
        const auto pool = gradcheck::pool_layer(seed);
        const auto flat = gradcheck::flatten_layer(seed);
        const auto dense = gradcheck::dense_layer(seed);
        INFO("conv worst " << conv.worst << " relu worst " << conv_relu.worst);
        CHECK(conv.max_rel_error < 1e-4);
        CHECK(conv_relu.max_rel_error < 1e-4);
        CHECK(pool.max_rel_error < 1e-4);
        CHECK(flat.max_rel_error < 1e-4);
        CHECK(dense.max_rel_error < 1e-4);
        CHECK(conv.checked == 4 * 27 + 4 + 120);
        CHECK(dense.checked == 35 + 5 + 21);
    }
}

TEST_CASE("composed network gradients match finite differences")
{
    const auto r = gradcheck::network(11, 16, 3);
    INFO("worst " << r.worst << " checked " << r.checked << " redraws " << r.redraws);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked == 9 * 16 + 4 + 256 + 3); // the last bias has only 4 entries
}

TEST_CASE("pooling routes gradient to the first maximum on ties and drops odd edges")
{
    MaxPool2D<double> pool;
    Tensor<double> x({1, 3, 2, 1}, {2.0, 2.0, 1.0, 0.0, 9.0, 9.0});
    const auto y = pool.forward(x);
    CHECK(y.shape == Shape{1, 1, 1, 1});
    CHECK(y[0] == 2.0);
    const auto g = pool.backward(Tensor<double>({1, 1, 1, 1}, {5.0}));
    CHECK(g.values == std::vector<double>{5.0, 0.0, 0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("backward requires a matching forward pass")
{
    auto net = build_network<double>(8, 4, 2, 1);
    Tensor<double> x({8, 8, 2});
    try {
        net.backward(x, Tensor<double>({4}));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::state);
    }
    net.forward(x);
    auto other = x;
    other[0] = 1.0;
    CHECK_THROWS_AS(net.backward(other, Tensor<double>({4})), Error);
    CHECK_THROWS_AS(net.backward(x, Tensor<double>({5})), Error);
    CHECK_NOTHROW(net.backward(x, Tensor<double>({4})));
}

TEST_CASE("mse loss value and gradient")
{
    const std::vector<double> p{1.0, 2.0, 0.0, -1.0}, t{0.0, 2.0, 1.0, 1.0};
    const Loss l = mse_loss(p, t);
    CHECK(l.value == doctest::Approx((1.0 + 0.0 + 1.0 + 4.0) / 4.0));
    CHECK(l.gradient == std::vector<double>{0.5, 0.0, -0.5, -1.0});
    CHECK(mse_loss(t, t).value == 0.0);
    CHECK_THROWS_AS(mse_loss(p, std::vector<double>{1.0}), Error);
}

TEST_CASE("adam step follows the bias-corrected update")
{
    std::vector<Tensor<double>> params{Tensor<double>({2}, {1.0, -2.0})};
    std::vector<Tensor<double>*> ptrs{&params[0]};
    AdamState st;
    // Independent evaluation of the recurrences.
    long double m[2] = {0, 0}, v[2] = {0, 0}, p[2] = {1.0L, -2.0L};
    const double g_seq[3][2] = {{0.5, -3.0}, {-1.0, 0.25}, {2.0, 0.0}};
    for (int t = 1; t <= 3; ++t) {
        std::vector<Tensor<double>> grads{Tensor<double>({2}, {g_seq[t - 1][0], g_seq[t - 1][1]})};
        adam_step<double>(st, ptrs, grads);
        for (int j = 0; j < 2; ++j) {
            m[j] = 0.9L * m[j] + 0.1L * g_seq[t - 1][j];
            v[j] = 0.999L * v[j] + 0.001L * g_seq[t - 1][j] * g_seq[t - 1][j];
            const long double mh = m[j] / (1.0L - std::pow(0.9L, t));
            const long double vh = v[j] / (1.0L - std::pow(0.999L, t));
            p[j] -= 0.001L * mh / (std::sqrt(vh) + 1e-8L);
            CHECK(params[0][static_cast<std::size_t>(j)] == doctest::Approx(static_cast<double>(p[j])).epsilon(1e-14));
        }
    }
    CHECK(st.t == 3);
    // First step moves every coordinate by ~lr against the gradient sign.
    std::vector<Tensor<double>> q{Tensor<double>({3}, {0.0, 0.0, 0.0})};
    std::vector<Tensor<double>*> qp{&q[0]};
    AdamState fresh;
    adam_step<double>(fresh, qp, std::vector<Tensor<double>>{Tensor<double>({3}, {4.0, -0.01, 0.0})});
    CHECK(q[0][0] == doctest::Approx(-0.001));
    CHECK(q[0][1] == doctest::Approx(0.001));
    CHECK(q[0][2] == 0.0);
}

namespace {

// Tiny regression task: the label is a fixed linear map of the input, so
// the loss can fall quickly.
struct Toy {
    std::vector<float> inputs, labels;
    std::size_t count;
};

Toy toy_data(std::size_t count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Toy t{{}, {}, count};
    for (std::size_t i = 0; i < count; ++i) {
        float s[4] = {0, 0, 0, 0};
        for (std::size_t j = 0; j < 8 * 8 * 2; ++j) {
            const float v = u(rng);
            t.inputs.push_back(v);
            s[j % 4] += v * 0.1f;
        }
        for (float v : s) t.labels.push_back(v);
    }
    return t;
}

SampleView view(const Toy& t) { return {t.inputs, t.labels, t.count}; }

} // namespace

TEST_CASE("training reduces the loss and is reproducible")
{
    const Toy train_set = toy_data(96, 1), val = toy_data(32, 2);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 9;
    std::vector<std::size_t> seen;
    cfg.on_epoch = [&](std::size_t e, double, double) { seen.push_back(e); };

    auto a = build_network<float>(8, 4, 2, 5);
    const auto ha = train(a, view(train_set), view(val), cfg);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
    REQUIRE(ha.epochs.size() == 4);
    CHECK(ha.epochs.back().train_loss < ha.epochs.front().train_loss);
    CHECK(ha.epochs.back().validation_loss < ha.initial_validation_loss);
    CHECK(evaluate_loss(a, view(val)) == doctest::Approx(ha.epochs.back().validation_loss));

    auto b = build_network<float>(8, 4, 2, 5);
    cfg.on_epoch = nullptr;
    const auto hb = train(b, view(train_set), view(val), cfg);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
        CHECK(ha.epochs[i].validation_loss == hb.epochs[i].validation_loss);
    }
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);
}

TEST_CASE("predict batches give the same outputs as one big forward pass")
{
    const Toy t = toy_data(10, 3);
    auto net = build_network<float>(8, 4, 2, 2);
    const auto batched = predict(net, t.inputs, 10, 3);
    const auto whole = net.forward(Tensor<float>({10, 8, 8, 2}, t.inputs));
    REQUIRE(batched.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) CHECK(batched[i] == doctest::Approx(whole[i]).epsilon(1e-6));
}

TEST_CASE("training rejects mismatched data")
{
    auto net = build_network<float>(8, 4, 2, 1);
    const Toy t = toy_data(8, 1);
    SampleView bad{t.inputs, std::span<const float>(t.labels).first(31), 8};
    CHECK_THROWS_AS(train(net, bad, view(t), TrainConfig{}), Error);
    TrainConfig zero;
    zero.epochs = 0;
    CHECK_THROWS_AS(train(net, view(t), view(t), zero), Error);
    for (double b1 : {-0.1, 1.0}) {
        TrainConfig c;
        c.beta1 = b1;
        CHECK(testing::code_of([&] { train(net, view(t), view(t), c); }) == ErrorCode::invalid_argument);
    }
    TrainConfig still;
    still.learning_rate = 0.0;
    CHECK(testing::code_of([&] { train(net, view(t), view(t), still); }) == ErrorCode::invalid_argument);
}

TEST_CASE("weights round-trip bit-exactly and the loader validates")
{
    testing::TempDir dir("weights");
    auto net = build_network<float>(8, 4, 2, 77);
    save_weights(net, dir / "w.bin");
    const auto back = load_weights(dir / "w.bin");
    CHECK(back.spec().m == 8);
    CHECK(back.spec().s == 4);
    const auto pa = net.parameters();
    const auto pb = back.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);

    const auto code_of = [](const std::filesystem::path& p) {
        try {
            load_weights(p);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::state;
    };
    CHECK(code_of(dir / "missing.bin") == ErrorCode::file_not_found);
    {
        std::ofstream(dir / "junk.bin") << "not a weights file";
    }
    CHECK(code_of(dir / "junk.bin") == ErrorCode::format);
    // Truncated and padded copies.
    std::ifstream in(dir / "w.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    std::ofstream(dir / "long.bin", std::ios::binary) << bytes << 'x';
    CHECK(code_of(dir / "short.bin") == ErrorCode::format);
    CHECK(code_of(dir / "long.bin") == ErrorCode::format);
}
