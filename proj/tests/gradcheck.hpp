#pragma once

// Central finite-difference checks of the analytic layer and network
// gradients, in double precision. Each check differentiates the scalar
// L = <forward(x), w> for a random w, so every output contributes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "micloc/neuralnet.hpp"

namespace gradcheck {

struct Result {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t redraws = 0;
    std::string worst; // label of the worst entry
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from turning rounding noise into huge ratios.
inline double rel_error(double analytic, double numeric, double floor = 1e-6)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline void record(Result& r, double analytic, double numeric, const std::string& label)
{
    const double e = rel_error(analytic, numeric);
    if (++r.checked == 1 || e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = label;
    }
}

inline micloc::Tensor<double> random_tensor(micloc::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                            double hi = 1.0)
{
    micloc::Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values) v = u(rng);
    return t;
}

inline double dot(const micloc::Tensor<double>& a, const micloc::Tensor<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

// Distance of the closest preactivation to the ReLU kink.
inline double relu_margin(const micloc::Tensor<double>& pre)
{
    double m = INFINITY;
    for (double v : pre.values) m = std::min(m, std::abs(v));
    return m;
}

// Smallest gap between the largest and second largest positive entry of any
// 2x2 pooling window of relu(z).
inline double pool_margin(const micloc::Tensor<double>& x)
{
    const std::size_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    double m = INFINITY;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t y = 0; y + 1 < h; y += 2)
            for (std::size_t xx = 0; xx + 1 < w; xx += 2)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double v[4];
                    for (std::size_t k = 0; k < 4; ++k)
                        v[k] = std::max(0.0, x.values[((n * h + y + k / 2) * w + xx + k % 2) * c + ch]);
                    std::sort(v, v + 4);
                    if (v[2] > 0.0) m = std::min(m, v[3] - v[2]);
                }
    return m;
}

// Exhaustive check of a single layer: every parameter and input entry.
template <typename LayerT>
Result check_layer(LayerT& layer, const micloc::Tensor<double>& input, std::mt19937_64& rng,
                   std::vector<micloc::Tensor<double>*> params, std::vector<micloc::Tensor<double>*> grads,
                   double h = 1e-6)
{
    Result r;
    const auto y = layer.forward(input);
    const auto w = random_tensor(y.shape, rng);
    const auto gin = layer.backward(w);
    std::vector<micloc::Tensor<double>> analytic;
    for (auto* g : grads) analytic.push_back(*g);

    const auto loss = [&](const micloc::Tensor<double>& x) { return dot(layer.forward(x), w); };
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& t = *params[p];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double keep = t.values[i];
            t.values[i] = keep + h;
            const double up = loss(input);
            t.values[i] = keep - h;
            const double down = loss(input);
            t.values[i] = keep;
            record(r, analytic[p].values[i], (up - down) / (2.0 * h), "param" + std::to_string(p) + "[" + std::to_string(i) + "]");
        }
    }
    auto x = input;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.values[i];
        x.values[i] = keep + h;
        const double up = loss(x);
        x.values[i] = keep - h;
        const double down = loss(x);
        x.values[i] = keep;
        record(r, gin.values[i], (up - down) / (2.0 * h), "input[" + std::to_string(i) + "]");
    }
    return r;
}

inline Result conv_layer(bool relu, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    Result total;
    for (int attempt = 0; attempt < 50; ++attempt) {
        micloc::Conv2D<double> conv(3, 4, relu);
        conv.kernel = random_tensor(conv.kernel.shape, rng, -0.5, 0.5);
        conv.bias = random_tensor(conv.bias.shape, rng, -0.2, 0.2);
        // Non-square input catches height/width mix-ups.
        const auto x = random_tensor({2, 5, 4, 3}, rng);
        conv.forward(x);
        if (relu && relu_margin(conv.preactivation()) < 1e-4) {
            ++total.redraws;
            continue;
        }
        auto r = check_layer(conv, x, rng, {&conv.kernel, &conv.bias}, {&conv.kernel_grad, &conv.bias_grad});
        r.redraws = total.redraws;
        return r;
    }
    total.max_rel_error = INFINITY;
    total.worst = "no kink-free draw";
    return total;
}

inline Result pool_layer(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    micloc::MaxPool2D<double> pool;
    // Odd height exercises the dropped trailing row.
    const auto x = random_tensor({2, 5, 6, 3}, rng);
    return check_layer(pool, x, rng, {}, {});
}

inline Result flatten_layer(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    micloc::Flatten<double> flat;
    return check_layer(flat, random_tensor({2, 3, 2, 4}, rng), rng, {}, {});
}

inline Result dense_layer(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    micloc::Dense<double> dense(7, 5);
    dense.weight = random_tensor(dense.weight.shape, rng);
    dense.bias = random_tensor(dense.bias.shape, rng);
    return check_layer(dense, random_tensor({3, 7}, rng), rng, {&dense.weight, &dense.bias},
                       {&dense.weight_grad, &dense.bias_grad});
}

// Composed network (m = 8, s = 4, batch 2). Exhaustive over the input,
// sampled over each parameter tensor (the tensors hold ~260k entries), plus
// random directional derivatives through all parameters at once. Draws
// whose activations sit too close to a ReLU kink or a pooling tie are
// rejected and redrawn, because finite differences are invalid there.
inline Result network(std::uint64_t seed, std::size_t samples_per_tensor = 48, std::size_t directions = 6,
                      double h = 1e-7)
{
    using micloc::Conv2D;
    using micloc::Tensor;
    std::mt19937_64 rng(seed);
    Result r;
    for (int attempt = 0; attempt < 50; ++attempt) {
        auto net = micloc::build_network<double>(8, 4, 2, rng());
        for (auto* p : net.parameters()) // nonzero biases so they matter
            if (p->shape.size() == 1)
                for (auto& v : p->values) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
        const auto x = random_tensor({2, 8, 8, 2}, rng);
        const auto y = net.forward(x);

        double margin = INFINITY;
        auto& layers = net.layers();
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (auto* c = std::get_if<Conv2D<double>>(&layers[l])) {
                margin = std::min(margin, relu_margin(c->preactivation()));
                if (l + 1 < layers.size() && std::holds_alternative<micloc::MaxPool2D<double>>(layers[l + 1]))
                    margin = std::min(margin, pool_margin(c->preactivation()));
            }
        if (margin < 1e-5) {
            ++r.redraws;
            continue;
        }

        const auto w = random_tensor(y.shape, rng);
        const auto grads = net.backward(x, w);
        const auto loss = [&](const Tensor<double>& in) { return dot(net.forward(in), w); };
        auto params = net.parameters();

        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& t = *params[p];
            std::vector<std::size_t> idx(t.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(std::min(idx.size(), samples_per_tensor));
            for (std::size_t i : idx) {
                const double keep = t.values[i];
                t.values[i] = keep + h;
                const double up = loss(x);
                t.values[i] = keep - h;
                const double down = loss(x);
                t.values[i] = keep;
                record(r, grads.parameters[p].values[i], (up - down) / (2.0 * h),
                       "tensor" + std::to_string(p) + "[" + std::to_string(i) + "]");
            }
        }
        auto xi = x;
        for (std::size_t i = 0; i < xi.size(); ++i) {
            const double keep = xi.values[i];
            xi.values[i] = keep + h;
            const double up = loss(xi);
            xi.values[i] = keep - h;
            const double down = loss(xi);
            xi.values[i] = keep;
            record(r, grads.input.values[i], (up - down) / (2.0 * h), "input[" + std::to_string(i) + "]");
        }
        for (std::size_t d = 0; d < directions; ++d) {
            std::vector<Tensor<double>> dir;
            double norm2 = 0.0;
            for (auto* p : params) {
                dir.push_back(random_tensor(p->shape, rng));
                norm2 += dot(dir.back(), dir.back());
            }
            const double scale = 1.0 / std::sqrt(norm2);
            double analytic = 0.0;
            for (std::size_t p = 0; p < params.size(); ++p) {
                for (auto& v : dir[p].values) v *= scale;
                analytic += dot(grads.parameters[p], dir[p]);
            }
            const auto shift = [&](double step) {
                for (std::size_t p = 0; p < params.size(); ++p)
                    for (std::size_t i = 0; i < params[p]->size(); ++i) params[p]->values[i] += step * dir[p].values[i];
            };
            shift(h);
            const double up = loss(x);
            shift(-2.0 * h);
            const double down = loss(x);
            shift(h);
            record(r, analytic, (up - down) / (2.0 * h), "direction" + std::to_string(d));
        }
        return r;
    }
    r.max_rel_error = INFINITY;
    r.worst = "no kink-free draw";
    return r;
}

} // namespace gradcheck
