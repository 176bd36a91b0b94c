#include "micloc/neuralnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "micloc/random.hpp"

namespace micloc {

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
    out << ']';
    return out.str();
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void expect_shape(const Shape& got, std::size_t rank, const char* layer)
{
    if (got.size() != rank)
        fail(ErrorCode::dimension_mismatch,
             std::string(layer) + " expects a rank-" + std::to_string(rank) + " tensor, got " + shape_string(got));
}

// Sum over rows in a fixed order, so bias gradients do not depend on how
// the buffers happen to be aligned.
template <typename T>
void column_sums(const T* m, std::size_t rows, std::size_t cols, T* out)
{
    std::fill_n(out, cols, T(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

} // namespace

// ---------------------------------------------------------------------------
// Conv2D

template <typename T>
Conv2D<T>::Conv2D(std::size_t in_channels, std::size_t out_channels, bool relu)
    : kernel({3, 3, in_channels, out_channels}), bias({out_channels}), kernel_grad({3, 3, in_channels, out_channels}),
      bias_grad({out_channels}), in_(in_channels), out_(out_channels), relu_(relu)
{
    require(in_channels >= 1 && out_channels >= 1, "convolution needs at least one input and output channel");
}

template <typename T>
Tensor<T> Conv2D<T>::forward(const Tensor<T>& input)
{
    expect_shape(input.shape, 4, "Conv2D");
    if (input.shape[3] != in_)
        fail(ErrorCode::dimension_mismatch, "Conv2D expects " + std::to_string(in_) + " channels, got " +
                                                std::to_string(input.shape[3]));
    const std::size_t b = input.shape[0], h = input.shape[1], w = input.shape[2];
    const std::size_t taps = 9 * in_;
    input_shape_ = input.shape;

    // im2col: row (n, y, x) holds the 3x3 neighbourhood ordered (ky, kx, c).
    patches_.assign(b * h * w * taps, T(0));
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                T* row = patches_.data() + ((n * h + y) * w + x) * taps;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        const T* src = input.data() + ((n * h + static_cast<std::size_t>(sy)) * w +
                                                       static_cast<std::size_t>(sx)) * in_;
                        std::copy_n(src, in_, row + (ky * 3 + kx) * in_);
                    }
                }
            }
        }
    }

    const auto rows = static_cast<Eigen::Index>(b * h * w);
    pre_ = Tensor<T>({b, h, w, out_});
    ConstMatrixMap<T> p(patches_.data(), rows, static_cast<Eigen::Index>(taps));
    ConstMatrixMap<T> k(kernel.data(), static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(out_));
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), static_cast<Eigen::Index>(out_));
    MatrixMap<T> pre(pre_.data(), rows, static_cast<Eigen::Index>(out_));
    pre.noalias() = p * k;
    pre.rowwise() += bv;

    Tensor<T> out = pre_;
    if (relu_)
        for (auto& v : out.values) v = std::max(v, T(0));
    return out;
}

template <typename T>
Tensor<T> Conv2D<T>::backward(const Tensor<T>& grad_output)
{
    if (input_shape_.empty()) fail(ErrorCode::state, "Conv2D backward called before forward");
    if (grad_output.shape != pre_.shape)
        fail(ErrorCode::dimension_mismatch, "Conv2D gradient shape " + shape_string(grad_output.shape) +
                                                " does not match output " + shape_string(pre_.shape));
    const std::size_t b = input_shape_[0], h = input_shape_[1], w = input_shape_[2];
    const std::size_t taps = 9 * in_;
    const auto rows = static_cast<Eigen::Index>(b * h * w);

    Tensor<T> dpre = grad_output;
    if (relu_)
        for (std::size_t i = 0; i < dpre.size(); ++i)
            if (!(pre_[i] > T(0))) dpre[i] = T(0);

    ConstMatrixMap<T> p(patches_.data(), rows, static_cast<Eigen::Index>(taps));
    ConstMatrixMap<T> k(kernel.data(), static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(out_));
    ConstMatrixMap<T> dy(dpre.data(), rows, static_cast<Eigen::Index>(out_));
    MatrixMap<T> dk(kernel_grad.data(), static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(out_));
    dk.noalias() = p.transpose() * dy;
    column_sums(dpre.data(), static_cast<std::size_t>(rows), out_, bias_grad.data());

    RowMatrix<T> dpatches = dy * k.transpose();
    Tensor<T> grad_input(input_shape_);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const T* row = dpatches.data() + ((n * h + y) * w + x) * taps;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        T* dst = grad_input.data() + ((n * h + static_cast<std::size_t>(sy)) * w +
                                                      static_cast<std::size_t>(sx)) * in_;
                        const T* src = row + (ky * 3 + kx) * in_;
                        for (std::size_t c = 0; c < in_; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
    return grad_input;
}

// ---------------------------------------------------------------------------
// MaxPool2D

template <typename T>
Tensor<T> MaxPool2D<T>::forward(const Tensor<T>& input)
{
    expect_shape(input.shape, 4, "MaxPool2D");
    const std::size_t b = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) fail(ErrorCode::dimension_mismatch, "MaxPool2D input " + shape_string(input.shape) + " is too small");
    input_shape_ = input.shape;
    Tensor<T> out({b, oh, ow, c});
    argmax_.assign(out.size(), 0);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = ((n * h + 2 * y) * w + 2 * x) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = ((n * h + 2 * y + dy) * w + 2 * x + dx) * c + ch;
                            if (input[idx] > input[best]) best = idx;
                        }
                    const std::size_t o = ((n * oh + y) * ow + x) * c + ch;
                    out[o] = input[best];
                    argmax_[o] = best;
                }
    return out;
}

template <typename T>
Tensor<T> MaxPool2D<T>::backward(const Tensor<T>& grad_output)
{
    if (input_shape_.empty()) fail(ErrorCode::state, "MaxPool2D backward called before forward");
    if (grad_output.size() != argmax_.size())
        fail(ErrorCode::dimension_mismatch, "MaxPool2D gradient has the wrong size");
    Tensor<T> grad_input(input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) grad_input[argmax_[o]] += grad_output[o];
    return grad_input;
}

// ---------------------------------------------------------------------------
// Flatten

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& input)
{
    require(!input.shape.empty(), "Flatten needs a batched tensor");
    input_shape_ = input.shape;
    const std::size_t b = input.shape[0];
    return Tensor<T>({b, b == 0 ? 0 : input.size() / b}, input.values);
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_output)
{
    if (input_shape_.empty()) fail(ErrorCode::state, "Flatten backward called before forward");
    return Tensor<T>(input_shape_, grad_output.values);
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : weight({out_features, in_features}), bias({out_features}), weight_grad({out_features, in_features}),
      bias_grad({out_features}), in_(in_features), out_(out_features)
{
    require(in_features >= 1 && out_features >= 1, "dense layer needs nonzero dimensions");
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& input)
{
    expect_shape(input.shape, 2, "Dense");
    if (input.shape[1] != in_)
        fail(ErrorCode::dimension_mismatch, "Dense expects " + std::to_string(in_) + " features, got " +
                                                std::to_string(input.shape[1]));
    input_ = input;
    const auto b = static_cast<Eigen::Index>(input.shape[0]);
    Tensor<T> out({input.shape[0], out_});
    ConstMatrixMap<T> x(input.data(), b, static_cast<Eigen::Index>(in_));
    ConstMatrixMap<T> wm(weight.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), static_cast<Eigen::Index>(out_));
    MatrixMap<T> y(out.data(), b, static_cast<Eigen::Index>(out_));
    y.noalias() = x * wm.transpose();
    y.rowwise() += bv;
    return out;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_output)
{
    if (input_.shape.empty()) fail(ErrorCode::state, "Dense backward called before forward");
    const auto b = static_cast<Eigen::Index>(input_.shape[0]);
    if (grad_output.shape != Shape{input_.shape[0], out_})
        fail(ErrorCode::dimension_mismatch, "Dense gradient shape " + shape_string(grad_output.shape) + " is wrong");
    ConstMatrixMap<T> x(input_.data(), b, static_cast<Eigen::Index>(in_));
    ConstMatrixMap<T> wm(weight.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    ConstMatrixMap<T> dy(grad_output.data(), b, static_cast<Eigen::Index>(out_));
    MatrixMap<T> dw(weight_grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() = dy.transpose() * x;
    column_sums(grad_output.data(), static_cast<std::size_t>(b), out_, bias_grad.data());
    Tensor<T> grad_input(input_.shape);
    MatrixMap<T> dx(grad_input.data(), b, static_cast<Eigen::Index>(in_));
    dx.noalias() = dy * wm;
    return grad_input;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
Network<T>::Network(NetworkSpec spec) : spec_(spec)
{
    if (spec.m < 4) fail(ErrorCode::invalid_argument, "network input size m must be at least 4, got " + std::to_string(spec.m));
    require(spec.s >= 1, "network output size s must be positive");
    require(spec.in_channels >= 1, "network needs at least one input channel");
    const std::size_t pooled = spec.m / 2 / 2;
    layers_.emplace_back(Conv2D<T>(spec.in_channels, 64));
    layers_.emplace_back(Conv2D<T>(64, 64));
    layers_.emplace_back(MaxPool2D<T>{});
    layers_.emplace_back(Conv2D<T>(64, 128));
    layers_.emplace_back(Conv2D<T>(128, 128));
    layers_.emplace_back(MaxPool2D<T>{});
    layers_.emplace_back(Flatten<T>{});
    layers_.emplace_back(Dense<T>(pooled * pooled * 128, spec.s));
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::parameters()
{
    std::vector<Tensor<T>*> out;
    for (auto& layer : layers_) {
        if (auto* c = std::get_if<Conv2D<T>>(&layer)) {
            out.push_back(&c->kernel);
            out.push_back(&c->bias);
        } else if (auto* d = std::get_if<Dense<T>>(&layer)) {
            out.push_back(&d->weight);
            out.push_back(&d->bias);
        }
    }
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> Network<T>::parameters() const
{
    auto mut = const_cast<Network<T>*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t Network<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input)
{
    const bool single = input.shape.size() == 3;
    const Shape expected{spec_.m, spec_.m, spec_.in_channels};
    const bool batched_ok = input.shape.size() == 4 && Shape(input.shape.begin() + 1, input.shape.end()) == expected;
    if (!(single && input.shape == expected) && !batched_ok)
        fail(ErrorCode::dimension_mismatch, "network expects input " + shape_string(expected) + " (optionally batched), got " +
                                                shape_string(input.shape));

    Tensor<T> x = input;
    if (single) x.shape.insert(x.shape.begin(), 1);
    for (auto& layer : layers_) x = std::visit([&](auto& l) { return l.forward(x); }, layer);
    last_input_ = input;
    has_forward_ = true;
    if (single) x.shape.erase(x.shape.begin());
    return x;
}

template <typename T>
Gradients<T> Network<T>::backward(const Tensor<T>& input, const Tensor<T>& grad_output)
{
    if (!has_forward_ || !(input == last_input_))
        fail(ErrorCode::state, "backward requires a preceding forward pass on the same input");
    const bool single = input.shape.size() == 3;
    const std::size_t batch = single ? 1 : input.shape[0];
    const Shape expected = single ? Shape{spec_.s} : Shape{batch, spec_.s};
    if (grad_output.shape != expected)
        fail(ErrorCode::dimension_mismatch, "output gradient must have shape " + shape_string(expected) + ", got " +
                                                shape_string(grad_output.shape));

    Tensor<T> g(Shape{batch, spec_.s}, grad_output.values);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
        g = std::visit([&](auto& l) { return l.backward(g); }, *it);

    Gradients<T> grads;
    for (auto& layer : layers_) {
        if (auto* c = std::get_if<Conv2D<T>>(&layer)) {
            grads.parameters.push_back(c->kernel_grad);
            grads.parameters.push_back(c->bias_grad);
        } else if (auto* d = std::get_if<Dense<T>>(&layer)) {
            grads.parameters.push_back(d->weight_grad);
            grads.parameters.push_back(d->bias_grad);
        }
    }
    if (single) g.shape.erase(g.shape.begin());
    grads.input = std::move(g);
    return grads;
}

template <typename T>
std::vector<Shape> Network<T>::layer_output_shapes() const
{
    std::vector<Shape> shapes;
    std::size_t h = spec_.m, c = spec_.in_channels;
    for (const auto& layer : layers_) {
        if (const auto* conv = std::get_if<Conv2D<T>>(&layer)) {
            c = conv->out_channels();
            shapes.push_back({h, h, c});
        } else if (std::holds_alternative<MaxPool2D<T>>(layer)) {
            h /= 2;
            shapes.push_back({h, h, c});
        } else if (std::holds_alternative<Flatten<T>>(layer)) {
            shapes.push_back({h * h * c});
        } else {
            shapes.push_back({std::get<Dense<T>>(layer).out_features()});
        }
    }
    return shapes;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const
{
    Network<U> out(spec_);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
}

template <typename T>
Network<T> build_network(std::size_t m, std::size_t s, std::size_t in_channels, std::uint64_t seed)
{
    Network<T> net(NetworkSpec{m, s, in_channels});
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](Tensor<T>& t, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t.values) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
    };
    for (auto& layer : net.layers()) {
        if (auto* c = std::get_if<Conv2D<T>>(&layer)) {
            glorot(c->kernel, 9.0 * static_cast<double>(c->in_channels()), 9.0 * static_cast<double>(c->out_channels()));
        } else if (auto* d = std::get_if<Dense<T>>(&layer)) {
            glorot(d->weight, static_cast<double>(d->in_features()), static_cast<double>(d->out_features()));
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Optimizer and loss

template <typename T>
void adam_step(AdamState& state, std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads)
{
    if (params.size() != grads.size())
        fail(ErrorCode::dimension_mismatch, "ADAM got " + std::to_string(params.size()) + " parameter tensors and " +
                                                std::to_string(grads.size()) + " gradients");
    if (state.first_moment.empty()) {
        for (const auto* p : params) {
            state.first_moment.emplace_back(p->size(), 0.0);
            state.second_moment.emplace_back(p->size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size())
        fail(ErrorCode::dimension_mismatch, "ADAM state tracks a different number of tensors");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i]->size() != grads[i].size() || state.first_moment[i].size() != params[i]->size())
            fail(ErrorCode::dimension_mismatch, "ADAM shape mismatch at parameter tensor " + std::to_string(i));

    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->values;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = grads[i].values;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] = static_cast<T>(static_cast<double>(p[j]) - state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon));
        }
    }
}

Loss mse_loss(std::span<const double> prediction, std::span<const double> target)
{
    if (prediction.size() != target.size())
        fail(ErrorCode::invalid_argument, "prediction has " + std::to_string(prediction.size()) + " entries, target has " +
                                              std::to_string(target.size()));
    require(!prediction.empty(), "loss over an empty vector is undefined");
    const double n = static_cast<double>(prediction.size());
    Loss loss;
    loss.gradient.resize(prediction.size());
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = prediction[i] - target[i];
        loss.value += d * d;
        loss.gradient[i] = 2.0 * d / n;
    }
    loss.value /= n;
    return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::size_t input_length(const NetworkSpec& spec) { return spec.m * spec.m * spec.in_channels; }

void check_split(const NetworkSpec& spec, const SampleView& split, const char* name)
{
    if (split.count == 0) fail(ErrorCode::invalid_argument, std::string(name) + " split is empty");
    if (split.inputs.size() != split.count * input_length(spec) || split.labels.size() != split.count * spec.s)
        fail(ErrorCode::dimension_mismatch, std::string(name) + " split does not match the network input/output sizes");
}

Tensor<float> gather(std::span<const float> source, std::span<const std::size_t> rows, std::size_t row_len, Shape shape)
{
    Tensor<float> t(std::move(shape));
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(source.data() + rows[i] * row_len, row_len, t.data() + i * row_len);
    return t;
}

} // namespace

std::vector<float> predict(Network<float>& net, std::span<const float> inputs, std::size_t count, std::size_t batch_size)
{
    const auto& spec = net.spec();
    const std::size_t len = input_length(spec);
    if (inputs.size() != count * len) fail(ErrorCode::dimension_mismatch, "prediction inputs have the wrong length");
    require(batch_size >= 1, "batch size must be positive");
    std::vector<float> out(count * spec.s);
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t b = std::min(batch_size, count - start);
        Tensor<float> x({b, spec.m, spec.m, spec.in_channels},
                        std::vector<float>(inputs.begin() + static_cast<std::ptrdiff_t>(start * len),
                                           inputs.begin() + static_cast<std::ptrdiff_t>((start + b) * len)));
        const Tensor<float> y = net.forward(x);
        std::copy(y.values.begin(), y.values.end(), out.begin() + static_cast<std::ptrdiff_t>(start * spec.s));
    }
    return out;
}

double evaluate_loss(Network<float>& net, const SampleView& split, std::size_t batch_size)
{
    check_split(net.spec(), split, "evaluation");
    const std::vector<float> out = predict(net, split.inputs, split.count, batch_size);
    const std::size_t s = net.spec().s;
    double total = 0.0;
    for (std::size_t i = 0; i < split.count; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
            const double d = static_cast<double>(out[i * s + j]) - static_cast<double>(split.labels[i * s + j]);
            sum += d * d;
        }
        total += sum / static_cast<double>(s);
    }
    return total / static_cast<double>(split.count);
}

TrainHistory train(Network<float>& net, const SampleView& train_split, const SampleView& validation_split,
                   const TrainConfig& config)
{
    const auto& spec = net.spec();
    check_split(spec, train_split, "training");
    check_split(spec, validation_split, "validation");
    require(config.epochs >= 1, "training needs at least one epoch");
    require(config.batch_size >= 1, "batch size must be positive");
    require(config.learning_rate > 0.0, "learning rate must be positive");
    require(config.beta1 >= 0.0 && config.beta1 < 1.0, "beta1 must lie in [0, 1)");

    const std::size_t len = input_length(spec);
    const std::size_t s = spec.s;
    TrainHistory history;
    if (config.measure_initial_loss) {
        history.initial_train_loss = evaluate_loss(net, train_split, config.batch_size);
        history.initial_validation_loss = evaluate_loss(net, validation_split, config.batch_size);
    }

    AdamState adam;
    adam.learning_rate = config.learning_rate;
    adam.beta1 = config.beta1;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_split.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto params = net.parameters();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t b = std::min(config.batch_size, order.size() - start);
            const std::span<const std::size_t> rows(order.data() + start, b);
            const Tensor<float> x = gather(train_split.inputs, rows, len, {b, spec.m, spec.m, spec.in_channels});
            const Tensor<float> y = gather(train_split.labels, rows, s, {b, s});
            const Tensor<float> pred = net.forward(x);

            // Gradient of the batch mean of per-sample MSE.
            Tensor<float> grad({b, s});
            const double scale = 2.0 / (static_cast<double>(s) * static_cast<double>(b));
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double d = static_cast<double>(pred[i]) - static_cast<double>(y[i]);
                batch_loss += d * d;
                grad[i] = static_cast<float>(scale * d);
            }
            epoch_loss += batch_loss / static_cast<double>(s);

            const Gradients<float> grads = net.backward(x, grad);
            adam_step<float>(adam, params, grads.parameters);
        }
        EpochRecord record{epoch, epoch_loss / static_cast<double>(order.size()),
                           evaluate_loss(net, validation_split, config.batch_size)};
        history.epochs.push_back(record);
        if (config.on_epoch) config.on_epoch(epoch, record.train_loss, record.validation_loss);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Weights file

namespace {

constexpr char weights_magic[4] = {'M', 'L', 'C', 'W'};
constexpr std::uint32_t weights_version = 1;

enum class LayerTag : std::uint8_t { conv2d = 1, maxpool2d = 2, flatten = 3, dense = 4 };

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename V>
void put(std::ostream& out, V v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const char* what)
{
    V v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(V)))
        fail(ErrorCode::format, std::string("weights file truncated while reading ") + what);
    return v;
}

LayerTag tag_of(const Layer<float>& layer)
{
    return std::visit(
        [](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv2D<float>>) return LayerTag::conv2d;
            else if constexpr (std::is_same_v<L, MaxPool2D<float>>) return LayerTag::maxpool2d;
            else if constexpr (std::is_same_v<L, Flatten<float>>) return LayerTag::flatten;
            else return LayerTag::dense;
        },
        layer);
}

std::vector<Tensor<float>*> layer_tensors(Layer<float>& layer)
{
    if (auto* c = std::get_if<Conv2D<float>>(&layer)) return {&c->kernel, &c->bias};
    if (auto* d = std::get_if<Dense<float>>(&layer)) return {&d->weight, &d->bias};
    return {};
}

} // namespace

void save_weights(const Network<float>& net, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write weights file " + path.string());
    out.write(weights_magic, 4);
    put<std::uint32_t>(out, weights_version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.spec().m));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.spec().s));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.spec().in_channels));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
    auto& layers = const_cast<Network<float>&>(net).layers();
    for (auto& layer : layers) {
        put<std::uint8_t>(out, static_cast<std::uint8_t>(tag_of(layer)));
        const auto tensors = layer_tensors(layer);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
        for (const auto* t : tensors) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
            for (auto d : t->shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
        }
    }
    if (!out) fail(ErrorCode::io, "failed writing weights file " + path.string());
}

Network<float> load_weights(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::file_not_found, "cannot open weights file " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, weights_magic, 4) != 0)
        fail(ErrorCode::format, path.string() + " is not a weights file");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != weights_version)
        fail(ErrorCode::format, "unsupported weights file version " + std::to_string(version));
    NetworkSpec spec;
    spec.m = get<std::uint32_t>(in, "m");
    spec.s = get<std::uint32_t>(in, "s");
    spec.in_channels = get<std::uint32_t>(in, "in_channels");
    Network<float> net(spec);
    const auto count = get<std::uint32_t>(in, "layer count");
    if (count != net.layers().size())
        fail(ErrorCode::format, "weights file has " + std::to_string(count) + " layers, topology needs " +
                                    std::to_string(net.layers().size()));
    for (std::size_t i = 0; i < count; ++i) {
        auto& layer = net.layers()[i];
        const auto tag = get<std::uint8_t>(in, "layer tag");
        if (tag != static_cast<std::uint8_t>(tag_of(layer)))
            fail(ErrorCode::format, "layer " + std::to_string(i) + " has an unexpected type tag " + std::to_string(tag));
        const auto tensors = layer_tensors(layer);
        const auto n = get<std::uint32_t>(in, "tensor count");
        if (n != tensors.size()) fail(ErrorCode::format, "layer " + std::to_string(i) + " has the wrong tensor count");
        for (auto* t : tensors) {
            const auto rank = get<std::uint32_t>(in, "rank");
            Shape shape(rank);
            for (auto& d : shape) d = get<std::uint32_t>(in, "dimension");
            if (shape != t->shape)
                fail(ErrorCode::format, "layer " + std::to_string(i) + " tensor shape " + shape_string(shape) +
                                            " does not match expected " + shape_string(t->shape));
            if (!in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float))))
                fail(ErrorCode::format, "weights file truncated in layer " + std::to_string(i));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::format, "trailing bytes after weights payload");
    return net;
}

template class Conv2D<float>;
template class Conv2D<double>;
template class MaxPool2D<float>;
template class MaxPool2D<double>;
template class Flatten<float>;
template class Flatten<double>;
template class Dense<float>;
template class Dense<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> build_network<float>(std::size_t, std::size_t, std::size_t, std::uint64_t);
template Network<double> build_network<double>(std::size_t, std::size_t, std::size_t, std::uint64_t);
template void adam_step<float>(AdamState&, std::span<Tensor<float>* const>, std::span<const Tensor<float>>);
template void adam_step<double>(AdamState&, std::span<Tensor<double>* const>, std::span<const Tensor<double>>);

} // namespace micloc
