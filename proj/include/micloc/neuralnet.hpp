#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "micloc/tensor.hpp"

namespace micloc {

// Layers operate on batched HWC tensors of shape [B, H, W, C] (or [B, F]
// after flattening). Each layer caches what its backward pass needs during
// forward; backward overwrites the parameter gradients.

// 3x3 convolution (cross-correlation), stride 1, zero "same" padding, bias,
// optional fused ReLU. Kernel layout [3, 3, Cin, Cout].
template <typename T>
class Conv2D {
public:
    Conv2D(std::size_t in_channels, std::size_t out_channels, bool relu = true);

    Tensor<T> forward(const Tensor<T>& input);
    Tensor<T> backward(const Tensor<T>& grad_output);

    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }
    bool relu() const noexcept { return relu_; }

    Tensor<T> kernel, bias;
    Tensor<T> kernel_grad, bias_grad;

    // Pre-activation output of the last forward pass.
    const Tensor<T>& preactivation() const noexcept { return pre_; }

private:
    std::size_t in_, out_;
    bool relu_;
    Shape input_shape_;
    std::vector<T> patches_;
    Tensor<T> pre_;
};

// 2x2 max pooling, stride 2, odd trailing rows/columns dropped. Backward
// routes the gradient to the first maximum in row-major window order.
template <typename T>
class MaxPool2D {
public:
    Tensor<T> forward(const Tensor<T>& input);
    Tensor<T> backward(const Tensor<T>& grad_output);

private:
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

template <typename T>
class Flatten {
public:
    Tensor<T> forward(const Tensor<T>& input);
    Tensor<T> backward(const Tensor<T>& grad_output);

private:
    Shape input_shape_;
};

// y = W x + b without activation. Weight layout [out, in].
template <typename T>
class Dense {
public:
    Dense(std::size_t in_features, std::size_t out_features);

    Tensor<T> forward(const Tensor<T>& input);
    Tensor<T> backward(const Tensor<T>& grad_output);

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }

    Tensor<T> weight, bias;
    Tensor<T> weight_grad, bias_grad;

private:
    std::size_t in_, out_;
    Tensor<T> input_;
};

template <typename T>
using Layer = std::variant<Conv2D<T>, MaxPool2D<T>, Flatten<T>, Dense<T>>;

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> parameters; // same order as Network::parameters()
    Tensor<T> input;
};

struct NetworkSpec {
    std::size_t m = 0;           // input is m x m
    std::size_t s = 0;           // output length
    std::size_t in_channels = 2; // real / imaginary CSM parts
};

// Conv(64) Conv(64) Pool Conv(128) Conv(128) Pool Flatten Dense(s).
template <typename T>
class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::vector<Layer<T>>& layers() noexcept { return layers_; }
    const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

    std::vector<Tensor<T>*> parameters();
    std::vector<const Tensor<T>*> parameters() const;
    std::size_t parameter_count() const;

    // Accepts a single [M, M, C] sample (returns [S]) or a batch
    // [B, M, M, C] (returns [B, S]).
    Tensor<T> forward(const Tensor<T>& input);

    // Gradients of <forward(input), grad_output> with respect to every
    // parameter and the input. Requires that the last forward pass ran on
    // exactly this input.
    Gradients<T> backward(const Tensor<T>& input, const Tensor<T>& grad_output);

    // Output shapes after each layer for a single sample.
    std::vector<Shape> layer_output_shapes() const;

    template <typename U>
    Network<U> cast() const;

private:
    NetworkSpec spec_;
    std::vector<Layer<T>> layers_;
    Tensor<T> last_input_;
    bool has_forward_ = false;
};

// Table topology with Glorot-uniform kernels (seeded) and zero biases.
template <typename T = float>
Network<T> build_network(std::size_t m, std::size_t s, std::size_t in_channels, std::uint64_t seed);

struct AdamState {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

// Bias-corrected ADAM update, in place. Moments are kept in double.
template <typename T>
void adam_step(AdamState& state, std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads);

struct Loss {
    double value = 0.0;
    std::vector<double> gradient; // d loss / d prediction
};

// (1/S) sum (y - yhat)^2 with gradient (2/S)(yhat - y).
Loss mse_loss(std::span<const double> prediction, std::span<const double> target);

// Contiguous float32 samples: inputs are [count, M, M, C], labels [count, S].
struct SampleView {
    std::span<const float> inputs;
    std::span<const float> labels;
    std::size_t count = 0;
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    bool measure_initial_loss = true;
    std::function<void(std::size_t epoch, double train_loss, double validation_loss)> on_epoch;
};

struct EpochRecord {
    std::size_t epoch;
    double train_loss;      // mean per-sample loss over the epoch's batches
    double validation_loss; // after the epoch
};

struct TrainHistory {
    double initial_train_loss = 0.0;
    double initial_validation_loss = 0.0;
    std::vector<EpochRecord> epochs;
};

TrainHistory train(Network<float>& net, const SampleView& train_split, const SampleView& validation_split,
                   const TrainConfig& config);

// Mean per-sample loss over a split, forward only.
double evaluate_loss(Network<float>& net, const SampleView& split, std::size_t batch_size = 32);

// Forward pass over a whole split in batches; returns [count * S] outputs.
std::vector<float> predict(Network<float>& net, std::span<const float> inputs, std::size_t count,
                           std::size_t batch_size = 32);

void save_weights(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_weights(const std::filesystem::path& path);

} // namespace micloc
