#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xseg/graph.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

struct ModelConfig {
    int in_channels = 3;
    int out_channels = 1;
    int base_width = 32;
    int depth = 4;
    int input_size = 256;

    void validate() const;  // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

// Channel width and spatial extent of the bottleneck feature map.
std::pair<int, int> bottleneck_shape(const ModelConfig& config);

// Closed-form trainable parameter count (conv kernels + biases, batchnorm
// gamma/beta, transposed-conv kernels, head).
long long trainable_parameter_count(const ModelConfig& config);

struct ConvLayer {
    Tensor kernel;  // Cout x Cin x K x K
    Tensor bias;    // Cout
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
};

struct DoubleConv {
    ConvLayer conv1;
    BatchNormLayer bn1;
    ConvLayer conv2;
    BatchNormLayer bn2;
};

struct DecoderLevel {
    Tensor up_kernel;  // Cin x Cout x 2 x 2, stride 2
    DoubleConv block;
};

// Named reference into model state; used by the optimizer (trainable
// parameters) and the checkpoint codec (parameters + running statistics).
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

struct StateRef {
    std::string name;
    std::vector<int> shape;
    std::vector<double>* values;
};

// Encoder-decoder segmentation network with skip connections: `depth` levels
// of (conv3x3-bn-relu) x2 + maxpool, a double-conv bottleneck, then `depth`
// levels of transposed-conv upsampling + skip concatenation + double conv,
// and a 1x1 conv + sigmoid head.
class UNet {
public:
    static UNet build(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Train-mode forward on the tape: builds the graph, registers parameters
    // as leaves, updates batchnorm running statistics.
    ValueId forward_train(Graph& g, Tensor batch);

    // Eval-mode forward: running-stats batchnorm, no graph.
    Tensor forward_eval(const Tensor& batch) const;

    std::vector<ParamRef> named_parameters();
    std::vector<StateRef> named_state();  // parameters + batchnorm running stats, fixed order

    void mark_batchnorm_initialized();

private:
    UNet() = default;
    void check_input(const Tensor& batch) const;

    ModelConfig config_;
    std::vector<DoubleConv> encoder_;
    DoubleConv bottleneck_;
    std::vector<DecoderLevel> decoder_;  // decoder_[0] is the deepest level
    ConvLayer head_;
};

}  // namespace xseg
