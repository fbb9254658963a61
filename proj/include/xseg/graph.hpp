#pragma once

#include <vector>

#include "xseg/loss.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

using ValueId = int;

enum class OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    BatchNorm2d,
    Relu,
    Sigmoid,
    Concat,
    Add,
    WeightedSum,
    SmoothDiceLoss,
};

// Per-layer batchnorm running statistics, updated by train-mode forwards and
// consumed by eval-mode normalization.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    bool initialized = false;

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0) {}
};

// Reverse-mode tape. Ops append nodes in execution order (which is therefore
// a valid topological order); backward() walks the tape once in reverse,
// accumulating gradients. Leaves registered through param() additionally get
// their gradient summed into the bound tensor's grad.
class Graph {
public:
    ValueId input(Tensor value);
    ValueId param(Tensor* bound);

    ValueId conv2d(ValueId in, ValueId kernel, ValueId bias);
    ValueId conv_transpose2d(ValueId in, ValueId kernel);
    ValueId maxpool2d(ValueId in);
    ValueId batchnorm2d(ValueId in, ValueId gamma, ValueId beta, BatchNormState& state,
                        double momentum, double epsilon);
    ValueId relu(ValueId in);
    ValueId sigmoid(ValueId in);
    ValueId concat_channels(ValueId a, ValueId b);
    ValueId add(ValueId a, ValueId b);
    ValueId weighted_sum(ValueId in, Tensor weights);  // scalar projection
    ValueId smooth_dice_loss(ValueId pred, Tensor target, const DiceConfig& cfg);

    const Tensor& value(ValueId id) const;
    const std::vector<double>& grad(ValueId id) const;

    void backward(ValueId output, const Tensor& seed);
    void backward(ValueId output);  // scalar output, seed 1.0

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        OpKind op = OpKind::Leaf;
        std::vector<ValueId> inputs;
        Tensor value;
        std::vector<double> grad;
        bool touched = false;
        Tensor* bound = nullptr;
        // op-specific saved context
        std::vector<int> argmax;
        std::vector<double> xhat;
        std::vector<double> invstd;
        Tensor aux;  // weighted_sum weights / dice target
        DiceConfig dice;
        int concat_ca = 0;
    };

    ValueId push(Node n);
    Node& node(ValueId id);
    const Node& node(ValueId id) const;
    void check_id(ValueId id) const;
    void backward_node(Node& n);

    std::vector<Node> nodes_;
};

// Eval-mode batchnorm using running statistics; rejects uninitialized state.
Tensor batchnorm_eval(const Tensor& in, const Tensor& gamma, const Tensor& beta,
                      const BatchNormState& state, double epsilon);

}  // namespace xseg
