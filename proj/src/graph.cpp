#include "xseg/graph.hpp"

#include <cmath>

#include "xseg/error.hpp"
#include "xseg/kernels.hpp"

namespace xseg {

ValueId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

Graph::Node& Graph::node(ValueId id) { return nodes_[static_cast<std::size_t>(id)]; }
const Graph::Node& Graph::node(ValueId id) const { return nodes_[static_cast<std::size_t>(id)]; }

void Graph::check_id(ValueId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ConfigError("graph value id " + std::to_string(id) + " out of range");
}

ValueId Graph::input(Tensor value) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

ValueId Graph::param(Tensor* bound) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = *bound;
    n.bound = bound;
    return push(std::move(n));
}

ValueId Graph::conv2d(ValueId in, ValueId kernel, ValueId bias) {
    check_id(in);
    check_id(kernel);
    check_id(bias);
    const Tensor& x = node(in).value;
    const Tensor& k = node(kernel).value;
    const Tensor& b = node(bias).value;
    if (x.rank() != 4 || k.rank() != 4)
        throw ConfigError("conv2d expects 4-d input and kernel, got " + shape_to_string(x.shape) +
                          " and " + shape_to_string(k.shape));
    if (k.shape[2] != k.shape[3] || k.shape[2] % 2 == 0)
        throw ConfigError("conv2d kernel must be square with odd extent, got " +
                          shape_to_string(k.shape));
    if (k.shape[1] != x.shape[1])
        throw ConfigError("conv2d channel mismatch: input " + shape_to_string(x.shape) +
                          " vs kernel " + shape_to_string(k.shape));
    if (b.rank() != 1 || b.shape[0] != k.shape[0])
        throw ConfigError("conv2d bias shape " + shape_to_string(b.shape) +
                          " does not match kernel " + shape_to_string(k.shape));
    Node n;
    n.op = OpKind::Conv2d;
    n.inputs = {in, kernel, bias};
    n.value = Tensor({x.shape[0], k.shape[0], x.shape[2], x.shape[3]});
    kernels::conv2d_forward(x, k, b, n.value);
    return push(std::move(n));
}

ValueId Graph::conv_transpose2d(ValueId in, ValueId kernel) {
    check_id(in);
    check_id(kernel);
    const Tensor& x = node(in).value;
    const Tensor& k = node(kernel).value;
    if (x.rank() != 4 || k.rank() != 4 || k.shape[2] != 2 || k.shape[3] != 2)
        throw ConfigError("conv_transpose2d expects 4-d input and Cin x Cout x 2 x 2 kernel, got " +
                          shape_to_string(x.shape) + " and " + shape_to_string(k.shape));
    if (k.shape[0] != x.shape[1])
        throw ConfigError("conv_transpose2d channel mismatch: input " + shape_to_string(x.shape) +
                          " vs kernel " + shape_to_string(k.shape));
    Node n;
    n.op = OpKind::ConvTranspose2d;
    n.inputs = {in, kernel};
    n.value = Tensor({x.shape[0], k.shape[1], 2 * x.shape[2], 2 * x.shape[3]});
    kernels::convt2d_forward(x, k, n.value);
    return push(std::move(n));
}

ValueId Graph::maxpool2d(ValueId in) {
    check_id(in);
    const Tensor& x = node(in).value;
    if (x.rank() != 4 || x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0)
        throw ConfigError("maxpool2d needs even spatial extents, got " + shape_to_string(x.shape));
    Node n;
    n.op = OpKind::MaxPool2d;
    n.inputs = {in};
    n.value = Tensor({x.shape[0], x.shape[1], x.shape[2] / 2, x.shape[3] / 2});
    n.argmax.assign(n.value.numel(), 0);
    kernels::maxpool2d_forward(x, n.value, n.argmax);
    return push(std::move(n));
}

ValueId Graph::batchnorm2d(ValueId in, ValueId gamma, ValueId beta, BatchNormState& state,
                           double momentum, double epsilon) {
    check_id(in);
    check_id(gamma);
    check_id(beta);
    const Tensor& x = node(in).value;
    const Tensor& g = node(gamma).value;
    const Tensor& b = node(beta).value;
    if (epsilon <= 0.0) throw ConfigError("batchnorm epsilon must be positive");
    if (x.rank() != 4) throw ConfigError("batchnorm2d expects 4-d input, got " + shape_to_string(x.shape));
    const int C = x.shape[1];
    if (g.shape != std::vector<int>{C} || b.shape != std::vector<int>{C})
        throw ConfigError("batchnorm2d gamma/beta must have shape [" + std::to_string(C) + "]");
    const long long m = static_cast<long long>(x.shape[0]) * x.shape[2] * x.shape[3];
    if (m < 2)
        throw ConfigError("batchnorm2d train mode needs at least 2 values per channel, got " +
                          std::to_string(m));

    std::vector<double> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    kernels::batchnorm_stats(x, mean, var);

    Node n;
    n.op = OpKind::BatchNorm2d;
    n.inputs = {in, gamma, beta};
    n.value = Tensor(x.shape);
    n.invstd.resize(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c)
        n.invstd[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + epsilon);
    n.xhat.assign(x.numel(), 0.0);
    kernels::batchnorm_normalize(x, mean, n.invstd, g, b, n.value, &n.xhat);

    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (int c = 0; c < C; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        state.running_mean[ci] = (1.0 - momentum) * state.running_mean[ci] + momentum * mean[ci];
        state.running_var[ci] = (1.0 - momentum) * state.running_var[ci] + momentum * var[ci] * unbias;
    }
    state.initialized = true;
    return push(std::move(n));
}

ValueId Graph::relu(ValueId in) {
    check_id(in);
    Node n;
    n.op = OpKind::Relu;
    n.inputs = {in};
    n.value = Tensor(node(in).value.shape);
    kernels::relu_forward(node(in).value, n.value);
    return push(std::move(n));
}

ValueId Graph::sigmoid(ValueId in) {
    check_id(in);
    Node n;
    n.op = OpKind::Sigmoid;
    n.inputs = {in};
    n.value = Tensor(node(in).value.shape);
    kernels::sigmoid_forward(node(in).value, n.value);
    return push(std::move(n));
}

ValueId Graph::concat_channels(ValueId a, ValueId b) {
    check_id(a);
    check_id(b);
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 4 || tb.rank() != 4 || ta.shape[0] != tb.shape[0] ||
        ta.shape[2] != tb.shape[2] || ta.shape[3] != tb.shape[3])
        throw ConfigError("concat_channels spatial/batch mismatch: " + shape_to_string(ta.shape) +
                          " vs " + shape_to_string(tb.shape));
    Node n;
    n.op = OpKind::Concat;
    n.inputs = {a, b};
    n.concat_ca = ta.shape[1];
    n.value = Tensor({ta.shape[0], ta.shape[1] + tb.shape[1], ta.shape[2], ta.shape[3]});
    kernels::concat_forward(ta, tb, n.value);
    return push(std::move(n));
}

ValueId Graph::add(ValueId a, ValueId b) {
    check_id(a);
    check_id(b);
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (!ta.same_shape(tb))
        throw ConfigError("add shape mismatch: " + shape_to_string(ta.shape) + " vs " +
                          shape_to_string(tb.shape));
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] + tb.data[i];
    return push(std::move(n));
}

ValueId Graph::weighted_sum(ValueId in, Tensor weights) {
    check_id(in);
    const Tensor& x = node(in).value;
    if (!x.same_shape(weights))
        throw ConfigError("weighted_sum shape mismatch: " + shape_to_string(x.shape) + " vs " +
                          shape_to_string(weights.shape));
    double acc = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) acc += x.data[i] * weights.data[i];
    Node n;
    n.op = OpKind::WeightedSum;
    n.inputs = {in};
    n.value = Tensor::scalar(acc);
    n.aux = std::move(weights);
    return push(std::move(n));
}

ValueId Graph::smooth_dice_loss(ValueId pred, Tensor target, const DiceConfig& cfg) {
    check_id(pred);
    const Tensor& p = node(pred).value;
    const double loss = xseg::smooth_dice_loss(p, target, cfg);
    Node n;
    n.op = OpKind::SmoothDiceLoss;
    n.inputs = {pred};
    n.value = Tensor::scalar(loss);
    n.aux = std::move(target);
    n.dice = cfg;
    return push(std::move(n));
}

const Tensor& Graph::value(ValueId id) const {
    check_id(id);
    return node(id).value;
}

const std::vector<double>& Graph::grad(ValueId id) const {
    check_id(id);
    return node(id).grad;
}

void Graph::backward(ValueId output) { backward(output, Tensor::scalar(1.0)); }

void Graph::backward(ValueId output, const Tensor& seed) {
    if (nodes_.empty()) throw ConfigError("backward called before any forward op");
    check_id(output);
    Node& out = node(output);
    if (!out.value.same_shape(seed))
        throw ConfigError("backward seed shape " + shape_to_string(seed.shape) +
                          " does not match output " + shape_to_string(out.value.shape));

    for (std::size_t i = 0; i <= static_cast<std::size_t>(output); ++i) {
        nodes_[i].grad.assign(nodes_[i].value.numel(), 0.0);
        nodes_[i].touched = false;
    }
    out.grad = seed.data;
    out.touched = true;

    for (ValueId id = output; id >= 0; --id) {
        Node& n = node(id);
        if (!n.touched || n.op == OpKind::Leaf) continue;
        backward_node(n);
        for (ValueId in : n.inputs) node(in).touched = true;
    }

    // leaves bound to parameter tensors receive (possibly zero) grads
    for (std::size_t i = 0; i <= static_cast<std::size_t>(output); ++i) {
        Node& n = nodes_[i];
        if (n.op == OpKind::Leaf && n.bound) {
            n.bound->ensure_grad();
            for (std::size_t j = 0; j < n.grad.size(); ++j) n.bound->grad[j] += n.grad[j];
        }
    }
}

void Graph::backward_node(Node& n) {
    Tensor gout(n.value.shape, n.grad);
    switch (n.op) {
        case OpKind::Conv2d: {
            Node& xin = node(n.inputs[0]);
            Node& k = node(n.inputs[1]);
            Node& b = node(n.inputs[2]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            Tensor gk(k.value.shape, std::move(k.grad));
            Tensor gb(b.value.shape, std::move(b.grad));
            kernels::conv2d_backward_input(gout, k.value, gx);
            kernels::conv2d_backward_kernel(gout, xin.value, gk);
            kernels::conv2d_backward_bias(gout, gb);
            xin.grad = std::move(gx.data);
            k.grad = std::move(gk.data);
            b.grad = std::move(gb.data);
            break;
        }
        case OpKind::ConvTranspose2d: {
            Node& xin = node(n.inputs[0]);
            Node& k = node(n.inputs[1]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            Tensor gk(k.value.shape, std::move(k.grad));
            kernels::convt2d_backward_input(gout, k.value, gx);
            kernels::convt2d_backward_kernel(gout, xin.value, gk);
            xin.grad = std::move(gx.data);
            k.grad = std::move(gk.data);
            break;
        }
        case OpKind::MaxPool2d: {
            Node& xin = node(n.inputs[0]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            kernels::maxpool2d_backward(gout, n.argmax, gx);
            xin.grad = std::move(gx.data);
            break;
        }
        case OpKind::BatchNorm2d: {
            Node& xin = node(n.inputs[0]);
            Node& g = node(n.inputs[1]);
            Node& b = node(n.inputs[2]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            Tensor gg(g.value.shape, std::move(g.grad));
            Tensor gb(b.value.shape, std::move(b.grad));
            kernels::batchnorm_backward(gout, n.xhat, n.invstd, g.value, gx, gg, gb);
            xin.grad = std::move(gx.data);
            g.grad = std::move(gg.data);
            b.grad = std::move(gb.data);
            break;
        }
        case OpKind::Relu: {
            Node& xin = node(n.inputs[0]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            kernels::relu_backward(gout, xin.value, gx);
            xin.grad = std::move(gx.data);
            break;
        }
        case OpKind::Sigmoid: {
            Node& xin = node(n.inputs[0]);
            Tensor gx(xin.value.shape, std::move(xin.grad));
            kernels::sigmoid_backward(gout, n.value, gx);
            xin.grad = std::move(gx.data);
            break;
        }
        case OpKind::Concat: {
            Node& a = node(n.inputs[0]);
            Node& b = node(n.inputs[1]);
            Tensor ga(a.value.shape, std::move(a.grad));
            Tensor gb(b.value.shape, std::move(b.grad));
            kernels::concat_backward(gout, n.concat_ca, ga, gb);
            a.grad = std::move(ga.data);
            b.grad = std::move(gb.data);
            break;
        }
        case OpKind::Add: {
            for (int side = 0; side < 2; ++side) {
                Node& xin = node(n.inputs[static_cast<std::size_t>(side)]);
                for (std::size_t i = 0; i < n.grad.size(); ++i) xin.grad[i] += n.grad[i];
            }
            break;
        }
        case OpKind::WeightedSum: {
            Node& xin = node(n.inputs[0]);
            const double g = n.grad[0];
            for (std::size_t i = 0; i < xin.grad.size(); ++i) xin.grad[i] += g * n.aux.data[i];
            break;
        }
        case OpKind::SmoothDiceLoss: {
            Node& pred = node(n.inputs[0]);
            smooth_dice_loss_backward(pred.value, n.aux, n.dice, n.grad[0], pred.grad);
            break;
        }
        case OpKind::Leaf:
            break;
    }
}

Tensor batchnorm_eval(const Tensor& in, const Tensor& gamma, const Tensor& beta,
                      const BatchNormState& state, double epsilon) {
    if (!state.initialized)
        throw ConfigError("batchnorm eval mode requires initialized running statistics");
    const int C = in.shape[1];
    std::vector<double> invstd(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c)
        invstd[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(state.running_var[static_cast<std::size_t>(c)] + epsilon);
    Tensor out(in.shape);
    kernels::batchnorm_normalize(in, state.running_mean, invstd, gamma, beta, out, nullptr);
    return out;
}

}  // namespace xseg
