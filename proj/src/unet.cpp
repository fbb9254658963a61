#include "xseg/unet.hpp"

#include <cmath>

#include "xseg/error.hpp"
#include "xseg/kernels.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEpsilon = 1e-5;
}  // namespace

void ModelConfig::validate() const {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("model channels must be >= 1");
    if (base_width < 1) throw ConfigError("base_width must be >= 1");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (input_size < 1) throw ConfigError("input_size must be >= 1");
    const int stride = 1 << depth;
    if (input_size % stride != 0)
        throw ConfigError("input_size " + std::to_string(input_size) +
                          " must be divisible by 2^depth = " + std::to_string(stride));
}

std::pair<int, int> bottleneck_shape(const ModelConfig& config) {
    return {config.base_width << config.depth, config.input_size >> config.depth};
}

long long trainable_parameter_count(const ModelConfig& config) {
    auto conv = [](int cin, int cout, int k) {
        return static_cast<long long>(k) * k * cin * cout + cout;
    };
    auto bn = [](int c) { return 2LL * c; };
    auto double_conv = [&](int cin, int w) {
        return conv(cin, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
    };
    long long total = 0;
    int cin = config.in_channels;
    for (int l = 0; l < config.depth; ++l) {
        const int w = config.base_width << l;
        total += double_conv(cin, w);
        cin = w;
    }
    total += double_conv(cin, config.base_width << config.depth);
    for (int l = config.depth - 1; l >= 0; --l) {
        const int w = config.base_width << l;
        total += 4LL * (2 * w) * w;  // transposed-conv kernel, no bias
        total += double_conv(2 * w, w);
    }
    total += conv(config.base_width, config.out_channels, 1);
    return total;
}

namespace {

Tensor init_kernel(Rng& rng, std::vector<int> shape, int fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

ConvLayer make_conv(Rng& rng, int cin, int cout, int k) {
    ConvLayer layer;
    layer.kernel = init_kernel(rng, {cout, cin, k, k}, cin * k * k);
    layer.bias = Tensor({cout}, 0.0);
    return layer;
}

BatchNormLayer make_bn(int c) {
    BatchNormLayer layer;
    layer.gamma = Tensor({c}, 1.0);
    layer.beta = Tensor({c}, 0.0);
    layer.state = BatchNormState(c);
    return layer;
}

DoubleConv make_double_conv(Rng& rng, int cin, int w) {
    DoubleConv dc;
    dc.conv1 = make_conv(rng, cin, w, 3);
    dc.bn1 = make_bn(w);
    dc.conv2 = make_conv(rng, w, w, 3);
    dc.bn2 = make_bn(w);
    return dc;
}

}  // namespace

UNet UNet::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    UNet model;
    model.config_ = config;
    Rng rng(derive_seed(seed, 0x756e6574));

    int cin = config.in_channels;
    for (int l = 0; l < config.depth; ++l) {
        const int w = config.base_width << l;
        model.encoder_.push_back(make_double_conv(rng, cin, w));
        cin = w;
    }
    model.bottleneck_ = make_double_conv(rng, cin, config.base_width << config.depth);
    for (int l = config.depth - 1; l >= 0; --l) {
        const int w = config.base_width << l;
        DecoderLevel level;
        level.up_kernel = init_kernel(rng, {2 * w, w, 2, 2}, 2 * w * 4);
        level.block = make_double_conv(rng, 2 * w, w);
        model.decoder_.push_back(std::move(level));
    }
    model.head_ = make_conv(rng, config.base_width, config.out_channels, 1);
    return model;
}

void UNet::check_input(const Tensor& batch) const {
    if (batch.rank() != 4)
        throw ConfigError("forward expects an N x C x H x W batch, got " +
                          shape_to_string(batch.shape));
    if (batch.shape[1] != config_.in_channels || batch.shape[2] != config_.input_size ||
        batch.shape[3] != config_.input_size) {
        throw ConfigError("forward input " + shape_to_string(batch.shape) + " does not match model (expected [N," +
                          std::to_string(config_.in_channels) + "," + std::to_string(config_.input_size) +
                          "," + std::to_string(config_.input_size) + "])");
    }
}

namespace {

ValueId double_conv_train(Graph& g, ValueId x, DoubleConv& dc) {
    ValueId c1 = g.conv2d(x, g.param(&dc.conv1.kernel), g.param(&dc.conv1.bias));
    ValueId b1 = g.batchnorm2d(c1, g.param(&dc.bn1.gamma), g.param(&dc.bn1.beta), dc.bn1.state,
                               kBnMomentum, kBnEpsilon);
    ValueId r1 = g.relu(b1);
    ValueId c2 = g.conv2d(r1, g.param(&dc.conv2.kernel), g.param(&dc.conv2.bias));
    ValueId b2 = g.batchnorm2d(c2, g.param(&dc.bn2.gamma), g.param(&dc.bn2.beta), dc.bn2.state,
                               kBnMomentum, kBnEpsilon);
    return g.relu(b2);
}

Tensor double_conv_eval(const Tensor& x, const DoubleConv& dc) {
    Tensor c1({x.shape[0], dc.conv1.kernel.shape[0], x.shape[2], x.shape[3]});
    kernels::conv2d_forward(x, dc.conv1.kernel, dc.conv1.bias, c1);
    Tensor b1 = batchnorm_eval(c1, dc.bn1.gamma, dc.bn1.beta, dc.bn1.state, kBnEpsilon);
    Tensor r1(b1.shape);
    kernels::relu_forward(b1, r1);
    Tensor c2({r1.shape[0], dc.conv2.kernel.shape[0], r1.shape[2], r1.shape[3]});
    kernels::conv2d_forward(r1, dc.conv2.kernel, dc.conv2.bias, c2);
    Tensor b2 = batchnorm_eval(c2, dc.bn2.gamma, dc.bn2.beta, dc.bn2.state, kBnEpsilon);
    Tensor r2(b2.shape);
    kernels::relu_forward(b2, r2);
    return r2;
}

}  // namespace

ValueId UNet::forward_train(Graph& g, Tensor batch) {
    check_input(batch);
    ValueId x = g.input(std::move(batch));
    std::vector<ValueId> skips;
    for (DoubleConv& level : encoder_) {
        x = double_conv_train(g, x, level);
        skips.push_back(x);
        x = g.maxpool2d(x);
    }
    x = double_conv_train(g, x, bottleneck_);
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
        DecoderLevel& level = decoder_[d];
        ValueId up = g.conv_transpose2d(x, g.param(&level.up_kernel));
        x = g.concat_channels(up, skips[skips.size() - 1 - d]);
        x = double_conv_train(g, x, level.block);
    }
    ValueId logits = g.conv2d(x, g.param(&head_.kernel), g.param(&head_.bias));
    return g.sigmoid(logits);
}

Tensor UNet::forward_eval(const Tensor& batch) const {
    check_input(batch);
    Tensor x = batch;
    std::vector<Tensor> skips;
    for (const DoubleConv& level : encoder_) {
        x = double_conv_eval(x, level);
        skips.push_back(x);
        Tensor pooled({x.shape[0], x.shape[1], x.shape[2] / 2, x.shape[3] / 2});
        std::vector<int> argmax(pooled.numel());
        kernels::maxpool2d_forward(x, pooled, argmax);
        x = std::move(pooled);
    }
    x = double_conv_eval(x, bottleneck_);
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
        const DecoderLevel& level = decoder_[d];
        Tensor up({x.shape[0], level.up_kernel.shape[1], 2 * x.shape[2], 2 * x.shape[3]});
        kernels::convt2d_forward(x, level.up_kernel, up);
        const Tensor& skip = skips[skips.size() - 1 - d];
        Tensor cat({up.shape[0], up.shape[1] + skip.shape[1], up.shape[2], up.shape[3]});
        kernels::concat_forward(up, skip, cat);
        x = double_conv_eval(cat, level.block);
    }
    Tensor logits({x.shape[0], head_.kernel.shape[0], x.shape[2], x.shape[3]});
    kernels::conv2d_forward(x, head_.kernel, head_.bias, logits);
    Tensor out(logits.shape);
    kernels::sigmoid_forward(logits, out);
    return out;
}

namespace {

void collect_params(const std::string& prefix, DoubleConv& dc, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".conv1.kernel", &dc.conv1.kernel});
    out.push_back({prefix + ".conv1.bias", &dc.conv1.bias});
    out.push_back({prefix + ".bn1.gamma", &dc.bn1.gamma});
    out.push_back({prefix + ".bn1.beta", &dc.bn1.beta});
    out.push_back({prefix + ".conv2.kernel", &dc.conv2.kernel});
    out.push_back({prefix + ".conv2.bias", &dc.conv2.bias});
    out.push_back({prefix + ".bn2.gamma", &dc.bn2.gamma});
    out.push_back({prefix + ".bn2.beta", &dc.bn2.beta});
}

void collect_state(const std::string& prefix, DoubleConv& dc, std::vector<StateRef>& out) {
    auto tref = [&](const std::string& name, Tensor& t) { out.push_back({name, t.shape, &t.data}); };
    auto bnref = [&](const std::string& name, BatchNormLayer& bn) {
        const int c = bn.gamma.shape[0];
        tref(name + ".gamma", bn.gamma);
        tref(name + ".beta", bn.beta);
        out.push_back({name + ".running_mean", {c}, &bn.state.running_mean});
        out.push_back({name + ".running_var", {c}, &bn.state.running_var});
    };
    tref(prefix + ".conv1.kernel", dc.conv1.kernel);
    tref(prefix + ".conv1.bias", dc.conv1.bias);
    bnref(prefix + ".bn1", dc.bn1);
    tref(prefix + ".conv2.kernel", dc.conv2.kernel);
    tref(prefix + ".conv2.bias", dc.conv2.bias);
    bnref(prefix + ".bn2", dc.bn2);
}

}  // namespace

std::vector<ParamRef> UNet::named_parameters() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < encoder_.size(); ++l)
        collect_params("enc" + std::to_string(l + 1), encoder_[l], out);
    collect_params("bottleneck", bottleneck_, out);
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
        const std::string prefix = "dec" + std::to_string(decoder_.size() - d);
        out.push_back({prefix + ".up.kernel", &decoder_[d].up_kernel});
        collect_params(prefix, decoder_[d].block, out);
    }
    out.push_back({"head.kernel", &head_.kernel});
    out.push_back({"head.bias", &head_.bias});
    return out;
}

std::vector<StateRef> UNet::named_state() {
    std::vector<StateRef> out;
    for (std::size_t l = 0; l < encoder_.size(); ++l)
        collect_state("enc" + std::to_string(l + 1), encoder_[l], out);
    collect_state("bottleneck", bottleneck_, out);
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
        const std::string prefix = "dec" + std::to_string(decoder_.size() - d);
        out.push_back({prefix + ".up.kernel", decoder_[d].up_kernel.shape, &decoder_[d].up_kernel.data});
        collect_state(prefix, decoder_[d].block, out);
    }
    out.push_back({"head.kernel", head_.kernel.shape, &head_.kernel.data});
    out.push_back({"head.bias", head_.bias.shape, &head_.bias.data});
    return out;
}

void UNet::mark_batchnorm_initialized() {
    auto mark = [](DoubleConv& dc) {
        dc.bn1.state.initialized = true;
        dc.bn2.state.initialized = true;
    };
    for (DoubleConv& level : encoder_) mark(level);
    mark(bottleneck_);
    for (DecoderLevel& level : decoder_) mark(level.block);
}

}  // namespace xseg
