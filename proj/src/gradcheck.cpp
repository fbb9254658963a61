#include "xseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "xseg/error.hpp"
#include "xseg/graph.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// One 2x2 block at a time: a random base plus a random permutation of
// well-separated offsets, so finite-difference steps never flip the argmax.
Tensor tie_free_pool_input(Rng& rng, int n, int c, int h, int w) {
    Tensor t({n, c, h, w});
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            for (int bh = 0; bh < h / 2; ++bh) {
                for (int bw = 0; bw < w / 2; ++bw) {
                    double offs[4] = {0.0, 0.3, 0.6, 0.9};
                    for (int i = 3; i > 0; --i)
                        std::swap(offs[i], offs[static_cast<std::size_t>(rng.uniform_int(
                                               static_cast<std::uint64_t>(i + 1)))]);
                    const double base = rng.uniform(-1.0, 0.05);
                    t.at(ni, ci, 2 * bh, 2 * bw) = base + offs[0];
                    t.at(ni, ci, 2 * bh, 2 * bw + 1) = base + offs[1];
                    t.at(ni, ci, 2 * bh + 1, 2 * bw) = base + offs[2];
                    t.at(ni, ci, 2 * bh + 1, 2 * bw + 1) = base + offs[3];
                }
            }
        }
    }
    return t;
}

Tensor off_kink(Tensor t) {
    for (double& v : t.data)
        if (std::abs(v) < 5e-3) v += v >= 0.0 ? 1e-2 : -1e-2;
    return t;
}

Tensor random_binary(Rng& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

struct CheckCase {
    std::vector<Tensor> inputs;
    // ids parallel to inputs; returns the op output (projected to scalar by
    // the harness when not already scalar)
    std::function<ValueId(Graph&, const std::vector<ValueId>&)> build;
    Tensor projection;  // empty when the op output is scalar
};

CheckCase make_case(const std::string& name, Rng& rng) {
    CheckCase c;
    if (name == "conv2d") {
        c.inputs = {random_tensor(rng, {1, 2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}),
                    random_tensor(rng, {3})};
        c.projection = random_tensor(rng, {1, 3, 6, 6});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) {
            return g.conv2d(ids[0], ids[1], ids[2]);
        };
    } else if (name == "conv_transpose2d") {
        c.inputs = {random_tensor(rng, {1, 2, 4, 4}), random_tensor(rng, {2, 3, 2, 2})};
        c.projection = random_tensor(rng, {1, 3, 8, 8});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) {
            return g.conv_transpose2d(ids[0], ids[1]);
        };
    } else if (name == "maxpool2d") {
        c.inputs = {tie_free_pool_input(rng, 1, 2, 6, 6)};
        c.projection = random_tensor(rng, {1, 2, 3, 3});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) { return g.maxpool2d(ids[0]); };
    } else if (name == "batchnorm2d") {
        c.inputs = {random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {3}, 0.5, 1.5),
                    random_tensor(rng, {3}, -0.5, 0.5)};
        c.projection = random_tensor(rng, {2, 3, 4, 4});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) {
            BatchNormState state(3);
            return g.batchnorm2d(ids[0], ids[1], ids[2], state, 0.1, 1e-5);
        };
    } else if (name == "relu") {
        c.inputs = {off_kink(random_tensor(rng, {1, 1, 4, 4}))};
        c.projection = random_tensor(rng, {1, 1, 4, 4});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) { return g.relu(ids[0]); };
    } else if (name == "sigmoid") {
        c.inputs = {random_tensor(rng, {1, 1, 4, 4}, -2.0, 2.0)};
        c.projection = random_tensor(rng, {1, 1, 4, 4});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) { return g.sigmoid(ids[0]); };
    } else if (name == "concat") {
        c.inputs = {random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 3, 3, 3})};
        c.projection = random_tensor(rng, {1, 5, 3, 3});
        c.build = [](Graph& g, const std::vector<ValueId>& ids) {
            return g.concat_channels(ids[0], ids[1]);
        };
    } else if (name == "smooth_dice_loss_paper" || name == "smooth_dice_loss_standard") {
        DiceConfig cfg;
        cfg.form = name == "smooth_dice_loss_paper" ? DiceConfig::Form::PaperEq1
                                                    : DiceConfig::Form::Standard;
        c.inputs = {random_tensor(rng, {1, 1, 4, 4}, 0.05, 0.95)};
        Tensor target = random_binary(rng, {1, 1, 4, 4});
        c.build = [cfg, target](Graph& g, const std::vector<ValueId>& ids) {
            return g.smooth_dice_loss(ids[0], target, cfg);
        };
    } else {
        throw ConfigError("unknown grad-check op '" + name + "'");
    }
    return c;
}

double evaluate_objective(const CheckCase& c, const std::vector<Tensor>& inputs) {
    Graph g;
    std::vector<ValueId> ids;
    ids.reserve(inputs.size());
    for (const Tensor& t : inputs) ids.push_back(g.input(t));
    ValueId out = c.build(g, ids);
    if (c.projection.numel() > 0) out = g.weighted_sum(out, c.projection);
    return g.value(out).data[0];
}

}  // namespace

std::vector<std::string> grad_check_op_names() {
    return {"conv2d", "conv_transpose2d", "maxpool2d",
            "batchnorm2d", "relu", "sigmoid",
            "concat", "smooth_dice_loss_paper", "smooth_dice_loss_standard"};
}

GradCheckReport grad_check(const std::string& op_name, std::uint64_t seed,
                           const GradCheckOptions& options) {
    if (options.tolerance <= 0.0) throw ConfigError("grad-check tolerance must be positive");
    Rng rng(derive_seed(seed, 0x67636b));  // per-op stream
    CheckCase c = make_case(op_name, rng);

    Graph g;
    std::vector<ValueId> ids;
    for (const Tensor& t : c.inputs) ids.push_back(g.input(t));
    ValueId out = c.build(g, ids);
    if (c.projection.numel() > 0) out = g.weighted_sum(out, c.projection);
    g.backward(out);

    const double h = options.step;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        const std::vector<double>& analytic = g.grad(ids[i]);
        for (std::size_t e = 0; e < c.inputs[i].data.size(); ++e) {
            std::vector<Tensor> probe = c.inputs;
            probe[i].data[e] += h;
            const double fp = evaluate_objective(c, probe);
            probe[i].data[e] -= 2.0 * h;
            const double fm = evaluate_objective(c, probe);
            const double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[e];
            if (options.corrupt_backward) a = a * 1.05 + 1e-3;
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }

    GradCheckReport r;
    r.op_name = op_name;
    r.max_rel_error = max_rel;
    r.tolerance = options.tolerance;
    r.pass = max_rel <= options.tolerance;
    return r;
}

std::vector<GradCheckReport> grad_check_all(std::uint64_t seed, const GradCheckOptions& options) {
    std::vector<GradCheckReport> out;
    for (const std::string& name : grad_check_op_names())
        out.push_back(grad_check(name, seed, options));
    return out;
}

}  // namespace xseg
