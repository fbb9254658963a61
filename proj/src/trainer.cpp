#include "xseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "xseg/error.hpp"
#include "xseg/graph.hpp"
#include "xseg/resize.hpp"

namespace xseg {

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    augment.validate();
    if (dice.lambda <= 0.0) throw ConfigError("dice smoothing factor must be positive");
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0,
                  std::chrono::steady_clock::time_point t1) {
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

TrainResult run_training_loop(TrainerClient& client, const TrainConfig& tcfg,
                              const OptimizerConfig& ocfg) {
    tcfg.validate();
    ocfg.validate();

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::uint8_t> best_state;
    int epochs_without_improvement = 0;
    int epochs_without_improvement_lr = 0;
    double lr = ocfg.learning_rate;
    client.set_learning_rate(lr);

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double train_loss = client.train_epoch(epoch);
        const auto t1 = std::chrono::steady_clock::now();
        const double val_loss = client.validate_epoch(epoch);
        const auto t2 = std::chrono::steady_clock::now();

        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " (train " +
                               std::to_string(train_loss) + ", val " + std::to_string(val_loss) + ")");

        result.logs.push_back(
            {epoch, train_loss, val_loss, lr, elapsed_ms(t0, t1), elapsed_ms(t1, t2)});

        if (val_loss < best_val) {
            best_val = val_loss;
            result.best_epoch = epoch;
            best_state = client.snapshot_state();
            epochs_without_improvement = 0;
            epochs_without_improvement_lr = 0;
        } else {
            ++epochs_without_improvement;
            ++epochs_without_improvement_lr;
            if (epochs_without_improvement >= tcfg.early_stop_patience) break;
            if (epochs_without_improvement_lr >= ocfg.plateau_patience) {
                lr = std::max(lr * ocfg.plateau_factor, ocfg.min_lr);
                client.set_learning_rate(lr);
                epochs_without_improvement_lr = 0;
            }
        }
    }

    result.best_val_loss = best_val;
    client.restore_state(best_state);
    return result;
}

Tensor sample_to_input(const Tensor& image, int input_size, int channels) {
    if (image.shape[0] == input_size && image.shape[1] == input_size)
        return replicate_channels(image, channels);
    return replicate_channels(resize_bilinear(image, input_size, input_size), channels);
}

Tensor mask_to_target(const Tensor& mask, int input_size) {
    Tensor resized = (mask.shape[0] == input_size && mask.shape[1] == input_size)
                         ? mask
                         : resize_nearest(mask, input_size, input_size);
    Tensor out({1, 1, input_size, input_size});
    out.data = std::move(resized.data);
    return out;
}

UNetTrainerClient::UNetTrainerClient(UNet& model, std::vector<TrainSample> train_set,
                                     std::vector<TrainSample> val_set, const TrainConfig& tcfg,
                                     const OptimizerConfig& ocfg)
    : model_(model),
      train_set_(std::move(train_set)),
      val_set_(std::move(val_set)),
      tcfg_(tcfg),
      optimizer_(model.named_parameters(), ocfg) {
    if (train_set_.empty() || val_set_.empty())
        throw ConfigError("training needs non-empty train and validation sets");
}

double UNetTrainerClient::train_epoch(int epoch) {
    const int S = model_.config().input_size;
    const int C = model_.config().in_channels;

    std::vector<std::size_t> order(train_set_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(tcfg_.seed, 0x73687566, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(tcfg_.batch_size)) {
        const std::size_t n = std::min(static_cast<std::size_t>(tcfg_.batch_size),
                                       order.size() - pos);
        Tensor batch({static_cast<int>(n), C, S, S});
        Tensor target({static_cast<int>(n), 1, S, S});
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t s = order[pos + b];
            Tensor image = train_set_[s].image;
            Tensor mask = train_set_[s].mask;
            Rng aug_rng(derive_seed(tcfg_.seed, 0x617567, static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(s)));
            augment_sample(image, mask, tcfg_.augment, aug_rng);
            const Tensor in = sample_to_input(image, S, C);
            const Tensor tg = mask_to_target(mask, S);
            std::copy(in.data.begin(), in.data.end(),
                      batch.data.begin() + static_cast<std::ptrdiff_t>(b * in.numel()));
            std::copy(tg.data.begin(), tg.data.end(),
                      target.data.begin() + static_cast<std::ptrdiff_t>(b * tg.numel()));
        }

        Graph g;
        const ValueId out = model_.forward_train(g, std::move(batch));
        const ValueId loss_id = g.smooth_dice_loss(out, std::move(target), tcfg_.dice);
        const double loss = g.value(loss_id).data[0];
        if (!std::isfinite(loss))
            throw NumericError("non-finite train loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batches) + ": " + std::to_string(loss));
        optimizer_.zero_grads();
        g.backward(loss_id);
        optimizer_.step();
        loss_sum += loss;
        ++batches;
    }
    return loss_sum / batches;
}

double UNetTrainerClient::validate_epoch(int) {
    return evaluate_loss(model_, val_set_, tcfg_.dice);
}

double evaluate_loss(const UNet& model, const std::vector<TrainSample>& samples,
                     const DiceConfig& dice) {
    if (samples.empty()) throw ConfigError("evaluate_loss needs at least one sample");
    const int S = model.config().input_size;
    const int C = model.config().in_channels;
    double sum = 0.0;
    for (const TrainSample& s : samples) {
        const Tensor pred = model.forward_eval(sample_to_input(s.image, S, C));
        sum += smooth_dice_loss(pred, mask_to_target(s.mask, S), dice);
    }
    return sum / static_cast<double>(samples.size());
}

std::vector<std::uint8_t> UNetTrainerClient::snapshot_state() const {
    auto state = const_cast<UNet&>(model_).named_state();
    std::size_t total = 0;
    for (const StateRef& ref : state) total += ref.values->size();
    std::vector<std::uint8_t> bytes(total * sizeof(double));
    std::size_t off = 0;
    for (const StateRef& ref : state) {
        std::memcpy(bytes.data() + off, ref.values->data(), ref.values->size() * sizeof(double));
        off += ref.values->size() * sizeof(double);
    }
    return bytes;
}

void UNetTrainerClient::restore_state(const std::vector<std::uint8_t>& bytes) {
    auto state = model_.named_state();
    std::size_t off = 0;
    for (const StateRef& ref : state) {
        const std::size_t n = ref.values->size() * sizeof(double);
        if (off + n > bytes.size()) throw ConfigError("snapshot too short for model state");
        std::memcpy(ref.values->data(), bytes.data() + off, n);
        off += n;
    }
    if (off != bytes.size()) throw ConfigError("snapshot size does not match model state");
}

void UNetTrainerClient::set_learning_rate(double lr) { optimizer_.set_learning_rate(lr); }

TrainResult train(UNet& model, std::vector<TrainSample> train_set, std::vector<TrainSample> val_set,
                  const TrainConfig& tcfg, const OptimizerConfig& ocfg) {
    UNetTrainerClient client(model, std::move(train_set), std::move(val_set), tcfg, ocfg);
    return run_training_loop(client, tcfg, ocfg);
}

PhaseTiming bench(const std::vector<EpochLog>& logs) {
    if (logs.empty()) throw ConfigError("bench needs at least one epoch log");
    auto mean_std = [](std::vector<double> xs) {
        MeanStd m;
        m.n = static_cast<int>(xs.size());
        double s = 0.0;
        for (double x : xs) s += x;
        m.mean = s / static_cast<double>(xs.size());
        if (xs.size() >= 2) {
            double sq = 0.0;
            for (double x : xs) sq += (x - m.mean) * (x - m.mean);
            m.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
        }
        return m;
    };
    std::vector<double> train_ms, val_ms;
    for (const EpochLog& log : logs) {
        train_ms.push_back(log.train_ms);
        val_ms.push_back(log.val_ms);
    }
    return {mean_std(train_ms), mean_std(val_ms)};
}

}  // namespace xseg
