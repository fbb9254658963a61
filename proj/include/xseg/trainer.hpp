#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "xseg/adam.hpp"
#include "xseg/augment.hpp"
#include "xseg/loss.hpp"
#include "xseg/metrics.hpp"
#include "xseg/unet.hpp"

namespace xseg {

struct TrainConfig {
    int max_epochs = 100;
    int early_stop_patience = 20;
    int batch_size = 8;
    AugmentConfig augment;
    DiceConfig dice;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double train_ms = 0.0;
    double val_ms = 0.0;
};

// The loop drives one epoch at a time through this interface so the early
// stopping / plateau / snapshot logic can be exercised with scripted stubs.
class TrainerClient {
public:
    virtual ~TrainerClient() = default;
    virtual double train_epoch(int epoch) = 0;
    virtual double validate_epoch(int epoch) = 0;
    virtual std::vector<std::uint8_t> snapshot_state() const = 0;
    virtual void restore_state(const std::vector<std::uint8_t>& bytes) = 0;
    virtual void set_learning_rate(double lr) = 0;
};

struct TrainResult {
    std::vector<EpochLog> logs;
    int best_epoch = 0;  // 1-based
    double best_val_loss = 0.0;
};

// Per epoch: train pass, validation pass, snapshot on strict validation
// improvement, reduce-on-plateau learning rate, stop after
// early_stop_patience epochs without improvement (or max_epochs). Restores
// the best snapshot before returning.
TrainResult run_training_loop(TrainerClient& client, const TrainConfig& tcfg,
                              const OptimizerConfig& ocfg);

// One image-mask pair at native resolution: rank-2 grayscale image in [0,1]
// plus a binary mask of the same size.
struct TrainSample {
    Tensor image;
    Tensor mask;
    PathologyClass label = PathologyClass::Normal;
};

// Drives a UNet: seeded shuffle per epoch, per-sample augmentation streams
// (keyed by epoch and original sample index, so batch size does not change
// the draws), minibatched forward/backward/ADAM, full eval-mode validation.
class UNetTrainerClient : public TrainerClient {
public:
    UNetTrainerClient(UNet& model, std::vector<TrainSample> train_set,
                      std::vector<TrainSample> val_set, const TrainConfig& tcfg,
                      const OptimizerConfig& ocfg);

    double train_epoch(int epoch) override;
    double validate_epoch(int epoch) override;
    std::vector<std::uint8_t> snapshot_state() const override;
    void restore_state(const std::vector<std::uint8_t>& bytes) override;
    void set_learning_rate(double lr) override;

private:
    UNet& model_;
    std::vector<TrainSample> train_set_;
    std::vector<TrainSample> val_set_;
    TrainConfig tcfg_;
    AdamOptimizer optimizer_;
};

// Convenience wrapper: train a model in place, return logs and best epoch.
TrainResult train(UNet& model, std::vector<TrainSample> train_set, std::vector<TrainSample> val_set,
                  const TrainConfig& tcfg, const OptimizerConfig& ocfg);

// Network input for one sample: augmented/native image resized bilinearly to
// the model input size and replicated across in_channels; mask resized by
// nearest neighbour.
Tensor sample_to_input(const Tensor& image, int input_size, int channels);
Tensor mask_to_target(const Tensor& mask, int input_size);

// Mean eval-mode loss of the model over a sample set (one sample at a time).
double evaluate_loss(const UNet& model, const std::vector<TrainSample>& samples,
                     const DiceConfig& dice);

// Pooled per-phase timing over epoch logs (sample std, n-1).
struct PhaseTiming {
    MeanStd train_ms;
    MeanStd val_ms;
};

PhaseTiming bench(const std::vector<EpochLog>& logs);

}  // namespace xseg
