#pragma once

#include "sdkit/checkpoint.hpp"
#include "sdkit/depth_io.hpp"
#include "sdkit/loss.hpp"
#include "sdkit/metrics.hpp"
#include "sdkit/network.hpp"
#include "sdkit/synth.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sdkit::train {

struct TrainConfig {
    // optimization recipe; defaults follow the published setup
    int batch_size = 8;
    int epochs = 25;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    double weight_decay = 1e-6; // decoupled
    double lr_initial = 0.001;
    int lr_halving_period = 5; // epochs per halving
    LossScheduleF loss_schedule{};
    synth::AugmentConfig augment{};
    std::uint64_t seed = 1;
    Variant variant = Variant::Full;
    NetConfigF net{};
    bool deterministic = false; // forces single-threaded execution
    int threads = 2;
    bool grad_clip = true;
    double clip_norm = 10.0;
};

// Desk-scale preset: small widths and batch so a full ablation fits in a
// CPU-minutes budget. Everything stays config-overridable.
TrainConfig desk_config();

double lr_at(int epoch, const TrainConfig& cfg);

struct Dataset {
    std::vector<io::Frame> frames;
};

Dataset load_dataset(const std::string& root, const std::string& split);

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double c_first = 0;
    double train_loss = 0;
    MetricReport val;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochLog& log);

// ADAM with bias correction and decoupled weight decay, state kept flat
// per parameter tensor. Saves/loads bit-exactly.
class Adam {
public:
    Adam() = default;
    explicit Adam(const std::vector<TensorF*>& params);

    // applies one update from the gradients stored on the parameters;
    // throws on non-finite gradients
    void step(const std::vector<TensorF*>& params, double lr, const TrainConfig& cfg);

    std::int64_t steps_taken() const { return step_; }
    void save(const std::string& dir, const std::vector<std::string>& names) const;
    void load(const std::string& dir, const std::vector<std::string>& names);

private:
    std::vector<std::vector<float>> m_, v_;
    std::int64_t step_ = 0;
};

class Trainer {
public:
    Trainer(NetworkF& net, const TrainConfig& cfg);

    EpochLog run_epoch(const Dataset& train_set, const Dataset& val_set, int epoch);
    MetricReport validate(const Dataset& val_set);
    double last_train_loss() const { return last_loss_; }

    void save_state(const std::string& dir) const; // optimizer + step counter
    void load_state(const std::string& dir);

    const std::vector<std::string>& param_names() const { return names_; }

private:
    NetworkF& net_;
    TrainConfig cfg_;
    std::vector<TensorF*> params_;
    std::vector<std::string> names_;
    Adam adam_;
    double last_loss_ = 0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    std::string best_checkpoint_dir;
    double best_rmse = 0;
    int best_epoch = 0;
    bool diverged = false;
    std::int64_t param_count = 0;
};

// Full run: trains, logs one CSV row per epoch to <out_dir>/train_log.csv,
// keeps the best-RMSE checkpoint in <out_dir>/best and the final state in
// <out_dir>/last. On divergence the last good checkpoint survives.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::string& out_dir);

struct AblationRow {
    std::string tag;
    MetricReport val;
    std::int64_t params = 0;
    bool diverged = false;
};

// Trains all four variants under the same data, seed and budget; writes
// <out_dir>/ablation.csv in the leaderboard column order.
std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& val_set,
                                      const TrainConfig& base, const std::string& out_dir);

std::string ablation_csv(const std::vector<AblationRow>& rows);

} // namespace sdkit::train
