#include "sdkit/trainer.hpp"

#include "sdkit/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace sdkit::train {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

TensorF clamp_to_range(const TensorF& pred, float d_max) {
    TensorF out = pred;
    for (auto& v : out.data) v = std::clamp(v, 0.0f, d_max);
    return out;
}

} // namespace

TrainConfig desk_config() {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.net.base_width = 8;
    cfg.net.sffm_width = 8;
    return cfg;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 1) throw std::invalid_argument("epochs are 1-based");
    const int halvings = (epoch - 1) / cfg.lr_halving_period;
    return cfg.lr_initial * std::pow(0.5, halvings);
}

Dataset load_dataset(const std::string& root, const std::string& split) {
    Dataset ds;
    for (const auto& paths : io::list_frames(root, split)) ds.frames.push_back(io::load_frame(paths));
    if (ds.frames.empty()) throw std::runtime_error("dataset split is empty: " + root + "/" + split);
    return ds;
}

std::string epoch_csv_header() {
    return "epoch,lr,c_first,train_loss,val_iRMSE,val_iMAE,val_RMSE,val_MAE";
}

std::string epoch_csv_row(const EpochLog& log) {
    return std::to_string(log.epoch) + "," + fmt(log.lr) + "," + fmt(log.c_first) + "," +
           fmt(log.train_loss) + "," + fmt(log.val.irmse_per_km) + "," + fmt(log.val.imae_per_km) +
           "," + fmt(log.val.rmse_mm) + "," + fmt(log.val.mae_mm);
}

Adam::Adam(const std::vector<TensorF*>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (auto* p : params) {
        m_.emplace_back(p->data.size(), 0.f);
        v_.emplace_back(p->data.size(), 0.f);
    }
}

void Adam::step(const std::vector<TensorF*>& params, double lr, const TrainConfig& cfg) {
    if (params.size() != m_.size()) throw std::logic_error("adam state does not match parameters");
    for (auto* p : params) {
        if (p->grad.size() != p->data.size())
            throw std::logic_error("adam step before gradients were accumulated");
        for (float g : p->grad)
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient reached the optimizer");
    }
    ++step_;
    const float bc1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, step_)));
    const float bc2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, step_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto* p = params[i];
        kern::adam_update<float>(p->data.data(), p->grad.data(), m_[i].data(), v_[i].data(),
                                 p->data.size(), static_cast<float>(lr),
                                 static_cast<float>(cfg.beta1), static_cast<float>(cfg.beta2),
                                 static_cast<float>(cfg.adam_eps),
                                 static_cast<float>(cfg.weight_decay), bc1, bc2);
    }
}

void Adam::save(const std::string& dir, const std::vector<std::string>& names) const {
    std::vector<ckpt::NamedTensor> tensors;
    for (std::size_t i = 0; i < m_.size(); ++i) {
        tensors.push_back({names[i] + ".m", Shape{static_cast<int>(m_[i].size())}, m_[i]});
        tensors.push_back({names[i] + ".v", Shape{static_cast<int>(v_[i].size())}, v_[i]});
    }
    ckpt::write_payload(tensors, dir + "/optim.manifest", dir + "/optim.bin");
    Config meta;
    meta.set("step", std::to_string(step_));
    std::ofstream(dir + "/optim_meta.txt") << meta.serialize();
}

void Adam::load(const std::string& dir, const std::vector<std::string>& names) {
    auto tensors = ckpt::read_payload(dir + "/optim.manifest", dir + "/optim.bin");
    if (tensors.size() != 2 * names.size())
        throw std::runtime_error("optimizer checkpoint does not match the parameter list");
    m_.assign(names.size(), {});
    v_.assign(names.size(), {});
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (tensors[2 * i].name != names[i] + ".m" || tensors[2 * i + 1].name != names[i] + ".v")
            throw std::runtime_error("optimizer checkpoint entry mismatch at " + names[i]);
        m_[i] = tensors[2 * i].data;
        v_[i] = tensors[2 * i + 1].data;
    }
    step_ = Config::from_file(dir + "/optim_meta.txt").require_int("step");
}

Trainer::Trainer(NetworkF& net, const TrainConfig& cfg) : net_(net), cfg_(cfg) {
    net_.visit_params([this](const std::string& name, TensorF& t) {
        names_.push_back(name);
        params_.push_back(&t);
    });
    adam_ = Adam(params_);
}

EpochLog Trainer::run_epoch(const Dataset& train_set, const Dataset& val_set, int epoch) {
    const double lr = lr_at(epoch, cfg_);
    const float c_first = cfg_.loss_schedule.c_first(epoch);

    std::vector<std::size_t> order(train_set.frames.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::derive(cfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

    const int n_threads = cfg_.deterministic ? 1 : std::max(1, cfg_.threads);
    double loss_sum = 0;
    std::size_t seen = 0;

    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t batch_end =
            std::min(order.size(), batch_start + static_cast<std::size_t>(cfg_.batch_size));
        const std::size_t n_items = batch_end - batch_start;

        for (auto* p : params_) p->zero_grad();

        std::vector<double> item_loss(n_items, 0.0);
        // waves of `n_threads` items; gradients reduced in item order below
        for (std::size_t wave = 0; wave < n_items; wave += n_threads) {
            const std::size_t wave_end = std::min(n_items, wave + n_threads);
            std::vector<std::unique_ptr<Tape<float>>> tapes(wave_end - wave);
            std::vector<typename Tape<float>::Var> losses(wave_end - wave);
            std::vector<std::exception_ptr> errors(wave_end - wave);

            auto run_item = [&](std::size_t slot, std::size_t item) {
                try {
                    const std::size_t frame_idx = order[batch_start + item];
                    Rng aug_rng = Rng::derive(cfg_.seed, "augment",
                                              static_cast<std::uint64_t>(epoch), frame_idx);
                    io::Frame f =
                        synth::augment(train_set.frames[frame_idx], cfg_.augment, aug_rng);
                    auto& tape = tapes[slot];
                    tape = std::make_unique<Tape<float>>();
                    auto vars = net_.forward(*tape, f.color, f.sparse);
                    auto loss = total_loss_on_tape(*tape, vars.d_c, vars.d_final, f.gt, epoch,
                                                   cfg_.loss_schedule);
                    losses[slot] = loss;
                    tape->backward(loss, std::vector<float>{1.0f}, false);
                } catch (...) {
                    errors[slot] = std::current_exception();
                }
            };

            if (wave_end - wave == 1) {
                run_item(0, wave);
            } else {
                std::vector<std::thread> workers;
                for (std::size_t s = 0; s < wave_end - wave; ++s)
                    workers.emplace_back(run_item, s, wave + s);
                for (auto& t : workers) t.join();
            }
            for (const auto& err : errors)
                if (err) std::rethrow_exception(err);

            for (std::size_t s = 0; s < wave_end - wave; ++s) {
                item_loss[wave + s] = tapes[s]->value(losses[s])[0];
                for (const auto& bg : tapes[s]->bound_grads()) {
                    if (bg.tensor->grad.size() != bg.tensor->data.size()) bg.tensor->alloc_grad();
                    kern::axpy<float>(1.0f, bg.grad->data(), bg.grad->size(),
                                      bg.tensor->grad.data());
                }
            }
        }

        for (double l : item_loss) {
            if (!std::isfinite(l)) throw std::runtime_error("training loss diverged (non-finite)");
            loss_sum += l;
        }
        seen += n_items;

        // mean over the batch
        const float inv = 1.0f / static_cast<float>(n_items);
        for (auto* p : params_)
            for (auto& g : p->grad) g *= inv;

        if (cfg_.grad_clip) {
            double sq = 0;
            for (auto* p : params_)
                for (float g : p->grad) sq += static_cast<double>(g) * g;
            const double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) {
                const float scale = static_cast<float>(cfg_.clip_norm / norm);
                for (auto* p : params_)
                    for (auto& g : p->grad) g *= scale;
            }
        }
        adam_.step(params_, lr, cfg_);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.c_first = c_first;
    log.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    last_loss_ = log.train_loss;
    log.val = validate(val_set);
    return log;
}

MetricReport Trainer::validate(const Dataset& val_set) {
    std::vector<MetricReport> reports;
    reports.reserve(val_set.frames.size());
    for (const auto& f : val_set.frames) {
        auto out = net_.run(f.color, f.sparse);
        reports.push_back(evaluate(clamp_to_range(out.d_final, net_.config().d_max), f.gt));
    }
    return aggregate(reports);
}

void Trainer::save_state(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    adam_.save(dir, names_);
}

void Trainer::load_state(const std::string& dir) { adam_.load(dir, names_); }

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    NetworkF net(cfg.variant, cfg.net, cfg.seed);
    Trainer trainer(net, cfg);

    TrainResult result;
    result.param_count = net.param_count();
    result.best_rmse = std::numeric_limits<double>::infinity();
    result.best_checkpoint_dir = out_dir + "/best";

    std::ofstream log_csv(out_dir + "/train_log.csv");
    log_csv << epoch_csv_header() << "\n";
    log_csv.flush();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochLog log;
        try {
            log = trainer.run_epoch(train_set, val_set, epoch);
        } catch (const std::runtime_error& e) {
            log::error(std::string("training aborted at epoch ") + std::to_string(epoch) + ": " +
                       e.what());
            result.diverged = true;
            break;
        }
        result.history.push_back(log);
        log_csv << epoch_csv_row(log) << "\n";
        log_csv.flush();
        if (log.val.rmse_mm < result.best_rmse) {
            result.best_rmse = log.val.rmse_mm;
            result.best_epoch = epoch;
            Config meta;
            meta.set("epoch", std::to_string(epoch));
            meta.set("val_rmse_mm", fmt(log.val.rmse_mm));
            meta.set("seed", std::to_string(cfg.seed));
            ckpt::save_network(net, result.best_checkpoint_dir, meta);
        }
    }

    if (!result.diverged) {
        Config meta;
        meta.set("epoch", std::to_string(cfg.epochs));
        meta.set("seed", std::to_string(cfg.seed));
        ckpt::save_network(net, out_dir + "/last", meta);
        trainer.save_state(out_dir + "/last");
    }
    return result;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant," + MetricReport::csv_header() + ",params,status\n";
    for (const auto& r : rows) {
        out += r.tag + "," + (r.diverged ? ",,," : r.val.csv_row() + ",") +
               std::to_string(r.params) + "," + (r.diverged ? "diverged" : "ok") + "\n";
    }
    return out;
}

std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& val_set,
                                      const TrainConfig& base, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    for (Variant v : {Variant::B, Variant::CRDR, Variant::CRDR_SFFM, Variant::Full}) {
        TrainConfig cfg = base;
        cfg.variant = v;
        AblationRow row;
        row.tag = variant_tag(v);
        const std::string dir = out_dir + "/" + (v == Variant::B          ? "B"
                                                 : v == Variant::CRDR     ? "CRDR"
                                                 : v == Variant::CRDR_SFFM ? "CRDR_SFFM"
                                                                           : "FULL");
        TrainResult res = train(train_set, val_set, cfg, dir);
        row.params = res.param_count;
        row.diverged = res.diverged;
        if (!res.history.empty() && !res.diverged) {
            // metrics at the best-RMSE epoch
            const auto best = std::min_element(
                res.history.begin(), res.history.end(),
                [](const EpochLog& a, const EpochLog& b) { return a.val.rmse_mm < b.val.rmse_mm; });
            row.val = best->val;
        } else {
            row.diverged = true;
        }
        rows.push_back(row);
        log::info("ablation " + row.tag + ": RMSE " + fmt(row.val.rmse_mm) + " mm, " +
                  std::to_string(row.params) + " params" + (row.diverged ? " (diverged)" : ""));
    }
    std::ofstream(out_dir + "/ablation.csv") << ablation_csv(rows);
    return rows;
}

} // namespace sdkit::train
