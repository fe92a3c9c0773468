#pragma once

// AdamW, cosine learning-rate schedule and the epoch loop with early stopping.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "amc/dataset.hpp"
#include "amc/inference.hpp"
#include "amc/model.hpp"
#include "amc/ops.hpp"

namespace amc {

struct TrainConfig {
    double lr0 = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 100;
    std::size_t patience = 15;
    std::uint64_t seed = 0;
    bool augment = true;
    AugmentConfig augmentation{};

    void validate() const {
        require(lr0 >= 0, ErrorKind::parameter, "lr0 must be non-negative");
        require(weight_decay >= 0, ErrorKind::parameter, "weight_decay must be non-negative");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::parameter, "betas must be in [0, 1)");
        require(eps > 0, ErrorKind::parameter, "eps must be positive");
        require(batch_size >= 2, ErrorKind::parameter, "batch_size must be >= 2 for batch norm");
        require(max_epochs >= 1, ErrorKind::parameter, "max_epochs must be >= 1");
        require(patience >= 1, ErrorKind::parameter, "patience must be >= 1");
        require(augmentation.probability >= 0 && augmentation.probability <= 1, ErrorKind::parameter,
                "augmentation probability must be in [0, 1]");
    }
};

// lr0 * (1 + cos(pi * epoch / T_max)) / 2 with T_max = max_epochs.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
    require(epoch <= cfg.max_epochs, ErrorKind::parameter,
            "epoch " + std::to_string(epoch) + " beyond schedule length " + std::to_string(cfg.max_epochs));
    const double r = static_cast<double>(epoch) / static_cast<double>(cfg.max_epochs);
    return 0.5 * cfg.lr0 * (1.0 + std::cos(std::numbers::pi * r));
}

struct ParamRef {
    Tensor tensor;
    bool decays = true;
};

inline std::vector<ParamRef> param_refs(ModelParams& p) {
    std::vector<ParamRef> out;
    p.for_each_parameter([&](const std::string&, Tensor& t, bool decays) { out.push_back({t, decays}); });
    return out;
}

class AdamW {
   public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 1e-4)
        : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    explicit AdamW(const TrainConfig& c) : AdamW(c.beta1, c.beta2, c.eps, c.weight_decay) {}

    // Decay first (theta *= 1 - lr * wd, decaying tensors only), then the
    // bias-corrected Adam update.
    void step(const std::vector<ParamRef>& params, double lr) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.tensor.numel(), 0.0);
                v_.emplace_back(p.tensor.numel(), 0.0);
            }
        }
        require(m_.size() == params.size(), ErrorKind::state,
                "optimizer holds " + std::to_string(m_.size()) + " moment buffers, got " +
                    std::to_string(params.size()) + " parameters");
        for (std::size_t i = 0; i < params.size(); ++i) {
            require(m_[i].size() == params[i].tensor.numel(), ErrorKind::state,
                    "moment buffer " + std::to_string(i) + " does not match its parameter's shape");
            require(params[i].tensor.has_grad(), ErrorKind::state,
                    "parameter " + std::to_string(i) + " has no gradient");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = params[i].tensor;
            auto theta = t.mutable_data();
            const auto g = t.grad_view();
            auto& m = m_[i];
            auto& v = v_[i];
            const double decay = params[i].decays ? 1.0 - lr * wd_ : 1.0;
            for (std::size_t j = 0; j < theta.size(); ++j) {
                m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
                theta[j] *= decay;
                theta[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
            }
        }
    }

    std::size_t steps() const { return t_; }

   private:
    double beta1_, beta2_, eps_, wd_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double val_acc = 0;
    double lr = 0;
};

struct TrainResult {
    ModelParams best;
    ModelParams last;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1;
    double initial_loss = 0;  // loss of the very first mini-batch
};

// Contiguous mini-batches of a shuffled order; a trailing batch of one is
// folded into its predecessor since batch norm needs two samples.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch) out.push_back({s, std::min(n, s + batch)});
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

// Called after every epoch; returning false ends training there.
using EpochCallback = std::function<bool(const EpochRecord&)>;

inline TrainResult train(ModelParams params, const TrainConfig& cfg, const Inputs& train_set, const Inputs& val_set,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    require(train_set.size() >= 2, ErrorKind::data, "training split needs at least 2 frames");
    require(val_set.size() >= 1, ErrorKind::data, "validation split is empty");
    require(train_set.T == params.config.T && val_set.T == params.config.T, ErrorKind::dimension,
            "input frame length does not match model T");

    AdamW opt(cfg);
    const auto refs = param_refs(params);
    TrainResult res;
    std::size_t since_improve = 0;
    std::vector<std::size_t> order(train_set.size());
    const std::size_t row = 2 * train_set.T;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = derive_rng(cfg.seed, {0x5348, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0;
        const auto batches = batch_ranges(order.size(), cfg.batch_size);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto [lo, hi] = batches[b];
            std::span<const std::size_t> idx(order.data() + lo, hi - lo);
            Tensor x = batch_tensor(train_set, idx);
            if (cfg.augment) {
                Rng aug_rng = derive_rng(cfg.seed, {0x4155, epoch, b});
                auto xs = x.mutable_data();
                for (std::size_t i = 0; i < idx.size(); ++i)
                    augment(xs.subspan(i * row, row), aug_rng, cfg.augmentation);
            }
            std::vector<int> labels;
            for (auto i : idx) labels.push_back(train_set.labels[i]);

            Rng drop_rng = derive_rng(cfg.seed, {0x4450, epoch, b});
            params.zero_grad();
            Tensor loss = cross_entropy(forward(params, x, Mode::train, drop_rng), labels);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                fail(ErrorKind::divergence, "non-finite training loss at epoch " + std::to_string(epoch + 1) +
                                                ", batch " + std::to_string(b + 1));
            }
            if (epoch == 0 && b == 0) res.initial_loss = lv;
            backward(loss);
            opt.step(refs, lr);
            loss_sum += lv * static_cast<double>(idx.size());
        }

        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(order.size()),
                        accuracy(predict(params, val_set), val_set.labels), lr};
        res.history.push_back(rec);
        if (rec.val_acc > res.best_val_acc) {
            res.best_val_acc = rec.val_acc;
            res.best_epoch = rec.epoch;
            res.best = params.clone();
            since_improve = 0;
        } else {
            ++since_improve;
        }
        if (on_epoch && !on_epoch(rec)) break;
        if (since_improve >= cfg.patience) break;
    }
    params.zero_grad();
    res.best.zero_grad();
    res.last = params.clone();
    return res;
}

inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Inputs& train_set,
                         const Inputs& val_set, const EpochCallback& on_epoch = {}) {
    return train(init_params(model_cfg, cfg.seed), cfg, train_set, val_set, on_epoch);
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_acc,lr\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_acc, r.lr);
        out += buf;
    }
    return out;
}

}  // namespace amc
