// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/adapter/train.hpp"

#include <cmath>
#include <numeric>

#include "desta/error.hpp"

namespace desta::adapter {

int TrainConfig::total_steps(std::size_t dataset_size) const {
    if (epochs <= 0) {
        return steps;
    }
    const std::size_t batch = batch_size <= 0 ? dataset_size : static_cast<std::size_t>(batch_size);
    const std::size_t per_epoch = (dataset_size + batch - 1) / batch;
    return epochs * static_cast<int>(per_epoch);
}

nlohmann::ordered_json TrainConfig::to_json() const {
    return {{"steps", steps},           {"epochs", epochs}, {"batch_size", batch_size},
            {"warmup_steps", warmup_steps}, {"lr", lr},     {"min_lr", min_lr},
            {"beta1", beta1},           {"beta2", beta2},   {"adam_eps", adam_eps},
            {"seed", seed},             {"schedule", "linear-warmup+cosine"}};
}

double learning_rate(const TrainConfig& cfg, int step, int total_steps) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    }
    const int decay_steps = std::max(1, total_steps - cfg.warmup_steps);
    const double progress =
        std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay_steps));
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

double mean_loss(const AdapterParams& params, const ToyDecoder& decoder, const std::vector<FusionBatch>& dataset) {
    if (dataset.empty()) {
        throw Error(ErrorKind::EmptyDataset, "no samples");
    }
    double total = 0.0;
    for (const auto& b : dataset) {
        total += adapter_loss(params, decoder, b);
    }
    return total / static_cast<double>(dataset.size());
}

namespace {

void add_into(AdapterGradients& dst, AdapterGradients& src) {
    auto d = tensors(dst);
    auto s = tensors(src);
    for (std::size_t t = 0; t < d.size(); ++t) {
        for (std::size_t i = 0; i < d[t].size; ++i) {
            d[t].data[i] += s[t].data[i];
        }
    }
}

void scale(AdapterGradients& g, double factor) {
    for (auto& view : tensors(g)) {
        for (std::size_t i = 0; i < view.size; ++i) {
            view.data[i] *= factor;
        }
    }
}

std::string first_non_finite(AdapterGradients& g) {
    for (auto& view : tensors(g)) {
        for (std::size_t i = 0; i < view.size; ++i) {
            if (!std::isfinite(view.data[i])) {
                return view.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return {};
}

class Adam {
public:
    Adam(AdapterParams& params, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& view : tensors(params)) {
            m_.emplace_back(view.size, 0.0);
            v_.emplace_back(view.size, 0.0);
        }
    }

    void step(AdapterParams& params, AdapterGradients& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        auto p = tensors(params);
        auto g = tensors(grads);
        for (std::size_t k = 0; k < p.size(); ++k) {
            for (std::size_t i = 0; i < p[k].size; ++i) {
                const double gi = g[k].data[i];
                m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gi;
                v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gi * gi;
                if (lr != 0.0) {
                    p[k].data[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.adam_eps);
                }
            }
        }
    }

private:
    const TrainConfig& cfg_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

} // namespace

TrainResult train_adapter(const std::vector<FusionBatch>& dataset, const ToyDecoder& decoder, AdapterParams init,
                          const TrainConfig& cfg, const StepHook& hook) {
    if (dataset.empty()) {
        throw Error(ErrorKind::EmptyDataset, "training set is empty");
    }
    TrainResult result{std::move(init), {}, 0.0, 0, Rng(mix64(cfg.seed))};
    AdapterParams& params = result.params;
    const int total = cfg.total_steps(dataset.size());
    const std::size_t batch =
        cfg.batch_size <= 0 ? dataset.size() : std::min(dataset.size(), static_cast<std::size_t>(cfg.batch_size));

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    Adam adam(params, cfg);
    result.loss_log.reserve(static_cast<std::size_t>(std::max(total, 0)));
    for (int step = 0; step < total; ++step) {
        if (batch < dataset.size() && cursor + batch > order.size()) {
            shuffle(order, result.rng);
            cursor = 0;
        } else if (batch == dataset.size()) {
            cursor = 0;
        }
        AdapterGradients grads = zero_gradients(params);
        double loss = 0.0;
        try {
            for (std::size_t k = 0; k < batch; ++k) {
                LossAndGradients lg = adapter_gradients(params, decoder, dataset[order[cursor + k]]);
                loss += lg.loss;
                add_into(grads, lg.grads);
            }
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NonFinite) {
                throw Error(ErrorKind::NonFinite, "step " + std::to_string(step) + ": " + e.what());
            }
            throw;
        }
        cursor += batch;
        loss /= static_cast<double>(batch);
        scale(grads, 1.0 / static_cast<double>(batch));
        if (hook) {
            hook(step, params, grads);
        }
        if (std::string bad = first_non_finite(grads); !bad.empty() || !std::isfinite(loss)) {
            throw Error(ErrorKind::NonFinite,
                        "step " + std::to_string(step) + ": non-finite " + (bad.empty() ? "loss" : bad));
        }
        result.loss_log.push_back(loss);
        adam.step(params, grads, learning_rate(cfg, step, total));
        result.max_alpha_sum_error =
            std::max(result.max_alpha_sum_error, std::abs(softmax(params.aggregation.alpha_logits).sum() - 1.0));
        result.steps = step + 1;
    }
    return result;
}

} // namespace desta::adapter
