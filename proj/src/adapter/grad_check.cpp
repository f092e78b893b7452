// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <algorithm>
#include <cmath>

#include "desta/adapter/train.hpp"
#include "desta/error.hpp"

namespace desta::adapter {

namespace {

void jitter(Rng& rng, RowVector& v, double center, double stddev) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = center + stddev * standard_normal(rng);
    }
}

} // namespace

GradCheckReport grad_check(const GradCheckConfig& cfg, const GradientHook& hook) {
    if (cfg.decoder.width != cfg.dims.d_out) {
        throw Error(ErrorKind::WidthMismatch, "decoder width must equal adapter output width");
    }
    std::vector<int> layer_ids;
    for (int l = 1; l <= cfg.layers; ++l) {
        layer_ids.push_back(l);
    }
    const ToyDecoder decoder = init_decoder(cfg.decoder, hash_pair(cfg.seed, 11));
    AdapterParams params = init_adapter(cfg.dims, layer_ids, hash_pair(cfg.seed, 12));

    // Move norms, biases and alpha off their identity values so every path
    // carries signal.
    Rng rng(hash_pair(cfg.seed, 13));
    for (auto& b : params.qformer.blocks) {
        jitter(rng, b.ln1_gain, 1.0, 0.1);
        jitter(rng, b.ln1_bias, 0.0, 0.1);
        jitter(rng, b.ln2_gain, 1.0, 0.1);
        jitter(rng, b.ln2_bias, 0.0, 0.1);
    }
    jitter(rng, params.aggregation.alpha_logits, 0.0, 1.0);
    jitter(rng, params.aggregation.projection_bias, 0.0, 0.1);

    FusionBatch batch;
    for (int l = 0; l < cfg.layers; ++l) {
        Matrix h(cfg.time_steps, cfg.dims.d);
        for (Eigen::Index i = 0; i < h.size(); ++i) {
            h.data()[i] = standard_normal(rng);
        }
        batch.states.push_back(std::move(h));
    }
    auto token = [&] { return static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.decoder.vocab))); };
    batch.prompt = {token(), token(), token()};
    if (cfg.seed % 2 == 1) {
        batch.prompt[1] = kPadToken;
    } else {
        batch.transcript = std::vector<int>{token(), token()};
    }
    batch.target = {token(), token(), token()};

    LossAndGradients analytic = adapter_gradients(params, decoder, batch);
    if (hook) {
        hook(analytic.grads);
    }

    GradCheckReport report;
    auto grads = tensors(analytic.grads);
    auto views = tensors(params);
    for (std::size_t t = 0; t < views.size(); ++t) {
        TensorError err{views[t].name, 0.0, 0};
        for (std::size_t i = 0; i < views[t].size; ++i) {
            double& p = views[t].data[i];
            const double saved = p;
            p = saved + cfg.epsilon;
            const double up = adapter_loss(params, decoder, batch);
            p = saved - cfg.epsilon;
            const double down = adapter_loss(params, decoder, batch);
            p = saved;
            const double numeric = (up - down) / (2.0 * cfg.epsilon);
            const double a = grads[t].data[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), cfg.abs_floor});
            const double rel = std::isfinite(a) ? std::abs(a - numeric) / denom : INFINITY;
            if (rel > err.max_relative_error || std::isnan(rel)) {
                err.max_relative_error = std::isnan(rel) ? INFINITY : rel;
                err.worst_index = i;
            }
            ++report.entries;
        }
        report.max_relative_error = std::max(report.max_relative_error, err.max_relative_error);
        report.tensors.push_back(std::move(err));
    }
    report.passed = report.max_relative_error < cfg.tolerance;
    return report;
}

} // namespace desta::adapter
