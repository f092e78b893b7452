// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "desta/adapter/model.hpp"
#include "desta/rng.hpp"

namespace desta::adapter {

struct TrainConfig {
    int steps = 2000;
    int epochs = 0;          // when > 0, overrides steps with epochs * batches per epoch
    int batch_size = 0;      // 0 = full batch
    int warmup_steps = 100;
    double lr = 1e-2;
    double min_lr = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    int total_steps(std::size_t dataset_size) const;
    nlohmann::ordered_json to_json() const;
};

/// Linear warmup over `warmup_steps`, then cosine decay from lr to min_lr.
double learning_rate(const TrainConfig& cfg, int step, int total_steps);

/// Called after each gradient computation, before the update. Tests use it to
/// observe or corrupt a step.
using StepHook = std::function<void(int step, const AdapterParams&, AdapterGradients&)>;

struct TrainResult {
    AdapterParams params;
    std::vector<double> loss_log; // mean batch loss per step, before the update
    double max_alpha_sum_error = 0.0;
    int steps = 0;
    Rng rng;
};

/// Adam over the adapter only. The decoder is taken by const reference and is
/// never written. Throws Error(NonFinite) naming the failing step.
TrainResult train_adapter(const std::vector<FusionBatch>& dataset, const ToyDecoder& decoder,
                          AdapterParams init, const TrainConfig& cfg, const StepHook& hook = {});

double mean_loss(const AdapterParams& params, const ToyDecoder& decoder, const std::vector<FusionBatch>& dataset);

// ---------------------------------------------------------------------------
// Checkpoints (layout in docs/checkpoint_format.md).

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'T', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    AdapterParams params;
    std::uint64_t step = 0;
    std::string rng_state;
};

std::string rng_state(const Rng& rng);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Planted fixture: targets are greedy decodes of a hidden adapter, so a
// trained adapter can drive the loss close to zero.

struct FixtureSpec {
    std::uint64_t seed = 2024;
    int samples = 32;
    int time_steps = 8;
    int prompt_len = 2;
    int target_len = 4;
    int transcript_min = 2;
    int transcript_max = 3;
    double transcript_fraction = 0.5;
    std::vector<int> layer_ids{8, 16, 24, 32};
    AdapterDims dims;
    DecoderSpec decoder;

    nlohmann::ordered_json to_json() const;
    static FixtureSpec from_json(const nlohmann::json& j);
};

struct Fixture {
    FixtureSpec spec;
    ToyDecoder decoder;
    AdapterParams planted;
    std::vector<FusionBatch> samples;
};

Fixture make_fixture(const FixtureSpec& spec);
Fixture load_fixture(const std::filesystem::path& path);
void save_fixture_spec(const std::filesystem::path& path, const FixtureSpec& spec);

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckConfig {
    std::uint64_t seed = 7;
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    double abs_floor = 1e-6; // denominators never go below this
    AdapterDims dims{8, 8, 3, 2, 2};
    int layers = 3;
    int time_steps = 5;
    DecoderSpec decoder{16, 8, 32, 2, 3.0};
};

struct TensorError {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<TensorError> tensors;
    double max_relative_error = 0.0;
    std::size_t entries = 0;
    bool passed = false;
};

using GradientHook = std::function<void(AdapterGradients&)>;

/// Checks every trainable entry of a seeded random instance. The hook, when
/// set, edits the analytic gradients before comparison.
GradCheckReport grad_check(const GradCheckConfig& cfg, const GradientHook& hook = {});

} // namespace desta::adapter
