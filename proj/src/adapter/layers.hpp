// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <vector>

#include "desta/adapter/model.hpp"

// Row-wise building blocks with hand-written backward passes.
namespace desta::adapter::detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Matrix normalized;     // (x - mean) * rstd
    Eigen::VectorXd rstd;
};

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache* cache);

/// Returns dx; accumulates into dgain/dbias when non-null.
Matrix layer_norm_backward(const Matrix& dy, const RowVector& gain, const LayerNormCache& cache,
                           RowVector* dgain, RowVector* dbias);

struct AttentionCache {
    Matrix query_in;
    Matrix kv_in;
    Matrix q, k, v, mixed;
    std::vector<Matrix> probs; // per head
};

/// Multi-head attention of `query_in` rows over `kv_in` rows. `mask`, when
/// given, is additive (0 or -inf) with shape query rows x key rows; a row with
/// no visible key produces zeros.
Matrix attention(const AttentionBlock& w, int heads, const Matrix& query_in, const Matrix& kv_in,
                 const Matrix* mask, AttentionCache* cache);

struct AttentionGrads {
    Matrix d_query_in;
    Matrix d_kv_in;
};

/// `grads` may be null for frozen weights.
AttentionGrads attention_backward(const AttentionBlock& w, int heads, const Matrix& d_out,
                                  const AttentionCache& cache, AttentionBlock* grads);

struct FeedForwardCache {
    Matrix input;
    Matrix hidden; // pre-activation
    Matrix activated;
};

Matrix feed_forward(const AttentionBlock& w, const Matrix& x, FeedForwardCache* cache);

Matrix feed_forward_backward(const AttentionBlock& w, const Matrix& d_out, const FeedForwardCache& cache,
                             AttentionBlock* grads);

double gelu(double x);
double gelu_derivative(double x);

/// Adds `src` into `dst` tensor by tensor.
void accumulate(AttentionBlock& dst, const AttentionBlock& src);

} // namespace desta::adapter::detail
