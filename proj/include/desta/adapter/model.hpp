// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Toy-scale modality adapter. Per selected encoder layer l:
//
//   f_l = QFormer(Q_l, h_l)                    N x d   (shared block weights)
//   F   = (sum_l softmax(alpha)_l f_l) W + b   N x d'
//   E   = Embed(transcript)                    L x d'  (speech only)
//   A   = [F; E]
//
// A frozen one-block causal decoder reads [Embed(prompt); A; Embed(y_<m)] and
// is trained against the next-token loss on y only. Everything is double
// precision and single-threaded; gradients are written out by hand.
namespace desta::adapter {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Prompt positions holding this id are padding: never attended to and not
/// counted for position ids.
inline constexpr int kPadToken = -1;

struct AdapterDims {
    int d = 16;       // encoder width
    int d_out = 16;   // decoder width d'
    int queries = 4;  // N
    int blocks = 2;   // Q-Former blocks
    int heads = 2;
};

/// Pre-norm cross-attention + feed-forward block. Attention projections are
/// d x d, the feed-forward is d x 4d then 4d x d, no biases.
struct AttentionBlock {
    Matrix wq, wk, wv, wo;
    Matrix w1, w2;
    RowVector ln1_gain, ln1_bias;
    RowVector ln2_gain, ln2_bias;

    static AttentionBlock zeros(int width);
};

struct QFormerParams {
    int heads = 1;
    std::vector<AttentionBlock> blocks;

    int width() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().wq.rows()); }
};

struct QueryBanks {
    std::vector<Matrix> queries; // one N x d bank per selected layer
};

struct AggregationParams {
    RowVector alpha_logits; // one per selected layer
    Matrix projection;      // d x d'
    RowVector projection_bias;
};

/// Every trainable tensor of the adapter.
struct AdapterParams {
    std::vector<int> layer_ids;
    QueryBanks banks;
    QFormerParams qformer;
    AggregationParams aggregation;

    AdapterDims dims() const;
};

/// Same shapes as the trainable part of AdapterParams. There is deliberately
/// no slot for decoder tensors.
struct AdapterGradients {
    QueryBanks banks;
    QFormerParams qformer;
    AggregationParams aggregation;
};

/// Frozen causal decoder standing in for the language model.
struct ToyDecoder {
    int vocab = 32;
    int heads = 2;
    Matrix token_embedding; // V x d'
    Matrix positions;       // max_len x d'
    AttentionBlock block;   // causal self-attention
    RowVector final_gain, final_bias;
    Matrix head;            // d' x V
    RowVector head_bias;

    int width() const { return static_cast<int>(token_embedding.cols()); }
    int max_len() const { return static_cast<int>(positions.rows()); }
};

/// One training example.
struct FusionBatch {
    std::vector<Matrix> states;            // per selected layer, T x d
    std::optional<std::vector<int>> transcript;
    std::vector<int> prompt;
    std::vector<int> target;
};

/// Flat view of one tensor; used by the optimizer, checkpoints and gradient
/// checks. Views are listed in a fixed order by tensors().
struct TensorView {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

std::vector<TensorView> tensors(AdapterParams& params);
std::vector<TensorView> tensors(AdapterGradients& grads);
std::vector<TensorView> tensors(ToyDecoder& decoder);

AdapterGradients zero_gradients(const AdapterParams& params);

// ---------------------------------------------------------------------------
// Initialization (seeded, portable).

AdapterParams init_adapter(const AdapterDims& dims, std::vector<int> layer_ids, std::uint64_t seed);

struct DecoderSpec {
    int vocab = 32;
    int width = 16;
    int max_len = 64;
    int heads = 2;
    double head_scale = 6.0;
};

ToyDecoder init_decoder(const DecoderSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward operations. All throw Error(ShapeMismatch) on incompatible shapes.

Matrix qformer_forward(const QFormerParams& params, const Matrix& queries, const Matrix& states);

RowVector softmax(const RowVector& logits);

Matrix aggregate_layers(const std::vector<Matrix>& per_layer, const AggregationParams& agg);

/// [F; E]. Throws Error(WidthMismatch) when the widths differ.
Matrix assemble_audio_repr(const Matrix& features, const std::optional<Matrix>& transcript_embeddings);

Matrix embed_tokens(const ToyDecoder& decoder, const std::vector<int>& tokens);

/// Mean next-token NLL over `target` given [prompt; audio; target]. Throws
/// Error(VocabOverflow) for an id outside [0, V) (prompt pads excepted).
double decoder_loss(const ToyDecoder& decoder, const std::vector<int>& prompt, const Matrix& audio,
                    const std::vector<int>& target);

/// Full forward pass, returning the mean NLL.
double adapter_loss(const AdapterParams& params, const ToyDecoder& decoder, const FusionBatch& batch);

struct LossAndGradients {
    double loss = 0.0;
    AdapterGradients grads;
};

/// Exact gradients of adapter_loss with respect to the trainable tensors.
/// Throws Error(NonFinite) if the loss or any gradient entry overflows.
LossAndGradients adapter_gradients(const AdapterParams& params, const ToyDecoder& decoder,
                                   const FusionBatch& batch);

/// Greedy continuation under the decoder; used to plant fixture targets.
std::vector<int> greedy_decode(const AdapterParams& params, const ToyDecoder& decoder,
                               const FusionBatch& batch, int length);

} // namespace desta::adapter
