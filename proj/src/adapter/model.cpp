// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/adapter/model.hpp"

#include <cmath>
#include <limits>

#include "desta/error.hpp"
#include "desta/rng.hpp"
#include "layers.hpp"

namespace desta::adapter {

using namespace detail;

namespace {

[[noreturn]] void shape_error(const std::string& what) {
    throw Error(ErrorKind::ShapeMismatch, what);
}

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = stddev * standard_normal(rng);
        }
    }
    return m;
}

AttentionBlock random_block(Rng& rng, int width) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    AttentionBlock b;
    b.wq = random_matrix(rng, width, width, s);
    b.wk = random_matrix(rng, width, width, s);
    b.wv = random_matrix(rng, width, width, s);
    b.wo = random_matrix(rng, width, width, s);
    b.w1 = random_matrix(rng, width, 4 * width, s);
    b.w2 = random_matrix(rng, 4 * width, width, 0.5 * s);
    b.ln1_gain = RowVector::Ones(width);
    b.ln1_bias = RowVector::Zero(width);
    b.ln2_gain = RowVector::Ones(width);
    b.ln2_bias = RowVector::Zero(width);
    return b;
}

void push_block(std::vector<TensorView>& out, const std::string& prefix, AttentionBlock& b) {
    auto add = [&](const char* name, auto& t) {
        out.push_back({prefix + name, t.data(), static_cast<std::size_t>(t.size())});
    };
    add("wq", b.wq);
    add("wk", b.wk);
    add("wv", b.wv);
    add("wo", b.wo);
    add("w1", b.w1);
    add("w2", b.w2);
    add("ln1_gain", b.ln1_gain);
    add("ln1_bias", b.ln1_bias);
    add("ln2_gain", b.ln2_gain);
    add("ln2_bias", b.ln2_bias);
}

template <typename Banks, typename QFormer, typename Agg>
std::vector<TensorView> trainable_views(Banks& banks, QFormer& qformer, Agg& agg) {
    std::vector<TensorView> out;
    for (std::size_t l = 0; l < banks.queries.size(); ++l) {
        auto& q = banks.queries[l];
        out.push_back({"queries." + std::to_string(l), q.data(), static_cast<std::size_t>(q.size())});
    }
    for (std::size_t b = 0; b < qformer.blocks.size(); ++b) {
        push_block(out, "qformer." + std::to_string(b) + ".", qformer.blocks[b]);
    }
    out.push_back({"alpha_logits", agg.alpha_logits.data(), static_cast<std::size_t>(agg.alpha_logits.size())});
    out.push_back({"projection", agg.projection.data(), static_cast<std::size_t>(agg.projection.size())});
    out.push_back({"projection_bias", agg.projection_bias.data(),
                   static_cast<std::size_t>(agg.projection_bias.size())});
    return out;
}

void check_block(const AttentionBlock& b, Eigen::Index width, const char* where) {
    auto square = [&](const Matrix& m) { return m.rows() == width && m.cols() == width; };
    if (!square(b.wq) || !square(b.wk) || !square(b.wv) || !square(b.wo) || b.w1.rows() != width ||
        b.w1.cols() != 4 * width || b.w2.rows() != 4 * width || b.w2.cols() != width ||
        b.ln1_gain.size() != width || b.ln1_bias.size() != width || b.ln2_gain.size() != width ||
        b.ln2_bias.size() != width) {
        shape_error(std::string(where) + ": block tensors do not match width " + std::to_string(width));
    }
}

void check_tokens(const std::vector<int>& tokens, int vocab, bool allow_pad, const char* what) {
    for (int t : tokens) {
        if (allow_pad && t == kPadToken) {
            continue;
        }
        if (t < 0 || t >= vocab) {
            throw Error(ErrorKind::VocabOverflow,
                        std::string(what) + " token " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(vocab));
        }
    }
}

// ---------------------------------------------------------------------------
// Q-Former

struct BlockCache {
    LayerNormCache ln1;
    AttentionCache attn;
    LayerNormCache ln2;
    FeedForwardCache ffn;
};

struct QFormerCache {
    std::vector<BlockCache> blocks;
};

void check_qformer(const QFormerParams& params, const Matrix& queries, const Matrix& states) {
    if (params.blocks.empty()) {
        shape_error("Q-Former has no blocks");
    }
    const Eigen::Index width = params.width();
    if (params.heads < 1 || width % params.heads != 0) {
        shape_error("head count " + std::to_string(params.heads) + " does not divide width " +
                    std::to_string(width));
    }
    if (queries.cols() != width || states.cols() != width || queries.rows() < 1 || states.rows() < 1) {
        shape_error("queries " + shape(queries) + " / states " + shape(states) + " vs width " +
                    std::to_string(width));
    }
    for (const auto& b : params.blocks) {
        check_block(b, width, "Q-Former");
    }
}

Matrix qformer_run(const QFormerParams& params, const Matrix& queries, const Matrix& states,
                   QFormerCache* cache) {
    Matrix x = queries;
    if (cache != nullptr) {
        cache->blocks.resize(params.blocks.size());
    }
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const auto& w = params.blocks[b];
        BlockCache* bc = cache != nullptr ? &cache->blocks[b] : nullptr;
        Matrix n1 = layer_norm(x, w.ln1_gain, w.ln1_bias, bc ? &bc->ln1 : nullptr);
        x += attention(w, params.heads, n1, states, nullptr, bc ? &bc->attn : nullptr);
        Matrix n2 = layer_norm(x, w.ln2_gain, w.ln2_bias, bc ? &bc->ln2 : nullptr);
        x += feed_forward(w, n2, bc ? &bc->ffn : nullptr);
    }
    return x;
}

// Returns d(queries); accumulates parameter gradients.
Matrix qformer_backward(const QFormerParams& params, const QFormerCache& cache, Matrix dx,
                        QFormerParams& grads) {
    for (std::size_t b = params.blocks.size(); b-- > 0;) {
        const auto& w = params.blocks[b];
        const auto& bc = cache.blocks[b];
        auto& g = grads.blocks[b];
        Matrix dn2 = feed_forward_backward(w, dx, bc.ffn, &g);
        dx += layer_norm_backward(dn2, w.ln2_gain, bc.ln2, &g.ln2_gain, &g.ln2_bias);
        auto attn = attention_backward(w, params.heads, dx, bc.attn, &g);
        dx += layer_norm_backward(attn.d_query_in, w.ln1_gain, bc.ln1, &g.ln1_gain, &g.ln1_bias);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderInput {
    Matrix embeddings;        // rows: prompt (with pads), audio, target prefix
    std::vector<bool> pad;
    Eigen::Index audio_offset = 0;
    std::vector<Eigen::Index> supervised_rows;
};

struct DecoderCache {
    LayerNormCache ln1;
    AttentionCache attn;
    LayerNormCache ln2;
    FeedForwardCache ffn;
    LayerNormCache final_ln;
    Matrix logits;
};

DecoderInput build_decoder_input(const ToyDecoder& dec, const std::vector<int>& prompt, const Matrix& audio,
                                 const std::vector<int>& target) {
    if (target.empty()) {
        throw Error(ErrorKind::EmptyInput, "target must have at least one token");
    }
    check_tokens(prompt, dec.vocab, true, "prompt");
    check_tokens(target, dec.vocab, false, "target");
    const int width = dec.width();
    if (audio.cols() != width) {
        throw Error(ErrorKind::WidthMismatch,
                    "audio width " + std::to_string(audio.cols()) + " vs decoder width " + std::to_string(width));
    }
    const Eigen::Index rows = static_cast<Eigen::Index>(prompt.size()) + audio.rows() +
                              static_cast<Eigen::Index>(target.size()) - 1;
    if (rows < 1) {
        shape_error("decoder input is empty");
    }

    DecoderInput in;
    in.embeddings.resize(rows, width);
    in.pad.assign(static_cast<std::size_t>(rows), false);
    Eigen::Index r = 0;
    for (int t : prompt) {
        if (t == kPadToken) {
            in.embeddings.row(r).setZero();
            in.pad[static_cast<std::size_t>(r)] = true;
        } else {
            in.embeddings.row(r) = dec.token_embedding.row(t);
        }
        ++r;
    }
    in.audio_offset = r;
    in.embeddings.middleRows(r, audio.rows()) = audio;
    r += audio.rows();
    for (std::size_t j = 0; j + 1 < target.size(); ++j) {
        in.embeddings.row(r++) = dec.token_embedding.row(target[j]);
    }

    // Position ids count only real rows.
    Eigen::Index pos = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (in.pad[static_cast<std::size_t>(i)]) {
            continue;
        }
        if (pos >= dec.max_len()) {
            shape_error("sequence of " + std::to_string(rows) + " rows exceeds decoder max_len " +
                        std::to_string(dec.max_len()));
        }
        in.embeddings.row(i) += dec.positions.row(pos++);
    }

    // The row before y_j predicts y_j; y_0 is predicted from the last real
    // row ahead of the target prefix.
    Eigen::Index last_real = -1;
    for (Eigen::Index i = 0; i < in.audio_offset + audio.rows(); ++i) {
        if (!in.pad[static_cast<std::size_t>(i)]) {
            last_real = i;
        }
    }
    if (last_real < 0) {
        shape_error("no real rows before the target");
    }
    in.supervised_rows.push_back(last_real);
    for (std::size_t j = 1; j < target.size(); ++j) {
        in.supervised_rows.push_back(in.audio_offset + audio.rows() + static_cast<Eigen::Index>(j) - 1);
    }
    return in;
}

Matrix causal_mask(const std::vector<bool>& pad) {
    const auto n = static_cast<Eigen::Index>(pad.size());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Matrix mask = Matrix::Constant(n, n, neg_inf);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            if (!pad[static_cast<std::size_t>(j)] || i == j) {
                mask(i, j) = 0.0;
            }
        }
    }
    return mask;
}

Matrix decoder_logits(const ToyDecoder& dec, const DecoderInput& in, DecoderCache* cache) {
    const Matrix mask = causal_mask(in.pad);
    const auto& w = dec.block;
    Matrix x = in.embeddings;
    Matrix n1 = layer_norm(x, w.ln1_gain, w.ln1_bias, cache ? &cache->ln1 : nullptr);
    x += attention(w, dec.heads, n1, n1, &mask, cache ? &cache->attn : nullptr);
    Matrix n2 = layer_norm(x, w.ln2_gain, w.ln2_bias, cache ? &cache->ln2 : nullptr);
    x += feed_forward(w, n2, cache ? &cache->ffn : nullptr);
    Matrix z = layer_norm(x, dec.final_gain, dec.final_bias, cache ? &cache->final_ln : nullptr);
    Matrix logits = (z * dec.head).rowwise() + dec.head_bias;
    return logits;
}

double log_sum_exp(const RowVector& row) {
    double m = row.maxCoeff();
    return m + std::log((row.array() - m).exp().sum());
}

double mean_nll(const Matrix& logits, const DecoderInput& in, const std::vector<int>& target) {
    double total = 0.0;
    for (std::size_t j = 0; j < target.size(); ++j) {
        RowVector row = logits.row(in.supervised_rows[j]);
        total += log_sum_exp(row) - row(target[j]);
    }
    return total / static_cast<double>(target.size());
}

// d(loss)/d(decoder input rows); decoder weights are not differentiated.
Matrix decoder_backward(const ToyDecoder& dec, const DecoderInput& in, const DecoderCache& cache,
                        const std::vector<int>& target) {
    const auto m = static_cast<double>(target.size());
    Matrix d_logits = Matrix::Zero(cache.logits.rows(), cache.logits.cols());
    for (std::size_t j = 0; j < target.size(); ++j) {
        const Eigen::Index r = in.supervised_rows[j];
        RowVector row = cache.logits.row(r);
        RowVector p = (row.array() - log_sum_exp(row)).exp();
        p(target[j]) -= 1.0;
        d_logits.row(r) += p / m;
    }
    const auto& w = dec.block;
    Matrix dz = d_logits * dec.head.transpose();
    Matrix dx = layer_norm_backward(dz, dec.final_gain, cache.final_ln, nullptr, nullptr);
    Matrix dn2 = feed_forward_backward(w, dx, cache.ffn, nullptr);
    dx += layer_norm_backward(dn2, w.ln2_gain, cache.ln2, nullptr, nullptr);
    auto attn = attention_backward(w, dec.heads, dx, cache.attn, nullptr);
    Matrix dn1 = attn.d_query_in + attn.d_kv_in;
    dx += layer_norm_backward(dn1, w.ln1_gain, cache.ln1, nullptr, nullptr);
    return dx;
}

void check_adapter(const AdapterParams& params, const FusionBatch& batch) {
    const std::size_t layers = params.banks.queries.size();
    if (layers == 0) {
        shape_error("no selected encoder layers");
    }
    if (batch.states.size() != layers || params.aggregation.alpha_logits.size() != static_cast<Eigen::Index>(layers)) {
        shape_error(std::to_string(batch.states.size()) + " state layers, " + std::to_string(layers) +
                    " query banks, " + std::to_string(params.aggregation.alpha_logits.size()) + " alpha logits");
    }
    const Eigen::Index t = batch.states.front().rows();
    for (const auto& s : batch.states) {
        if (s.rows() != t) {
            shape_error("encoder layers disagree on time steps");
        }
    }
    const Eigen::Index n = params.banks.queries.front().rows();
    for (const auto& q : params.banks.queries) {
        if (q.rows() != n) {
            shape_error("query banks disagree on N");
        }
    }
}

struct ForwardState {
    std::vector<QFormerCache> qformer;
    std::vector<Matrix> per_layer;
    RowVector alpha;
    Matrix mixed;
    Matrix audio;
    DecoderInput input;
    DecoderCache decoder;
};

} // namespace

// ---------------------------------------------------------------------------

AttentionBlock AttentionBlock::zeros(int width) {
    AttentionBlock b;
    b.wq = Matrix::Zero(width, width);
    b.wk = Matrix::Zero(width, width);
    b.wv = Matrix::Zero(width, width);
    b.wo = Matrix::Zero(width, width);
    b.w1 = Matrix::Zero(width, 4 * width);
    b.w2 = Matrix::Zero(4 * width, width);
    b.ln1_gain = RowVector::Zero(width);
    b.ln1_bias = RowVector::Zero(width);
    b.ln2_gain = RowVector::Zero(width);
    b.ln2_bias = RowVector::Zero(width);
    return b;
}

AdapterDims AdapterParams::dims() const {
    AdapterDims d;
    d.d = qformer.width();
    d.d_out = static_cast<int>(aggregation.projection.cols());
    d.queries = banks.queries.empty() ? 0 : static_cast<int>(banks.queries.front().rows());
    d.blocks = static_cast<int>(qformer.blocks.size());
    d.heads = qformer.heads;
    return d;
}

std::vector<TensorView> tensors(AdapterParams& params) {
    return trainable_views(params.banks, params.qformer, params.aggregation);
}

std::vector<TensorView> tensors(AdapterGradients& grads) {
    return trainable_views(grads.banks, grads.qformer, grads.aggregation);
}

std::vector<TensorView> tensors(ToyDecoder& dec) {
    std::vector<TensorView> out;
    auto add = [&](const char* name, auto& t) {
        out.push_back({name, t.data(), static_cast<std::size_t>(t.size())});
    };
    add("token_embedding", dec.token_embedding);
    add("positions", dec.positions);
    push_block(out, "block.", dec.block);
    add("final_gain", dec.final_gain);
    add("final_bias", dec.final_bias);
    add("head", dec.head);
    add("head_bias", dec.head_bias);
    return out;
}

AdapterGradients zero_gradients(const AdapterParams& params) {
    AdapterGradients g;
    for (const auto& q : params.banks.queries) {
        g.banks.queries.push_back(Matrix::Zero(q.rows(), q.cols()));
    }
    g.qformer.heads = params.qformer.heads;
    for (std::size_t b = 0; b < params.qformer.blocks.size(); ++b) {
        g.qformer.blocks.push_back(AttentionBlock::zeros(params.qformer.width()));
    }
    g.aggregation.alpha_logits = RowVector::Zero(params.aggregation.alpha_logits.size());
    g.aggregation.projection =
        Matrix::Zero(params.aggregation.projection.rows(), params.aggregation.projection.cols());
    g.aggregation.projection_bias = RowVector::Zero(params.aggregation.projection_bias.size());
    return g;
}

AdapterParams init_adapter(const AdapterDims& dims, std::vector<int> layer_ids, std::uint64_t seed) {
    if (layer_ids.empty() || dims.d < 1 || dims.d_out < 1 || dims.queries < 1 || dims.blocks < 1 ||
        dims.heads < 1 || dims.d % dims.heads != 0) {
        shape_error("invalid adapter dimensions");
    }
    Rng rng(mix64(seed));
    AdapterParams p;
    p.layer_ids = std::move(layer_ids);
    for (std::size_t l = 0; l < p.layer_ids.size(); ++l) {
        p.banks.queries.push_back(random_matrix(rng, dims.queries, dims.d, 1.0));
    }
    p.qformer.heads = dims.heads;
    for (int b = 0; b < dims.blocks; ++b) {
        p.qformer.blocks.push_back(random_block(rng, dims.d));
    }
    p.aggregation.alpha_logits = RowVector::Zero(static_cast<Eigen::Index>(p.layer_ids.size()));
    p.aggregation.projection = random_matrix(rng, dims.d, dims.d_out, 1.0 / std::sqrt(static_cast<double>(dims.d)));
    p.aggregation.projection_bias = RowVector::Zero(dims.d_out);
    return p;
}

ToyDecoder init_decoder(const DecoderSpec& spec, std::uint64_t seed) {
    if (spec.vocab < 1 || spec.width < 1 || spec.max_len < 1 || spec.heads < 1 ||
        spec.width % spec.heads != 0) {
        shape_error("invalid decoder dimensions");
    }
    Rng rng(mix64(seed ^ 0xDEC0DE));
    ToyDecoder dec;
    dec.vocab = spec.vocab;
    dec.heads = spec.heads;
    dec.token_embedding = random_matrix(rng, spec.vocab, spec.width, 1.0);
    dec.positions = random_matrix(rng, spec.max_len, spec.width, 0.5);
    dec.block = random_block(rng, spec.width);
    dec.final_gain = RowVector::Ones(spec.width);
    dec.final_bias = RowVector::Zero(spec.width);
    dec.head = random_matrix(rng, spec.width, spec.vocab, spec.head_scale / std::sqrt(static_cast<double>(spec.width)));
    dec.head_bias = RowVector::Zero(spec.vocab);
    return dec;
}

Matrix qformer_forward(const QFormerParams& params, const Matrix& queries, const Matrix& states) {
    check_qformer(params, queries, states);
    return qformer_run(params, queries, states, nullptr);
}

RowVector softmax(const RowVector& logits) {
    RowVector e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

Matrix aggregate_layers(const std::vector<Matrix>& per_layer, const AggregationParams& agg) {
    if (per_layer.empty() || static_cast<Eigen::Index>(per_layer.size()) != agg.alpha_logits.size()) {
        shape_error(std::to_string(per_layer.size()) + " layers vs " + std::to_string(agg.alpha_logits.size()) +
                    " alpha logits");
    }
    for (const auto& f : per_layer) {
        if (f.rows() != per_layer.front().rows() || f.cols() != per_layer.front().cols()) {
            shape_error("layer outputs differ in shape");
        }
    }
    if (agg.projection.rows() != per_layer.front().cols() || agg.projection_bias.size() != agg.projection.cols()) {
        shape_error("projection " + shape(agg.projection) + " vs features " + shape(per_layer.front()));
    }
    RowVector alpha = softmax(agg.alpha_logits);
    Matrix mixed = Matrix::Zero(per_layer.front().rows(), per_layer.front().cols());
    for (std::size_t l = 0; l < per_layer.size(); ++l) {
        mixed += alpha(static_cast<Eigen::Index>(l)) * per_layer[l];
    }
    return (mixed * agg.projection).rowwise() + agg.projection_bias;
}

Matrix assemble_audio_repr(const Matrix& features, const std::optional<Matrix>& transcript_embeddings) {
    if (!transcript_embeddings) {
        return features;
    }
    if (transcript_embeddings->cols() != features.cols()) {
        throw Error(ErrorKind::WidthMismatch, "F width " + std::to_string(features.cols()) + " vs E width " +
                                                  std::to_string(transcript_embeddings->cols()));
    }
    Matrix out(features.rows() + transcript_embeddings->rows(), features.cols());
    out.topRows(features.rows()) = features;
    out.bottomRows(transcript_embeddings->rows()) = *transcript_embeddings;
    return out;
}

Matrix embed_tokens(const ToyDecoder& decoder, const std::vector<int>& tokens) {
    check_tokens(tokens, decoder.vocab, false, "transcript");
    Matrix out(static_cast<Eigen::Index>(tokens.size()), decoder.width());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = decoder.token_embedding.row(tokens[i]);
    }
    return out;
}

double decoder_loss(const ToyDecoder& decoder, const std::vector<int>& prompt, const Matrix& audio,
                    const std::vector<int>& target) {
    check_block(decoder.block, decoder.width(), "decoder");
    DecoderInput in = build_decoder_input(decoder, prompt, audio, target);
    Matrix logits = decoder_logits(decoder, in, nullptr);
    return mean_nll(logits, in, target);
}

namespace {

ForwardState forward(const AdapterParams& params, const ToyDecoder& decoder, const FusionBatch& batch,
                     bool keep_caches) {
    check_adapter(params, batch);
    ForwardState st;
    const std::size_t layers = batch.states.size();
    st.qformer.resize(keep_caches ? layers : 0);
    for (std::size_t l = 0; l < layers; ++l) {
        check_qformer(params.qformer, params.banks.queries[l], batch.states[l]);
        st.per_layer.push_back(qformer_run(params.qformer, params.banks.queries[l], batch.states[l],
                                           keep_caches ? &st.qformer[l] : nullptr));
    }
    st.alpha = softmax(params.aggregation.alpha_logits);
    Matrix features = aggregate_layers(st.per_layer, params.aggregation);
    st.mixed = Matrix::Zero(st.per_layer.front().rows(), st.per_layer.front().cols());
    for (std::size_t l = 0; l < layers; ++l) {
        st.mixed += st.alpha(static_cast<Eigen::Index>(l)) * st.per_layer[l];
    }
    std::optional<Matrix> e;
    if (batch.transcript) {
        e = embed_tokens(decoder, *batch.transcript);
    }
    st.audio = assemble_audio_repr(features, e);
    st.input = build_decoder_input(decoder, batch.prompt, st.audio, batch.target);
    st.decoder.logits = decoder_logits(decoder, st.input, keep_caches ? &st.decoder : nullptr);
    return st;
}

bool all_finite(AdapterGradients& g) {
    for (const auto& view : tensors(g)) {
        for (std::size_t i = 0; i < view.size; ++i) {
            if (!std::isfinite(view.data[i])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace

double adapter_loss(const AdapterParams& params, const ToyDecoder& decoder, const FusionBatch& batch) {
    ForwardState st = forward(params, decoder, batch, false);
    return mean_nll(st.decoder.logits, st.input, batch.target);
}

LossAndGradients adapter_gradients(const AdapterParams& params, const ToyDecoder& decoder,
                                   const FusionBatch& batch) {
    ForwardState st = forward(params, decoder, batch, true);
    LossAndGradients out;
    out.loss = mean_nll(st.decoder.logits, st.input, batch.target);
    if (!std::isfinite(out.loss)) {
        throw Error(ErrorKind::NonFinite, "loss is not finite");
    }
    out.grads = zero_gradients(params);

    Matrix d_input = decoder_backward(decoder, st.input, st.decoder, batch.target);
    const Eigen::Index n = params.banks.queries.front().rows();
    Matrix d_features = d_input.middleRows(st.input.audio_offset, n);

    auto& ga = out.grads.aggregation;
    ga.projection = st.mixed.transpose() * d_features;
    ga.projection_bias = d_features.colwise().sum();
    Matrix d_mixed = d_features * params.aggregation.projection.transpose();

    const auto layers = static_cast<Eigen::Index>(st.per_layer.size());
    RowVector d_alpha(layers);
    for (Eigen::Index l = 0; l < layers; ++l) {
        d_alpha(l) = (d_mixed.array() * st.per_layer[static_cast<std::size_t>(l)].array()).sum();
    }
    const double weighted = st.alpha.dot(d_alpha);
    ga.alpha_logits = st.alpha.array() * (d_alpha.array() - weighted);

    for (Eigen::Index l = 0; l < layers; ++l) {
        Matrix d_f = st.alpha(l) * d_mixed;
        out.grads.banks.queries[static_cast<std::size_t>(l)] =
            qformer_backward(params.qformer, st.qformer[static_cast<std::size_t>(l)], std::move(d_f),
                             out.grads.qformer);
    }
    if (!all_finite(out.grads)) {
        throw Error(ErrorKind::NonFinite, "gradient overflow");
    }
    return out;
}

std::vector<int> greedy_decode(const AdapterParams& params, const ToyDecoder& decoder, const FusionBatch& batch,
                               int length) {
    FusionBatch probe = batch;
    probe.target.clear();
    std::vector<int> out;
    for (int step = 0; step < length; ++step) {
        // The last target token only feeds the prediction after it, so a
        // placeholder in that slot leaves earlier logits untouched.
        probe.target = out;
        probe.target.push_back(0);
        ForwardState st = forward(params, decoder, probe, false);
        Eigen::Index row = st.input.supervised_rows.back();
        Eigen::Index best = 0;
        st.decoder.logits.row(row).maxCoeff(&best);
        out.push_back(static_cast<int>(best));
    }
    return out;
}

} // namespace desta::adapter
