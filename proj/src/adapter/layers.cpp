// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "layers.hpp"

#include <cmath>
#include <limits>

namespace desta::adapter::detail {

namespace {

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

} // namespace

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
    double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache* cache) {
    const Eigen::Index n = x.cols();
    Matrix normalized(x.rows(), n);
    Eigen::VectorXd rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = x.row(r).mean();
        RowVector centered = x.row(r).array() - mean;
        double var = centered.squaredNorm() / static_cast<double>(n);
        rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
        normalized.row(r) = centered * rstd(r);
    }
    Matrix y = (normalized.array().rowwise() * gain.array()).rowwise() + bias.array();
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const RowVector& gain, const LayerNormCache& cache,
                           RowVector* dgain, RowVector* dbias) {
    const auto n = static_cast<double>(dy.cols());
    if (dgain != nullptr) {
        *dgain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    }
    if (dbias != nullptr) {
        *dbias += dy.colwise().sum();
    }
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        RowVector dn = dy.row(r).array() * gain.array();
        double mean_dn = dn.sum() / n;
        double mean_dn_x = dn.dot(cache.normalized.row(r)) / n;
        dx.row(r) = cache.rstd(r) * (dn.array() - mean_dn - cache.normalized.row(r).array() * mean_dn_x);
    }
    return dx;
}

Matrix attention(const AttentionBlock& w, int heads, const Matrix& query_in, const Matrix& kv_in,
                 const Matrix* mask, AttentionCache* cache) {
    const Eigen::Index width = w.wq.cols();
    const Eigen::Index head_dim = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Matrix q = query_in * w.wq;
    Matrix k = kv_in * w.wk;
    Matrix v = kv_in * w.wv;
    Matrix mixed = Matrix::Zero(query_in.rows(), width);
    std::vector<Matrix> probs;
    probs.reserve(static_cast<std::size_t>(heads));

    for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = h * head_dim;
        Matrix scores = q.middleCols(c0, head_dim) * k.middleCols(c0, head_dim).transpose() * scale;
        if (mask != nullptr) {
            scores += *mask;
        }
        Matrix p(scores.rows(), scores.cols());
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            double max_score = scores.row(r).maxCoeff();
            if (!std::isfinite(max_score)) {
                p.row(r).setZero();
                continue;
            }
            RowVector e = (scores.row(r).array() - max_score).exp();
            p.row(r) = e / e.sum();
        }
        mixed.middleCols(c0, head_dim) = p * v.middleCols(c0, head_dim);
        probs.push_back(std::move(p));
    }
    Matrix out = mixed * w.wo;
    if (cache != nullptr) {
        cache->query_in = query_in;
        cache->kv_in = kv_in;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->mixed = std::move(mixed);
        cache->probs = std::move(probs);
    }
    return out;
}

AttentionGrads attention_backward(const AttentionBlock& w, int heads, const Matrix& d_out,
                                  const AttentionCache& cache, AttentionBlock* grads) {
    const Eigen::Index width = w.wq.cols();
    const Eigen::Index head_dim = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Matrix d_mixed = d_out * w.wo.transpose();
    Matrix dq = Matrix::Zero(cache.q.rows(), width);
    Matrix dk = Matrix::Zero(cache.k.rows(), width);
    Matrix dv = Matrix::Zero(cache.v.rows(), width);

    for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = h * head_dim;
        const Matrix& p = cache.probs[static_cast<std::size_t>(h)];
        Matrix d_mixed_h = d_mixed.middleCols(c0, head_dim);
        Matrix dp = d_mixed_h * cache.v.middleCols(c0, head_dim).transpose();
        dv.middleCols(c0, head_dim) = p.transpose() * d_mixed_h;
        Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
        Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(c0, head_dim) = ds * cache.k.middleCols(c0, head_dim);
        dk.middleCols(c0, head_dim) = ds.transpose() * cache.q.middleCols(c0, head_dim);
    }

    if (grads != nullptr) {
        grads->wo += cache.mixed.transpose() * d_out;
        grads->wq += cache.query_in.transpose() * dq;
        grads->wk += cache.kv_in.transpose() * dk;
        grads->wv += cache.kv_in.transpose() * dv;
    }
    AttentionGrads out;
    out.d_query_in = dq * w.wq.transpose();
    out.d_kv_in = dk * w.wk.transpose() + dv * w.wv.transpose();
    return out;
}

Matrix feed_forward(const AttentionBlock& w, const Matrix& x, FeedForwardCache* cache) {
    Matrix hidden = x * w.w1;
    Matrix activated = hidden.unaryExpr([](double v) { return gelu(v); });
    Matrix out = activated * w.w2;
    if (cache != nullptr) {
        cache->input = x;
        cache->hidden = std::move(hidden);
        cache->activated = std::move(activated);
    }
    return out;
}

Matrix feed_forward_backward(const AttentionBlock& w, const Matrix& d_out, const FeedForwardCache& cache,
                             AttentionBlock* grads) {
    Matrix d_activated = d_out * w.w2.transpose();
    Matrix d_hidden =
        (d_activated.array() * cache.hidden.unaryExpr([](double v) { return gelu_derivative(v); }).array())
            .matrix();
    if (grads != nullptr) {
        grads->w2 += cache.activated.transpose() * d_out;
        grads->w1 += cache.input.transpose() * d_hidden;
    }
    return d_hidden * w.w1.transpose();
}

void accumulate(AttentionBlock& dst, const AttentionBlock& src) {
    dst.wq += src.wq;
    dst.wk += src.wk;
    dst.wv += src.wv;
    dst.wo += src.wo;
    dst.w1 += src.w1;
    dst.w2 += src.w2;
    dst.ln1_gain += src.ln1_gain;
    dst.ln1_bias += src.ln1_bias;
    dst.ln2_gain += src.ln2_gain;
    dst.ln2_bias += src.ln2_bias;
}

} // namespace desta::adapter::detail
