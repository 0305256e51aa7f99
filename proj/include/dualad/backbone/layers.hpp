#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualad/core/random.hpp"
#include "dualad/core/types.hpp"

// Pre-norm transformer block (timm ViT layout) with an explicit backward pass:
//
//   x1 = x  + proj(attn(norm1(x)))
//   y  = x1 + fc2(gelu(fc1(norm2(x1))))
//
// Matrices are tokens x features; linear weights are stored out x in.

namespace dualad::backbone {

using RowVec = Eigen::RowVectorXd;

struct Linear {
    Matrix weight;  // out x in
    RowVec bias;    // out

    [[nodiscard]] Matrix forward(const Matrix& x) const {
        return (x * weight.transpose()).rowwise() + bias;
    }
};

struct LayerNorm {
    RowVec gamma;
    RowVec beta;
};

struct BlockParams {
    int num_heads = 1;
    LayerNorm norm1;
    Linear qkv;
    Linear proj;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;

    [[nodiscard]] int embed_dim() const { return static_cast<int>(qkv.weight.cols()); }
    [[nodiscard]] int mlp_dim() const { return static_cast<int>(fc1.weight.rows()); }
};

/// Calls fn(name, tensor_a, tensor_b, ...) for every parameter tensor, in a
/// fixed order, across structurally identical BlockParams.
template <typename Fn, typename... P>
void zip_tensors(Fn&& fn, P&... params) {
    fn("norm1.weight", params.norm1.gamma...);
    fn("norm1.bias", params.norm1.beta...);
    fn("attn.qkv.weight", params.qkv.weight...);
    fn("attn.qkv.bias", params.qkv.bias...);
    fn("attn.proj.weight", params.proj.weight...);
    fn("attn.proj.bias", params.proj.bias...);
    fn("norm2.weight", params.norm2.gamma...);
    fn("norm2.bias", params.norm2.beta...);
    fn("mlp.fc1.weight", params.fc1.weight...);
    fn("mlp.fc1.bias", params.fc1.bias...);
    fn("mlp.fc2.weight", params.fc2.weight...);
    fn("mlp.fc2.bias", params.fc2.bias...);
}

/// Same shapes as `like`, all zeros.
inline BlockParams zeros_like(const BlockParams& like) {
    BlockParams out = like;
    zip_tensors([](const char*, auto& t) { t.setZero(); }, out);
    return out;
}

/// Linear weights ~ N(0, 1/fan_in), biases ~ N(0, bias_std^2), LayerNorm identity.
inline BlockParams random_block(int embed_dim, int mlp_dim, int num_heads, Rng& rng, double bias_std = 0.02) {
    auto linear = [&](int out, int in) {
        Linear l{Matrix(out, in), RowVec(out)};
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = scale * standard_normal(rng);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = bias_std * standard_normal(rng);
        return l;
    };
    auto norm = [&] { return LayerNorm{RowVec::Ones(embed_dim), RowVec::Zero(embed_dim)}; };
    BlockParams p;
    p.num_heads = num_heads;
    p.norm1 = norm();
    p.qkv = linear(3 * embed_dim, embed_dim);
    p.proj = linear(embed_dim, embed_dim);
    p.norm2 = norm();
    p.fc1 = linear(mlp_dim, embed_dim);
    p.fc2 = linear(embed_dim, mlp_dim);
    return p;
}

// ---------------------------------------------------------------------------
// Elementwise pieces.

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) + x * std::exp(-0.5 * x * x) * 0.3989422804014327;
}

/// Row-wise normalization; writes xhat and 1/sigma per row.
inline Matrix layer_norm_core(const Matrix& x, double eps, Matrix& xhat, Vector& rstd) {
    const Vector mu = x.rowwise().mean();
    xhat = x.colwise() - mu;
    rstd = ((xhat.array().square().rowwise().sum() / static_cast<double>(x.cols())) + eps).rsqrt().matrix();
    xhat = rstd.asDiagonal() * xhat;
    return xhat;
}

inline Matrix layer_norm(const Matrix& x, const LayerNorm& ln, double eps, Matrix& xhat, Vector& rstd) {
    layer_norm_core(x, eps, xhat, rstd);
    return (xhat.array().rowwise() * ln.gamma.array()).matrix().rowwise() + ln.beta;
}

inline Matrix layer_norm(const Matrix& x, const LayerNorm& ln, double eps) {
    Matrix xhat;
    Vector rstd;
    return layer_norm(x, ln, eps, xhat, rstd);
}

/// Parameter-free LayerNorm.
inline Matrix plain_layer_norm(const Matrix& x, double eps) {
    Matrix xhat;
    Vector rstd;
    return layer_norm_core(x, eps, xhat, rstd);
}

/// dL/dx of the parameter-free part given dL/dxhat.
inline Matrix layer_norm_backward(const Matrix& dxhat, const Matrix& xhat, const Vector& rstd) {
    const double inv_d = 1.0 / static_cast<double>(xhat.cols());
    const Vector mean_d = dxhat.rowwise().sum() * inv_d;
    const Vector mean_dx = (dxhat.array() * xhat.array()).rowwise().sum().matrix() * inv_d;
    Matrix dx = dxhat.colwise() - mean_d;
    dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
    return rstd.asDiagonal() * dx;
}

// ---------------------------------------------------------------------------
// Block forward/backward.

/// Dropout configuration for one forward call; rng == nullptr disables it.
struct DropoutState {
    double rate = 0.0;
    Rng* rng = nullptr;

    [[nodiscard]] bool active() const { return rng != nullptr && rate > 0.0; }
};

struct BlockCache {
    Matrix x, xhat1, a, qkv, attn_out, x1, xhat2, b, h1, g;
    Vector rstd1, rstd2;
    std::vector<Matrix> probs;  // per head, T x T
    Matrix mask_attn, mask_act, mask_mlp;  // empty when dropout inactive
};

namespace detail {

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutState& d) {
    Matrix m(rows, cols);
    const double keep = 1.0 - d.rate;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(*d.rng) < keep ? 1.0 / keep : 0.0;
    return m;
}

inline void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}

} // namespace detail

/// Forward pass for one sample (T x D tokens). Fills `cache` when non-null.
inline Matrix block_forward(const BlockParams& p, const Matrix& x, double eps, const DropoutState& drop = {},
                            BlockCache* cache = nullptr) {
    const Eigen::Index tokens = x.rows();
    const int dim = p.embed_dim();
    const int heads = p.num_heads;
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    c.x = x;
    c.a = layer_norm(x, p.norm1, eps, c.xhat1, c.rstd1);
    c.qkv = p.qkv.forward(c.a);
    c.probs.resize(static_cast<std::size_t>(heads));
    c.attn_out.resize(tokens, dim);
    for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(dim + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * dim + h * hd, hd);
        Matrix s = (q * k.transpose()) * scale;
        detail::softmax_rows(s);
        c.attn_out.middleCols(h * hd, hd) = s * v;
        c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix attn = p.proj.forward(c.attn_out);
    if (drop.active()) {
        c.mask_attn = detail::dropout_mask(attn.rows(), attn.cols(), drop);
        attn.array() *= c.mask_attn.array();
    } else {
        c.mask_attn.resize(0, 0);
    }
    c.x1 = x + attn;

    c.b = layer_norm(c.x1, p.norm2, eps, c.xhat2, c.rstd2);
    c.h1 = p.fc1.forward(c.b);
    c.g = c.h1.unaryExpr([](double v) { return gelu(v); });
    if (drop.active()) {
        c.mask_act = detail::dropout_mask(c.g.rows(), c.g.cols(), drop);
        c.g.array() *= c.mask_act.array();
    } else {
        c.mask_act.resize(0, 0);
    }
    Matrix mlp = p.fc2.forward(c.g);
    if (drop.active()) {
        c.mask_mlp = detail::dropout_mask(mlp.rows(), mlp.cols(), drop);
        mlp.array() *= c.mask_mlp.array();
    } else {
        c.mask_mlp.resize(0, 0);
    }
    return c.x1 + mlp;
}

/// Accumulates parameter gradients of a scalar loss into `grad` given dL/dy.
inline void block_backward(const BlockParams& p, const BlockCache& c, const Matrix& dy, BlockParams& grad) {
    const int dim = p.embed_dim();
    const int heads = p.num_heads;
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // MLP branch.
    Matrix dmlp = dy;
    if (c.mask_mlp.size()) dmlp.array() *= c.mask_mlp.array();
    grad.fc2.weight += dmlp.transpose() * c.g;
    grad.fc2.bias += dmlp.colwise().sum();
    Matrix dg = dmlp * p.fc2.weight;
    if (c.mask_act.size()) dg.array() *= c.mask_act.array();
    const Matrix dh1 = dg.cwiseProduct(c.h1.unaryExpr([](double v) { return gelu_grad(v); }));
    grad.fc1.weight += dh1.transpose() * c.b;
    grad.fc1.bias += dh1.colwise().sum();
    const Matrix db = dh1 * p.fc1.weight;
    grad.norm2.gamma += (db.array() * c.xhat2.array()).colwise().sum().matrix();
    grad.norm2.beta += db.colwise().sum();
    const Matrix dxhat2 = (db.array().rowwise() * p.norm2.gamma.array()).matrix();
    const Matrix dx1 = dy + layer_norm_backward(dxhat2, c.xhat2, c.rstd2);

    // Attention branch.
    Matrix dattn = dx1;
    if (c.mask_attn.size()) dattn.array() *= c.mask_attn.array();
    grad.proj.weight += dattn.transpose() * c.attn_out;
    grad.proj.bias += dattn.colwise().sum();
    const Matrix dout = dattn * p.proj.weight;

    Matrix dqkv(c.qkv.rows(), c.qkv.cols());
    for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(dim + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * dim + h * hd, hd);
        const Matrix& prob = c.probs[static_cast<std::size_t>(h)];
        const auto dout_h = dout.middleCols(h * hd, hd);
        const Matrix dprob = dout_h * v.transpose();
        dqkv.middleCols(2 * dim + h * hd, hd) = prob.transpose() * dout_h;
        const Vector row_dot = (dprob.array() * prob.array()).rowwise().sum();
        const Matrix ds = (prob.array() * (dprob.colwise() - row_dot).array()).matrix() * scale;
        dqkv.middleCols(h * hd, hd) = ds * k;
        dqkv.middleCols(dim + h * hd, hd) = ds.transpose() * q;
    }
    grad.qkv.weight += dqkv.transpose() * c.a;
    grad.qkv.bias += dqkv.colwise().sum();
    const Matrix da = dqkv * p.qkv.weight;
    grad.norm1.gamma += (da.array() * c.xhat1.array()).colwise().sum().matrix();
    grad.norm1.beta += da.colwise().sum();
}

} // namespace dualad::backbone
