#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace omnifit::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
struct Param {
    Mat<T> value;
    Mat<T> grad;

    void resize(int rows, int cols) {
        value = Mat<T>::Zero(rows, cols);
        grad = Mat<T>::Zero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
};

template <class T>
using Visitor = std::function<void(const std::string&, Param<T>&)>;
template <class T>
using ConstVisitor = std::function<void(const std::string&, const Param<T>&)>;

template <class T>
void fill_normal(Mat<T>& m, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
}

template <class T>
struct Linear {
    Param<T> weight;  // in x out
    Param<T> bias;    // 1 x out

    Linear() = default;
    Linear(int in, int out) {
        weight.resize(in, out);
        bias.resize(1, out);
    }
    void init(std::mt19937_64& rng, double stddev = -1.0) {
        fill_normal(weight.value, stddev > 0 ? stddev : 1.0 / std::sqrt(static_cast<double>(weight.value.rows())), rng);
        bias.value.setZero();
    }
    int in() const { return static_cast<int>(weight.value.rows()); }
    int out() const { return static_cast<int>(weight.value.cols()); }

    Mat<T> forward(const Mat<T>& x) const {
        Mat<T> y = x * weight.value;
        y.rowwise() += bias.value.row(0);
        return y;
    }
    Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
        weight.grad.noalias() += x.transpose() * dy;
        bias.grad += dy.colwise().sum();
        return dy * weight.value.transpose();
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        f(p + ".weight", weight);
        f(p + ".bias", bias);
    }
};

template <class T>
struct LayerNorm {
    static constexpr double kEps = 1e-5;
    Param<T> gamma;
    Param<T> beta;

    struct Cache {
        Mat<T> xhat;
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
    };

    LayerNorm() = default;
    explicit LayerNorm(int dim) {
        gamma.resize(1, dim);
        beta.resize(1, dim);
        gamma.value.setOnes();
    }

    Mat<T> forward(const Mat<T>& x, Cache* cache = nullptr) const {
        const Eigen::Index n = x.rows(), c = x.cols();
        Mat<T> xhat(n, c);
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const T mean = x.row(i).mean();
            const auto centered = (x.row(i).array() - mean).eval();
            const T var = centered.square().mean();
            rstd[i] = T(1) / std::sqrt(var + static_cast<T>(kEps));
            xhat.row(i) = centered * rstd[i];
        }
        Mat<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->rstd = std::move(rstd);
        }
        return y;
    }
    Mat<T> backward(const Cache& cache, const Mat<T>& dy) {
        gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
        beta.grad += dy.colwise().sum();
        const Mat<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
        const T inv_c = T(1) / static_cast<T>(dy.cols());
        Mat<T> dx(dy.rows(), dy.cols());
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            const T mean_d = dxhat.row(i).sum() * inv_c;
            const T mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) * inv_c;
            dx.row(i) = cache.rstd[i] * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
        }
        return dx;
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        f(p + ".gamma", gamma);
        f(p + ".beta", beta);
    }
};

// Tanh approximation.
template <class T>
Mat<T> gelu(const Mat<T>& x) {
    constexpr T k = T(0.7978845608028654), a = T(0.044715);
    const auto v = x.array();
    return (T(0.5) * v * (T(1) + (k * (v + a * v.cube())).tanh())).matrix();
}

template <class T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
    constexpr T k = T(0.7978845608028654), a = T(0.044715);
    const auto v = x.array();
    const auto t = (k * (v + a * v.cube())).tanh().eval();
    return (dy.array() * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t.square()) * k * (T(1) + T(3) * a * v.square())))
        .matrix();
}

// Linear layers with GELU between them (none after the last).
template <class T>
struct Mlp {
    std::vector<Linear<T>> layers;

    struct Cache {
        std::vector<Mat<T>> inputs;  // input of each linear layer
        std::vector<Mat<T>> pre;     // pre-activation of each hidden layer
    };

    Mlp() = default;
    explicit Mlp(const std::vector<int>& dims) {
        for (size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1]);
    }
    void init(std::mt19937_64& rng) {
        for (auto& l : layers) l.init(rng);
    }

    Mat<T> forward(const Mat<T>& x, Cache* cache = nullptr) const {
        Mat<T> h = x;
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        for (size_t i = 0; i < layers.size(); ++i) {
            if (cache) cache->inputs.push_back(h);
            h = layers[i].forward(h);
            if (i + 1 < layers.size()) {
                if (cache) cache->pre.push_back(h);
                h = gelu(h);
            }
        }
        return h;
    }
    Mat<T> backward(const Cache& cache, const Mat<T>& dy) {
        Mat<T> d = dy;
        for (size_t i = layers.size(); i-- > 0;) {
            if (i + 1 < layers.size()) d = gelu_backward(cache.pre[i], d);
            d = layers[i].backward(cache.inputs[i], d);
        }
        return d;
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        for (size_t i = 0; i < layers.size(); ++i) layers[i].visit(p + "." + std::to_string(i), f);
    }
};

// Multi-head scaled dot-product attention of queries from xq onto xkv.
template <class T>
struct Attention {
    int heads = 1;
    Linear<T> q, k, v, o;

    struct Cache {
        Mat<T> xq, xkv;
        Mat<T> Q, K, V, ctx;
        std::vector<Mat<T>> probs;  // per head, rows(xq) x rows(xkv)
    };

    Attention() = default;
    Attention(int dim, int num_heads, int kv_dim = -1)
        : heads(num_heads), q(dim, dim), k(kv_dim > 0 ? kv_dim : dim, dim), v(kv_dim > 0 ? kv_dim : dim, dim), o(dim, dim) {}

    void init(std::mt19937_64& rng) {
        q.init(rng);
        k.init(rng);
        v.init(rng);
        o.init(rng);
    }

    Mat<T> forward(const Mat<T>& xq, const Mat<T>& xkv, Cache* cache = nullptr) const {
        const int dim = q.out(), hd = dim / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(hd));
        Mat<T> Q = q.forward(xq), K = k.forward(xkv), V = v.forward(xkv);
        Mat<T> ctx(xq.rows(), dim);
        std::vector<Mat<T>> probs;
        for (int h = 0; h < heads; ++h) {
            Mat<T> s = (Q.middleCols(h * hd, hd) * K.middleCols(h * hd, hd).transpose()) * scale;
            for (Eigen::Index r = 0; r < s.rows(); ++r) {
                const T m = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - m).exp();
                s.row(r) /= s.row(r).sum();
            }
            ctx.middleCols(h * hd, hd).noalias() = s * V.middleCols(h * hd, hd);
            if (cache) probs.push_back(std::move(s));
        }
        Mat<T> out = o.forward(ctx);
        if (cache) {
            cache->xq = xq;
            cache->xkv = xkv;
            cache->Q = std::move(Q);
            cache->K = std::move(K);
            cache->V = std::move(V);
            cache->ctx = std::move(ctx);
            cache->probs = std::move(probs);
        }
        return out;
    }

    // Returns (d xq, d xkv).
    std::pair<Mat<T>, Mat<T>> backward(const Cache& c, const Mat<T>& dout) {
        const int dim = q.out(), hd = dim / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(hd));
        const Mat<T> dctx = o.backward(c.ctx, dout);
        Mat<T> dQ(c.Q.rows(), dim), dK(c.K.rows(), dim), dV(c.V.rows(), dim);
        for (int h = 0; h < heads; ++h) {
            const Mat<T>& P = c.probs[h];
            const auto dctx_h = dctx.middleCols(h * hd, hd);
            dV.middleCols(h * hd, hd).noalias() = P.transpose() * dctx_h;
            Mat<T> dP = dctx_h * c.V.middleCols(h * hd, hd).transpose();
            const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
            Mat<T> dS = P.array() * (dP.array().colwise() - rowdot.array());
            dS *= scale;
            dQ.middleCols(h * hd, hd).noalias() = dS * c.K.middleCols(h * hd, hd);
            dK.middleCols(h * hd, hd).noalias() = dS.transpose() * c.Q.middleCols(h * hd, hd);
        }
        Mat<T> dxq = q.backward(c.xq, dQ);
        Mat<T> dxkv = k.backward(c.xkv, dK);
        dxkv += v.backward(c.xkv, dV);
        return {std::move(dxq), std::move(dxkv)};
    }

    template <class V>
    void visit(const std::string& p, V&& f) {
        q.visit(p + ".q", f);
        k.visit(p + ".k", f);
        v.visit(p + ".v", f);
        o.visit(p + ".o", f);
    }
};

// Pre-norm transformer block: x + SelfAttn(LN(x)), then + Mlp(LN(x)).
template <class T>
struct EncoderBlock {
    LayerNorm<T> ln1, ln2;
    Attention<T> attn;
    Mlp<T> mlp;

    struct Cache {
        typename LayerNorm<T>::Cache n1, n2;
        typename Attention<T>::Cache a;
        typename Mlp<T>::Cache m;
    };

    EncoderBlock() = default;
    EncoderBlock(int dim, int heads, int hidden) : ln1(dim), ln2(dim), attn(dim, heads), mlp({dim, hidden, dim}) {}
    void init(std::mt19937_64& rng) {
        attn.init(rng);
        mlp.init(rng);
    }

    Mat<T> forward(const Mat<T>& x, Cache* c = nullptr) const {
        const Mat<T> h = ln1.forward(x, c ? &c->n1 : nullptr);
        Mat<T> x1 = x + attn.forward(h, h, c ? &c->a : nullptr);
        const Mat<T> h2 = ln2.forward(x1, c ? &c->n2 : nullptr);
        x1 += mlp.forward(h2, c ? &c->m : nullptr);
        return x1;
    }
    Mat<T> backward(const Cache& c, const Mat<T>& dy) {
        Mat<T> dx1 = dy + ln2.backward(c.n2, mlp.backward(c.m, dy));
        auto [dq, dkv] = attn.backward(c.a, dx1);
        dq += dkv;
        return dx1 + ln1.backward(c.n1, dq);
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        ln1.visit(p + ".ln1", f);
        attn.visit(p + ".attn", f);
        ln2.visit(p + ".ln2", f);
        mlp.visit(p + ".mlp", f);
    }
};

}  // namespace omnifit::nn
