#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "omnifit/nn/layers.hpp"

namespace omnifit::nn {

struct TokenizerDims {
    int feature_dim = 128;
    int hidden = 64;
};

// Mini point network over center-relative patch coordinates, max-pooled per
// patch, plus a learned positional embedding of the patch center.
template <class T>
struct PatchTokenizer {
    Mlp<T> point_mlp;
    Mlp<T> pos_mlp;

    struct Cache {
        typename Mlp<T>::Cache point, pos;
        std::vector<int> argmax;  // g x c, row of the winning point inside the patch
        int k = 0;
    };

    PatchTokenizer() = default;
    explicit PatchTokenizer(const TokenizerDims& d)
        : point_mlp({3, d.hidden, d.feature_dim}), pos_mlp({3, d.hidden, d.feature_dim}) {}
    void init(std::mt19937_64& rng) {
        point_mlp.init(rng);
        pos_mlp.init(rng);
    }

    // rel: (g * k) x 3 center-relative neighbors, patch-major; centers: g x 3.
    Mat<T> forward(const Mat<T>& rel, const Mat<T>& centers, int k, Cache* c = nullptr) const {
        const Eigen::Index g = centers.rows();
        const Mat<T> f = point_mlp.forward(rel, c ? &c->point : nullptr);
        const Eigen::Index dim = f.cols();
        Mat<T> e(g, dim);
        if (c) {
            c->argmax.assign(static_cast<size_t>(g * dim), 0);
            c->k = k;
        }
        for (Eigen::Index p = 0; p < g; ++p) {
            for (Eigen::Index j = 0; j < dim; ++j) {
                int best = 0;
                T v = f(p * k, j);
                for (int r = 1; r < k; ++r) {
                    if (f(p * k + r, j) > v) {
                        v = f(p * k + r, j);
                        best = r;
                    }
                }
                e(p, j) = v;
                if (c) c->argmax[static_cast<size_t>(p * dim + j)] = best;
            }
        }
        e += pos_mlp.forward(centers, c ? &c->pos : nullptr);
        return e;
    }
    void backward(const Cache& c, const Mat<T>& de) {
        const Eigen::Index g = de.rows(), dim = de.cols();
        Mat<T> df = Mat<T>::Zero(g * c.k, dim);
        for (Eigen::Index p = 0; p < g; ++p)
            for (Eigen::Index j = 0; j < dim; ++j) df(p * c.k + c.argmax[static_cast<size_t>(p * dim + j)], j) = de(p, j);
        point_mlp.backward(c.point, df);
        pos_mlp.backward(c.pos, de);
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        point_mlp.visit(p + ".point_mlp", f);
        pos_mlp.visit(p + ".pos_mlp", f);
    }
};

template <class T>
struct EncoderStack {
    std::vector<EncoderBlock<T>> blocks;

    using Cache = std::vector<typename EncoderBlock<T>::Cache>;

    EncoderStack() = default;
    EncoderStack(int count, int dim, int heads, int hidden) {
        for (int i = 0; i < count; ++i) blocks.emplace_back(dim, heads, hidden);
    }
    void init(std::mt19937_64& rng) {
        for (auto& b : blocks) b.init(rng);
    }
    Mat<T> forward(Mat<T> x, Cache* c = nullptr) const {
        if (c) c->resize(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) {
            x = blocks[i].forward(x, c ? &(*c)[i] : nullptr);
            if (!x.allFinite()) throw std::runtime_error("non-finite activation after encoder block " + std::to_string(i));
        }
        return x;
    }
    Mat<T> backward(const Cache& c, Mat<T> dy) {
        for (size_t i = blocks.size(); i-- > 0;) dy = blocks[i].backward(c[i], dy);
        return dy;
    }
    template <class V>
    void visit(const std::string& p, V&& f) {
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + "." + std::to_string(i), f);
    }
};

struct PredictorDims {
    int num_landmarks = 600;
    int feature_dim = 128;
    int encoder_blocks = 4;
    int decoder_blocks = 4;
    int heads = 4;
    int tokenizer_hidden = 64;
    int encoder_mlp_hidden = 256;
    std::vector<int> head_hidden = {128, 128};
};

// Image cross-attention branch, one per decoder layer.
template <class T>
struct AdapterNet {
    struct Branch {
        Linear<T> adapt;  // image feature dim -> c
        Attention<T> attn;
        template <class V>
        void visit(const std::string& p, V&& f) {
            adapt.visit(p + ".adapt", f);
            attn.visit(p + ".attn", f);
        }
    };
    using Scalar = T;
    int image_dim = 0;
    std::vector<Branch> branches;

    AdapterNet() = default;
    AdapterNet(int layers, int dim, int heads, int image_features) : image_dim(image_features) {
        for (int i = 0; i < layers; ++i) branches.push_back({Linear<T>(image_features, dim), Attention<T>(dim, heads)});
    }
    // Output projections start at zero so the branch contributes nothing.
    void init(std::mt19937_64& rng) {
        for (auto& b : branches) {
            b.adapt.init(rng);
            b.attn.init(rng);
            b.attn.o.weight.value.setZero();
            b.attn.o.bias.value.setZero();
        }
    }
    template <class V>
    void visit(V&& f) {
        for (size_t i = 0; i < branches.size(); ++i) branches[i].visit("adapter." + std::to_string(i), f);
    }
};

template <class T>
struct PredictorNet {
    struct Layer {
        LayerNorm<T> ln_q, ln_kv, ln_self;
        Attention<T> cross, self;
        template <class V>
        void visit(const std::string& p, V&& f) {
            ln_q.visit(p + ".ln_q", f);
            ln_kv.visit(p + ".ln_kv", f);
            cross.visit(p + ".cross", f);
            ln_self.visit(p + ".ln_self", f);
            self.visit(p + ".self", f);
        }
    };
    struct LayerCache {
        typename LayerNorm<T>::Cache q, kv, s;
        typename Attention<T>::Cache cross, self, image;
        Mat<T> image_in;  // adapted image tokens
    };
    struct Trace {
        typename PatchTokenizer<T>::Cache tok;
        typename EncoderStack<T>::Cache enc;
        std::vector<LayerCache> layers;
        typename LayerNorm<T>::Cache out_norm;
        typename Mlp<T>::Cache head;
        const Mat<T>* image = nullptr;
    };

    using Scalar = T;
    PredictorDims dims;
    PatchTokenizer<T> tokenizer;
    EncoderStack<T> encoder;
    Param<T> queries;  // M x c
    std::vector<Layer> decoder;
    LayerNorm<T> out_norm;
    Mlp<T> head;

    PredictorNet() = default;
    explicit PredictorNet(const PredictorDims& d)
        : dims(d),
          tokenizer({d.feature_dim, d.tokenizer_hidden}),
          encoder(d.encoder_blocks, d.feature_dim, d.heads, d.encoder_mlp_hidden),
          out_norm(d.feature_dim) {
        queries.resize(d.num_landmarks, d.feature_dim);
        for (int i = 0; i < d.decoder_blocks; ++i) {
            decoder.push_back({LayerNorm<T>(d.feature_dim), LayerNorm<T>(d.feature_dim), LayerNorm<T>(d.feature_dim),
                               Attention<T>(d.feature_dim, d.heads), Attention<T>(d.feature_dim, d.heads)});
        }
        std::vector<int> hd{d.feature_dim};
        hd.insert(hd.end(), d.head_hidden.begin(), d.head_hidden.end());
        hd.push_back(3);
        head = Mlp<T>(hd);
    }

    void init(std::mt19937_64& rng) {
        tokenizer.init(rng);
        encoder.init(rng);
        fill_normal(queries.value, 0.02, rng);
        for (auto& l : decoder) {
            l.cross.init(rng);
            l.self.init(rng);
        }
        head.init(rng);
        // Near-zero initial predictions.
        fill_normal(head.layers.back().weight.value, 1e-3, rng);
    }

    template <class V>
    void visit(V&& f) {
        tokenizer.visit("tokenizer", f);
        encoder.visit("encoder", f);
        f("queries", queries);
        for (size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder." + std::to_string(i), f);
        out_norm.visit("out_norm", f);
        head.visit("head", f);
    }

    // Tokenizer, encoder and decoder in one pass.
    Mat<T> forward(const Mat<T>& rel, const Mat<T>& centers, int k, const AdapterNet<T>* adapter, const Mat<T>* image,
                   Trace* t = nullptr) const {
        Mat<T> e = tokenizer.forward(rel, centers, k, t ? &t->tok : nullptr);
        const Mat<T> fp = encoder.forward(std::move(e), t ? &t->enc : nullptr);
        return decode(fp, adapter, image, t);
    }
    // With decoder_only set, gradients stop at the point features (used when
    // only the adapter is trained).
    void backward(const Trace& t, const Mat<T>& dout, AdapterNet<T>* adapter, bool decoder_only = false) {
        const Mat<T> dfp = decode_backward(t, dout, adapter);
        if (decoder_only) return;
        tokenizer.backward(t.tok, encoder.backward(t.enc, dfp));
    }

    // Decoder over point features fp; image tokens optional (adapter must be
    // given with them). Returns M x 3. attention, when given, receives the
    // point cross-attention probabilities per layer and head.
    Mat<T> decode(const Mat<T>& fp, const AdapterNet<T>* adapter, const Mat<T>* image, Trace* trace,
                  std::vector<std::vector<Mat<T>>>* attention = nullptr) const {
        if (image && !adapter) throw std::invalid_argument("image features given but no adapter is attached");
        if (adapter && adapter->branches.size() != decoder.size()) {
            throw std::invalid_argument("adapter has " + std::to_string(adapter->branches.size()) +
                                        " branches, decoder has " + std::to_string(decoder.size()) + " layers");
        }
        if (image && image->cols() != adapter->image_dim) {
            throw std::invalid_argument("image features have " + std::to_string(image->cols()) +
                                        " channels, adapter expects " + std::to_string(adapter->image_dim));
        }
        if (trace) {
            trace->layers.assign(decoder.size(), {});
            trace->image = image;
        }
        if (attention) attention->clear();
        Mat<T> f = queries.value;
        typename Attention<T>::Cache local;
        for (size_t i = 0; i < decoder.size(); ++i) {
            const Layer& l = decoder[i];
            LayerCache* c = trace ? &trace->layers[i] : nullptr;
            auto* cross_cache = c ? &c->cross : (attention ? &local : nullptr);
            const Mat<T> h = l.ln_q.forward(f, c ? &c->q : nullptr);
            const Mat<T> kv = l.ln_kv.forward(fp, c ? &c->kv : nullptr);
            Mat<T> update = l.cross.forward(h, kv, cross_cache);
            if (attention) attention->push_back(cross_cache->probs);
            if (image) {
                const auto& b = adapter->branches[i];
                Mat<T> adapted = b.adapt.forward(*image);
                update += b.attn.forward(h, adapted, c ? &c->image : nullptr);
                if (c) c->image_in = std::move(adapted);
            }
            f += update;
            const Mat<T> hs = l.ln_self.forward(f, c ? &c->s : nullptr);
            f += l.self.forward(hs, hs, c ? &c->self : nullptr);
            if (!f.allFinite()) throw std::runtime_error("non-finite activation after decoder layer " + std::to_string(i));
        }
        const Mat<T> z = out_norm.forward(f, trace ? &trace->out_norm : nullptr);
        return head.forward(z, trace ? &trace->head : nullptr);
    }

    // Accumulates parameter gradients (and adapter gradients when the trace
    // used image features) for d(loss)/d(output). Returns d(loss)/d(fp).
    Mat<T> decode_backward(const Trace& t, const Mat<T>& dout, AdapterNet<T>* adapter) {
        Mat<T> df = out_norm.backward(t.out_norm, head.backward(t.head, dout));
        Mat<T> dfp = Mat<T>::Zero(0, 0);
        for (size_t i = decoder.size(); i-- > 0;) {
            Layer& l = decoder[i];
            const LayerCache& c = t.layers[i];
            {
                auto [dq, dkv] = l.self.backward(c.self, df);
                dq += dkv;
                df += l.ln_self.backward(c.s, dq);
            }
            auto [dh, dkv] = l.cross.backward(c.cross, df);
            const Mat<T> dkv_in = l.ln_kv.backward(c.kv, dkv);
            if (dfp.size() == 0) dfp = dkv_in;
            else dfp += dkv_in;
            if (t.image) {
                auto& b = adapter->branches[i];
                auto [dh2, dimg] = b.attn.backward(c.image, df);
                b.adapt.backward(*t.image, dimg);
                dh += dh2;
            }
            df += l.ln_q.backward(c.q, dh);
        }
        queries.grad += df;
        return dfp;
    }
};

struct ScaleDims {
    int feature_dim = 128;
    int encoder_blocks = 3;
    int heads = 4;
    int tokenizer_hidden = 64;
    int encoder_mlp_hidden = 256;
    int head_hidden = 64;
};

// Encoder with a learned scale token prepended to the patch sequence; the
// token's output is regressed to log S.
template <class T>
struct ScaleNet {
    struct Trace {
        typename PatchTokenizer<T>::Cache tok;
        typename EncoderStack<T>::Cache enc;
        typename LayerNorm<T>::Cache out_norm;
        typename Mlp<T>::Cache head;
        Eigen::Index rows = 0;
    };

    using Scalar = T;
    ScaleDims dims;
    PatchTokenizer<T> tokenizer;
    Param<T> scale_token;  // 1 x c
    EncoderStack<T> encoder;
    LayerNorm<T> out_norm;
    Mlp<T> head;

    ScaleNet() = default;
    explicit ScaleNet(const ScaleDims& d)
        : dims(d),
          tokenizer({d.feature_dim, d.tokenizer_hidden}),
          encoder(d.encoder_blocks, d.feature_dim, d.heads, d.encoder_mlp_hidden),
          out_norm(d.feature_dim),
          head({d.feature_dim, d.head_hidden, 1}) {
        scale_token.resize(1, d.feature_dim);
    }
    void init(std::mt19937_64& rng) {
        tokenizer.init(rng);
        fill_normal(scale_token.value, 0.02, rng);
        encoder.init(rng);
        head.init(rng);
        fill_normal(head.layers.back().weight.value, 1e-3, rng);
    }
    template <class V>
    void visit(V&& f) {
        tokenizer.visit("tokenizer", f);
        f("scale_token", scale_token);
        encoder.visit("encoder", f);
        out_norm.visit("out_norm", f);
        head.visit("head", f);
    }

    // Returns log S.
    T forward(const Mat<T>& rel, const Mat<T>& centers, int k, Trace* t = nullptr) const {
        const Mat<T> e = tokenizer.forward(rel, centers, k, t ? &t->tok : nullptr);
        Mat<T> x(e.rows() + 1, e.cols());
        x.row(0) = scale_token.value;
        x.bottomRows(e.rows()) = e;
        const Mat<T> y = encoder.forward(std::move(x), t ? &t->enc : nullptr);
        if (t) t->rows = y.rows();
        const Mat<T> z = out_norm.forward(y.topRows(1), t ? &t->out_norm : nullptr);
        return head.forward(z, t ? &t->head : nullptr)(0, 0);
    }
    void backward(const Trace& t, T dlog) {
        Mat<T> d(1, 1);
        d(0, 0) = dlog;
        const Mat<T> dz = out_norm.backward(t.out_norm, head.backward(t.head, d));
        Mat<T> dy = Mat<T>::Zero(t.rows, dz.cols());
        dy.row(0) = dz.row(0);
        const Mat<T> dx = encoder.backward(t.enc, dy);
        scale_token.grad += dx.topRows(1);
        tokenizer.backward(t.tok, dx.bottomRows(dx.rows() - 1));
    }
};

// Copies parameter values between networks of identical structure, casting the scalar.
template <class Dst, class Src>
void copy_values(Dst& dst, Src& src) {
    using TD = typename Dst::Scalar;
    std::vector<Param<TD>*> out;
    dst.visit([&](const std::string&, Param<TD>& p) { out.push_back(&p); });
    size_t i = 0;
    src.visit([&](const std::string&, auto& p) { out.at(i++)->value = p.value.template cast<TD>(); });
    if (i != out.size()) throw std::invalid_argument("parameter count mismatch while copying networks");
}

}  // namespace omnifit::nn
