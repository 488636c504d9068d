#pragma once

// From-scratch recurrent mixture-density network.
//
// Per time step the input is the three continuous covariates, the previous
// event's (masked) tick move plus its mask flag, and the embedded
// categoricals; statics are embedded once and repeated along the sequence.
// An L-layer LSTM stack feeds a D-layer dense head whose output parameterizes
// one of the mixture families. Gradients are exact reverse-mode, including
// backpropagation through time and into embedding rows. Dropout is inverted
// (scaling at train time) and applied to non-recurrent connections only.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tickcast/common.hpp"
#include "tickcast/features.hpp"
#include "tickcast/mixtures.hpp"
#include "tickcast/rng.hpp"

namespace tickcast::net {

enum class Activation : int { Tanh = 1, ReLU = 2 };

inline double activate(double x, Activation a) {
    return a == Activation::Tanh ? std::tanh(x) : (x > 0 ? x : 0.0);
}

// Derivative expressed through the post-activation value.
inline double activate_grad_from_output(double out, Activation a) {
    return a == Activation::Tanh ? 1.0 - out * out : (out > 0 ? 1.0 : 0.0);
}

struct NetConfig {
    int lstm_layers = 1;   // L
    int state_size = 32;   // LSTM state per layer
    int dense_layers = 1;  // D
    int dense_width = 32;
    int embed_type = 4;
    int embed_side = 4;
    int embed_hour = 4;
    int embed_pair = 4;
    double keep_prob = 1.0;  // dropout keep-probability, (0, 1]
    Activation embed_activation = Activation::Tanh;
    Activation dense_activation = Activation::ReLU;
    bool project_statics = false;  // large-cardinality branch: dense-project
                                   // statics into the dense head instead of
                                   // repeating embeddings along the sequence
    std::uint64_t seed = 1;

    void validate() const {
        if (lstm_layers < 1 || dense_layers < 1)
            throw ConfigError("need at least one recurrent and one dense layer");
        if (state_size < 1 || dense_width < 1) throw ConfigError("layer sizes must be >= 1");
        if (embed_type < 1 || embed_side < 1 || embed_hour < 1 || embed_pair < 1)
            throw ConfigError("embedding dims must be >= 1");
        if (!(keep_prob > 0.0 && keep_prob <= 1.0))
            throw ConfigError("keep_prob must be in (0, 1]");
    }

    // x_t = [ia, size, price, ar, ar_mask, type emb, side emb (, hour, pair)]
    int input_dim() const {
        return 5 + embed_type + embed_side + (project_statics ? 0 : embed_hour + embed_pair);
    }
    int statics_dim() const { return project_statics ? embed_hour + embed_pair : 0; }
};

// --- parameter containers ------------------------------------------------------

struct Embedding {
    Eigen::MatrixXd w;  // cardinality x dim
    Eigen::VectorXd b;  // dim

    // Activated row lookup: g(W^T onehot(index) + b).
    Eigen::VectorXd forward(int index, Activation act) const {
        if (index < 0 || index >= w.rows())
            throw DomainError("embedding category " + std::to_string(index) +
                              " out of range [0," + std::to_string(w.rows()) + ")");
        Eigen::VectorXd out = w.row(index).transpose() + b;
        for (int i = 0; i < out.size(); ++i) out[i] = activate(out[i], act);
        return out;
    }
};

struct LstmLayer {
    // Gate order along rows: input, forget, candidate, output.
    Eigen::MatrixXd w_x;  // 4S x in
    Eigen::MatrixXd w_h;  // 4S x S
    Eigen::VectorXd b;    // 4S
};

struct DenseLayer {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
};

// One standard LSTM cell step.
inline void lstm_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                      const Eigen::VectorXd& c_prev, const LstmLayer& layer,
                      Eigen::VectorXd& i, Eigen::VectorXd& f, Eigen::VectorXd& g,
                      Eigen::VectorXd& o, Eigen::VectorXd& c, Eigen::VectorXd& tanh_c,
                      Eigen::VectorXd& h) {
    if (!x.allFinite()) throw NumericError("non-finite LSTM input");
    const int S = static_cast<int>(h_prev.size());
    Eigen::VectorXd pre = layer.w_x * x + layer.w_h * h_prev + layer.b;
    i.resize(S);
    f.resize(S);
    g.resize(S);
    o.resize(S);
    for (int s = 0; s < S; ++s) {
        i[s] = mixtures::sigmoid(pre[s]);
        f[s] = mixtures::sigmoid(pre[S + s]);
        g[s] = std::tanh(pre[2 * S + s]);
        o[s] = mixtures::sigmoid(pre[3 * S + s]);
    }
    c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    tanh_c = c.array().tanh();
    h = o.cwiseProduct(tanh_c);
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_step(const Eigen::VectorXd& x,
                                                             const Eigen::VectorXd& h_prev,
                                                             const Eigen::VectorXd& c_prev,
                                                             const LstmLayer& layer) {
    Eigen::VectorXd i, f, g, o, c, tc, h;
    lstm_step(x, h_prev, c_prev, layer, i, f, g, o, c, tc, h);
    return {h, c};
}

struct ParameterStore {
    NetConfig config;
    mixtures::Family family = mixtures::Family::Poisson;
    Embedding emb_type, emb_side, emb_hour, emb_pair;
    DenseLayer statics_proj;  // used only when config.project_statics
    std::vector<LstmLayer> lstm;
    std::vector<DenseLayer> dense;
    mixtures::MixtureHead head;

    static ParameterStore init(const NetConfig& cfg, mixtures::Family family,
                               double target_mean_magnitude) {
        cfg.validate();
        Rng rng(cfg.seed);
        ParameterStore p;
        p.config = cfg;
        p.family = family;

        auto fill = [&rng](Eigen::MatrixXd& m, int rows, int cols, double fan_in) {
            const double bound = 1.0 / std::sqrt(fan_in);
            m.resize(rows, cols);
            for (int c = 0; c < cols; ++c)
                for (int r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
        };
        auto make_embedding = [&](Embedding& e, int card, int dim) {
            fill(e.w, card, dim, static_cast<double>(card));
            e.b = Eigen::VectorXd::Zero(dim);
        };
        make_embedding(p.emb_type, 3, cfg.embed_type);
        make_embedding(p.emb_side, 2, cfg.embed_side);
        make_embedding(p.emb_hour, 24, cfg.embed_hour);
        make_embedding(p.emb_pair, 2, cfg.embed_pair);

        if (cfg.project_statics) {
            fill(p.statics_proj.w, cfg.statics_dim(), 2, 2.0);
            p.statics_proj.b = Eigen::VectorXd::Zero(cfg.statics_dim());
        }

        int in_dim = cfg.input_dim();
        p.lstm.resize(static_cast<std::size_t>(cfg.lstm_layers));
        for (auto& layer : p.lstm) {
            fill(layer.w_x, 4 * cfg.state_size, in_dim, static_cast<double>(in_dim));
            fill(layer.w_h, 4 * cfg.state_size, cfg.state_size,
                 static_cast<double>(cfg.state_size));
            layer.b = Eigen::VectorXd::Zero(4 * cfg.state_size);
            // Forget-gate bias +1 keeps early memory open.
            layer.b.segment(cfg.state_size, cfg.state_size).setConstant(1.0);
            in_dim = cfg.state_size;
        }

        int dense_in = cfg.state_size + cfg.statics_dim();
        p.dense.resize(static_cast<std::size_t>(cfg.dense_layers));
        for (auto& layer : p.dense) {
            fill(layer.w, cfg.dense_width, dense_in, static_cast<double>(dense_in));
            layer.b = Eigen::VectorXd::Zero(cfg.dense_width);
            dense_in = cfg.dense_width;
        }

        p.head.init(family, cfg.dense_width, target_mean_magnitude, rng);
        return p;
    }

    ParameterStore zeros_like() const {
        ParameterStore z = *this;
        auto wipe = [](auto& m) { m.setZero(); };
        wipe(z.emb_type.w);
        wipe(z.emb_type.b);
        wipe(z.emb_side.w);
        wipe(z.emb_side.b);
        wipe(z.emb_hour.w);
        wipe(z.emb_hour.b);
        wipe(z.emb_pair.w);
        wipe(z.emb_pair.b);
        if (config.project_statics) {
            wipe(z.statics_proj.w);
            wipe(z.statics_proj.b);
        }
        for (auto& l : z.lstm) {
            wipe(l.w_x);
            wipe(l.w_h);
            wipe(l.b);
        }
        for (auto& l : z.dense) {
            wipe(l.w);
            wipe(l.b);
        }
        for (auto& w : z.head.w_pi) wipe(w);
        std::fill(z.head.b_pi.begin(), z.head.b_pi.end(), 0.0);
        for (auto& w : z.head.w_rate) wipe(w);
        std::fill(z.head.b_rate.begin(), z.head.b_rate.end(), 0.0);
        for (auto& w : z.head.w_shape) wipe(w);
        std::fill(z.head.b_shape.begin(), z.head.b_shape.end(), 0.0);
        return z;
    }
};

// Fixed-order view over every trainable scalar; shared by the optimizer,
// gradient utilities, and checkpoint serialization.
struct BlockView {
    double* data;
    std::size_t n;
};

inline std::vector<BlockView> parameter_blocks(ParameterStore& p) {
    std::vector<BlockView> v;
    auto add_m = [&v](Eigen::MatrixXd& m) {
        v.push_back({m.data(), static_cast<std::size_t>(m.size())});
    };
    auto add_v = [&v](Eigen::VectorXd& x) {
        v.push_back({x.data(), static_cast<std::size_t>(x.size())});
    };
    for (Embedding* e : {&p.emb_type, &p.emb_side, &p.emb_hour, &p.emb_pair}) {
        add_m(e->w);
        add_v(e->b);
    }
    if (p.config.project_statics) {
        add_m(p.statics_proj.w);
        add_v(p.statics_proj.b);
    }
    for (auto& l : p.lstm) {
        add_m(l.w_x);
        add_m(l.w_h);
        add_v(l.b);
    }
    for (auto& l : p.dense) {
        add_m(l.w);
        add_v(l.b);
    }
    for (auto& w : p.head.w_pi) add_v(w);
    v.push_back({p.head.b_pi.data(), p.head.b_pi.size()});
    for (auto& w : p.head.w_rate) add_v(w);
    v.push_back({p.head.b_rate.data(), p.head.b_rate.size()});
    for (auto& w : p.head.w_shape) add_v(w);
    if (!p.head.b_shape.empty()) v.push_back({p.head.b_shape.data(), p.head.b_shape.size()});
    return v;
}

inline std::size_t parameter_count(ParameterStore& p) {
    std::size_t n = 0;
    for (const auto& b : parameter_blocks(p)) n += b.n;
    return n;
}

inline void scale_parameters(ParameterStore& p, double factor) {
    for (auto& b : parameter_blocks(p))
        for (std::size_t i = 0; i < b.n; ++i) b.data[i] *= factor;
}

inline void zero_parameters(ParameterStore& p) {
    for (auto& b : parameter_blocks(p)) std::fill(b.data, b.data + b.n, 0.0);
}

// dst += src, block-wise. Batch gradients are reduced through this in sample
// order, so a duplicated sample contributes an exactly doubled gradient.
inline void add_parameters(ParameterStore& dst, ParameterStore& src) {
    auto db = parameter_blocks(dst);
    auto sb = parameter_blocks(src);
    for (std::size_t k = 0; k < db.size(); ++k)
        for (std::size_t i = 0; i < db[k].n; ++i) db[k].data[i] += sb[k].data[i];
}

inline double gradient_norm(ParameterStore& g) {
    double sq = 0.0;
    for (auto& b : parameter_blocks(g))
        for (std::size_t i = 0; i < b.n; ++i) sq += b.data[i] * b.data[i];
    return std::sqrt(sq);
}

// --- Adam ------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ParameterStore m, v;  // moment accumulators, parameter-shaped
    long step = 0;
    AdamConfig cfg;

    static AdamState init(const ParameterStore& like, AdamConfig c = {}) {
        AdamState s;
        s.m = like.zeros_like();
        s.v = like.zeros_like();
        s.step = 0;
        s.cfg = c;
        return s;
    }
};

// Standard bias-corrected Adam update.
inline void adam_step(ParameterStore& params, ParameterStore& grads, AdamState& state) {
    ++state.step;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    auto pb = parameter_blocks(params);
    auto gb = parameter_blocks(grads);
    auto mb = parameter_blocks(state.m);
    auto vb = parameter_blocks(state.v);
    for (std::size_t k = 0; k < pb.size(); ++k) {
        for (std::size_t i = 0; i < pb[k].n; ++i) {
            const double g = gb[k].data[i];
            double& m = mb[k].data[i];
            double& v = vb[k].data[i];
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            pb[k].data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

// --- forward / backward ------------------------------------------------------------

inline Eigen::VectorXd dropout_mask(Rng& rng, int n, double keep_prob) {
    Eigen::VectorXd mask(n);
    const double scale = 1.0 / keep_prob;
    for (int i = 0; i < n; ++i) mask[i] = rng.uniform() < keep_prob ? scale : 0.0;
    return mask;
}

namespace detail {

struct LayerCache {
    Eigen::VectorXd in_dropped;  // what w_x actually multiplied
    Eigen::VectorXd mask;        // empty when dropout off
    Eigen::VectorXd i, f, g, o, c, tanh_c, h;
};

struct ForwardCache {
    int m = 0;
    std::vector<std::vector<LayerCache>> steps;  // [t][l]
    std::vector<int> type_idx, side_idx;         // per-step category rows
    int hour_idx = 0, pair_idx = 0;
    std::vector<Eigen::VectorXd> emb_type_out, emb_side_out;  // per step
    Eigen::VectorXd emb_hour_out, emb_pair_out;
    Eigen::VectorXd statics_in, statics_out;                 // projection branch
    std::vector<Eigen::VectorXd> dense_in, dense_mask, dense_out;
    Eigen::VectorXd z;
};

}  // namespace detail

// Pure given (sample, params, mask_seed): dropout masks are drawn from a
// local engine, no state survives the call.
inline detail::ForwardCache forward(const features::Sample& sample, const ParameterStore& p,
                                    bool train_mode, std::uint64_t mask_seed = 0) {
    const NetConfig& cfg = p.config;
    const int m = sample.m();
    const int S = cfg.state_size;
    const bool drop = train_mode && cfg.keep_prob < 1.0;
    Rng mask_rng(derive_seed(cfg.seed, mask_seed));

    detail::ForwardCache cache;
    cache.m = m;
    cache.steps.resize(static_cast<std::size_t>(m));
    cache.type_idx.resize(static_cast<std::size_t>(m));
    cache.side_idx.resize(static_cast<std::size_t>(m));
    cache.emb_type_out.resize(static_cast<std::size_t>(m));
    cache.emb_side_out.resize(static_cast<std::size_t>(m));

    cache.hour_idx = sample.hour;
    cache.pair_idx = sample.pair - 1;
    if (!cfg.project_statics) {
        cache.emb_hour_out = p.emb_hour.forward(cache.hour_idx, cfg.embed_activation);
        cache.emb_pair_out = p.emb_pair.forward(cache.pair_idx, cfg.embed_activation);
    } else {
        cache.statics_in = Eigen::VectorXd(2);
        cache.statics_in << static_cast<double>(sample.hour), static_cast<double>(sample.pair);
        Eigen::VectorXd pre = p.statics_proj.w * cache.statics_in + p.statics_proj.b;
        cache.statics_out.resize(pre.size());
        for (int i = 0; i < pre.size(); ++i)
            cache.statics_out[i] = activate(pre[i], cfg.embed_activation);
    }

    std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(cfg.lstm_layers),
                                   Eigen::VectorXd::Zero(S));
    std::vector<Eigen::VectorXd> c = h;

    for (int t = 0; t < m; ++t) {
        cache.type_idx[t] = static_cast<int>(sample.at(t, features::kColType)) - 1;
        cache.side_idx[t] = static_cast<int>(sample.at(t, features::kColSide)) - 1;
        cache.emb_type_out[t] = p.emb_type.forward(cache.type_idx[t], cfg.embed_activation);
        cache.emb_side_out[t] = p.emb_side.forward(cache.side_idx[t], cfg.embed_activation);

        Eigen::VectorXd x(cfg.input_dim());
        int at = 0;
        x[at++] = sample.at(t, features::kColInterarrival);
        x[at++] = sample.at(t, features::kColSize);
        x[at++] = sample.at(t, features::kColPrice);
        if (t == 0) {
            x[at++] = 0.0;  // no previous event in the window
            x[at++] = 1.0;
        } else {
            x[at++] = sample.ar_moves[static_cast<std::size_t>(t - 1)];
            x[at++] = static_cast<double>(sample.ar_mask[static_cast<std::size_t>(t - 1)]);
        }
        x.segment(at, cfg.embed_type) = cache.emb_type_out[t];
        at += cfg.embed_type;
        x.segment(at, cfg.embed_side) = cache.emb_side_out[t];
        at += cfg.embed_side;
        if (!cfg.project_statics) {
            x.segment(at, cfg.embed_hour) = cache.emb_hour_out;
            at += cfg.embed_hour;
            x.segment(at, cfg.embed_pair) = cache.emb_pair_out;
            at += cfg.embed_pair;
        }

        cache.steps[t].resize(static_cast<std::size_t>(cfg.lstm_layers));
        Eigen::VectorXd layer_in = std::move(x);
        for (int l = 0; l < cfg.lstm_layers; ++l) {
            auto& lc = cache.steps[t][l];
            if (drop) {
                lc.mask = dropout_mask(mask_rng, static_cast<int>(layer_in.size()),
                                       cfg.keep_prob);
                lc.in_dropped = lc.mask.cwiseProduct(layer_in);
            } else {
                lc.in_dropped = layer_in;
            }
            lstm_step(lc.in_dropped, h[l], c[l], p.lstm[l], lc.i, lc.f, lc.g, lc.o, lc.c,
                      lc.tanh_c, lc.h);
            h[l] = lc.h;
            c[l] = lc.c;
            layer_in = lc.h;
        }
    }

    // Dense head on the final hidden state (+ projected statics).
    Eigen::VectorXd cur(S + cfg.statics_dim());
    cur.head(S) = h[static_cast<std::size_t>(cfg.lstm_layers - 1)];
    if (cfg.project_statics) cur.tail(cfg.statics_dim()) = cache.statics_out;

    cache.dense_in.resize(p.dense.size());
    cache.dense_mask.resize(p.dense.size());
    cache.dense_out.resize(p.dense.size());
    for (std::size_t d = 0; d < p.dense.size(); ++d) {
        if (drop) {
            cache.dense_mask[d] =
                dropout_mask(mask_rng, static_cast<int>(cur.size()), cfg.keep_prob);
            cache.dense_in[d] = cache.dense_mask[d].cwiseProduct(cur);
        } else {
            cache.dense_in[d] = cur;
        }
        Eigen::VectorXd pre = p.dense[d].w * cache.dense_in[d] + p.dense[d].b;
        cache.dense_out[d].resize(pre.size());
        for (int i = 0; i < pre.size(); ++i)
            cache.dense_out[d][i] = activate(pre[i], cfg.dense_activation);
        cur = cache.dense_out[d];
    }
    cache.z = cur;
    return cache;
}

// Reverse pass from dNLL/dz; accumulates into `grads` (head gradients from
// the mixtures module are folded in by the caller via head.backward).
inline void backward(const features::Sample& sample, const ParameterStore& p,
                     const detail::ForwardCache& cache, const Eigen::VectorXd& dz,
                     ParameterStore& grads) {
    const NetConfig& cfg = p.config;
    const int m = cache.m;
    const int S = cfg.state_size;
    const int L = cfg.lstm_layers;

    // Dense chain, top down.
    Eigen::VectorXd dout = dz;
    for (int d = static_cast<int>(p.dense.size()) - 1; d >= 0; --d) {
        const auto& out = cache.dense_out[d];
        Eigen::VectorXd dpre(out.size());
        for (int i = 0; i < out.size(); ++i)
            dpre[i] = dout[i] * activate_grad_from_output(out[i], cfg.dense_activation);
        grads.dense[d].w.noalias() += dpre * cache.dense_in[d].transpose();
        grads.dense[d].b += dpre;
        Eigen::VectorXd din = p.dense[d].w.transpose() * dpre;
        if (cache.dense_mask[d].size() > 0) din = cache.dense_mask[d].cwiseProduct(din);
        dout = std::move(din);
    }

    Eigen::VectorXd d_h_final = dout.head(S);
    if (cfg.project_statics) {
        Eigen::VectorXd dproj = dout.tail(cfg.statics_dim());
        Eigen::VectorXd dpre(dproj.size());
        for (int i = 0; i < dproj.size(); ++i)
            dpre[i] = dproj[i] *
                      activate_grad_from_output(cache.statics_out[i], cfg.embed_activation);
        grads.statics_proj.w.noalias() += dpre * cache.statics_in.transpose();
        grads.statics_proj.b += dpre;
    }

    // BPTT.
    std::vector<Eigen::VectorXd> dh_rec(static_cast<std::size_t>(L), Eigen::VectorXd::Zero(S));
    std::vector<Eigen::VectorXd> dc_rec = dh_rec;
    dh_rec[static_cast<std::size_t>(L - 1)] = d_h_final;

    auto embed_backward = [&](const Embedding& emb, Embedding& gemb, int row,
                              const Eigen::VectorXd& out, const Eigen::VectorXd& dvec) {
        for (int i = 0; i < dvec.size(); ++i) {
            const double d = dvec[i] * activate_grad_from_output(out[i], cfg.embed_activation);
            gemb.w(row, i) += d;
            gemb.b[i] += d;
        }
    };

    Eigen::VectorXd d_emb_hour, d_emb_pair;
    if (!cfg.project_statics) {
        d_emb_hour = Eigen::VectorXd::Zero(cfg.embed_hour);
        d_emb_pair = Eigen::VectorXd::Zero(cfg.embed_pair);
    }

    for (int t = m - 1; t >= 0; --t) {
        Eigen::VectorXd d_from_above;  // gradient arriving at layer l's output
        for (int l = L - 1; l >= 0; --l) {
            const auto& lc = cache.steps[t][l];
            Eigen::VectorXd dh = dh_rec[l];
            if (l < L - 1) dh += d_from_above;

            const Eigen::VectorXd& c_prev =
                t > 0 ? cache.steps[t - 1][l].c : Eigen::VectorXd::Zero(S).eval();
            const Eigen::VectorXd& h_prev =
                t > 0 ? cache.steps[t - 1][l].h : Eigen::VectorXd::Zero(S).eval();

            Eigen::VectorXd do_ = dh.cwiseProduct(lc.tanh_c);
            Eigen::VectorXd dc = dh.cwiseProduct(lc.o).cwiseProduct(
                                     (1.0 - lc.tanh_c.array().square()).matrix()) +
                                 dc_rec[l];
            Eigen::VectorXd di = dc.cwiseProduct(lc.g);
            Eigen::VectorXd dg = dc.cwiseProduct(lc.i);
            Eigen::VectorXd df = dc.cwiseProduct(c_prev);
            dc_rec[l] = dc.cwiseProduct(lc.f);

            Eigen::VectorXd gate_grad(4 * S);
            for (int s = 0; s < S; ++s) {
                gate_grad[s] = di[s] * lc.i[s] * (1.0 - lc.i[s]);
                gate_grad[S + s] = df[s] * lc.f[s] * (1.0 - lc.f[s]);
                gate_grad[2 * S + s] = dg[s] * (1.0 - lc.g[s] * lc.g[s]);
                gate_grad[3 * S + s] = do_[s] * lc.o[s] * (1.0 - lc.o[s]);
            }

            grads.lstm[l].w_x.noalias() += gate_grad * lc.in_dropped.transpose();
            grads.lstm[l].w_h.noalias() += gate_grad * h_prev.transpose();
            grads.lstm[l].b += gate_grad;
            dh_rec[l] = p.lstm[l].w_h.transpose() * gate_grad;

            Eigen::VectorXd din = p.lstm[l].w_x.transpose() * gate_grad;
            if (lc.mask.size() > 0) din = lc.mask.cwiseProduct(din);
            d_from_above = std::move(din);
        }

        // d_from_above is now dx_t; route the embedded segments.
        int at = 5;
        embed_backward(p.emb_type, grads.emb_type, cache.type_idx[t], cache.emb_type_out[t],
                       d_from_above.segment(at, cfg.embed_type));
        at += cfg.embed_type;
        embed_backward(p.emb_side, grads.emb_side, cache.side_idx[t], cache.emb_side_out[t],
                       d_from_above.segment(at, cfg.embed_side));
        at += cfg.embed_side;
        if (!cfg.project_statics) {
            d_emb_hour += d_from_above.segment(at, cfg.embed_hour);
            at += cfg.embed_hour;
            d_emb_pair += d_from_above.segment(at, cfg.embed_pair);
        }
    }

    if (!cfg.project_statics) {
        embed_backward(p.emb_hour, grads.emb_hour, cache.hour_idx, cache.emb_hour_out,
                       d_emb_hour);
        embed_backward(p.emb_pair, grads.emb_pair, cache.pair_idx, cache.emb_pair_out,
                       d_emb_pair);
    }
}

// Forward + head loss + full backward for one sample; accumulates into grads.
inline double sample_loss_and_grad(const features::Sample& sample, const ParameterStore& p,
                                   bool train_mode, std::uint64_t mask_seed,
                                   ParameterStore& grads) {
    const auto cache = forward(sample, p, train_mode, mask_seed);
    auto [nll, hg] = p.head.backward(sample.target, cache.z);
    for (int k = 0; k < p.head.K(); ++k) {
        grads.head.w_pi[k] += hg.w_pi[k];
        grads.head.b_pi[k] += hg.b_pi[k];
    }
    for (int i = 0; i < 2; ++i) {
        grads.head.w_rate[i] += hg.w_rate[i];
        grads.head.b_rate[i] += hg.b_rate[i];
        if (p.family == mixtures::Family::NegBinomial) {
            grads.head.w_shape[i] += hg.w_shape[i];
            grads.head.b_shape[i] += hg.b_shape[i];
        }
    }
    backward(sample, p, cache, hg.z, grads);
    return nll;
}

inline double sample_nll(const features::Sample& sample, const ParameterStore& p) {
    return p.head.nll(sample.target, forward(sample, p, false).z);
}

inline mixtures::MixtureForecast predict(const features::Sample& sample,
                                         const ParameterStore& p) {
    return p.head.forecast(forward(sample, p, false).z);
}

inline double mean_nll(std::span<const features::Sample> samples, const ParameterStore& p) {
    double sum = 0.0;
    for (const auto& s : samples) sum += sample_nll(s, p);
    return sum / static_cast<double>(samples.size());
}

// --- training ------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int max_epochs = 50;
    // Consecutive non-improving validation evaluations tolerated before
    // stopping; 0 stops right after the first evaluation.
    int patience = 5;
    double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    double wall_seconds = 0.0;
};

// Full trainer state, checkpointable for bit-exact resume.
struct TrainerState {
    ParameterStore current;
    ParameterStore best;
    AdamState adam;
    std::string rng_state;
    int epoch = 0;  // completed epochs
    double best_val_nll = std::numeric_limits<double>::infinity();
    int evals_since_improve = 0;
    bool stopped = false;
    std::vector<EpochStats> history;
};

inline TrainerState make_trainer(const NetConfig& net_cfg, mixtures::Family family,
                                 const TrainConfig& train_cfg,
                                 std::span<const features::Sample> train) {
    double mean_mag = 0.0;
    long n = 0;
    for (const auto& s : train) {
        mean_mag += static_cast<double>(std::labs(s.target));
        ++n;
    }
    mean_mag = n > 0 ? mean_mag / static_cast<double>(n) : 1.0;

    TrainerState st;
    st.current = ParameterStore::init(net_cfg, family, mean_mag);
    st.best = st.current;
    st.adam = AdamState::init(st.current, AdamConfig{train_cfg.lr, 0.9, 0.999, 1e-8});
    st.rng_state = Rng(train_cfg.seed).serialize_state();
    return st;
}

// Runs up to `epochs` additional epochs (or until early stop).
inline void train_epochs(TrainerState& st, std::span<const features::Sample> train,
                         std::span<const features::Sample> validation,
                         const TrainConfig& cfg, int epochs) {
    if (train.empty() || validation.empty())
        throw ConfigError("training requires non-empty train and validation splits");
    Rng rng(0);
    rng.restore_state(st.rng_state);

    std::vector<std::size_t> order(train.size());

    for (int e = 0; e < epochs && !st.stopped; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        // Fresh Fisher-Yates each epoch: the permutation depends only on the
        // engine stream position, so checkpoint resume replays identically.
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_index(i);
            std::swap(order[i - 1], order[j]);
        }

        double epoch_sum = 0.0;
        std::size_t batch_index = 0;
        ParameterStore grads = st.current.zeros_like();
        ParameterStore scratch = st.current.zeros_like();
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            zero_parameters(grads);
            double batch_sum = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::uint64_t mask_seed = rng.engine()();
                zero_parameters(scratch);
                batch_sum += sample_loss_and_grad(train[order[k]], st.current, true,
                                                  mask_seed, scratch);
                add_parameters(grads, scratch);
            }
            const double batch_nll = batch_sum / static_cast<double>(end - start);
            if (!std::isfinite(batch_nll))
                throw NumericError("training diverged: non-finite NLL in batch " +
                                   std::to_string(batch_index) + " of epoch " +
                                   std::to_string(st.epoch + 1));
            epoch_sum += batch_sum;
            scale_parameters(grads, 1.0 / static_cast<double>(end - start));
            if (cfg.clip_norm > 0) {
                const double norm = gradient_norm(grads);
                if (norm > cfg.clip_norm) scale_parameters(grads, cfg.clip_norm / norm);
            }
            adam_step(st.current, grads, st.adam);
        }

        ++st.epoch;
        const double train_nll = epoch_sum / static_cast<double>(train.size());
        const double val_nll = mean_nll(validation, st.current);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        st.history.push_back({st.epoch, train_nll, val_nll, wall});
        if (cfg.verbose)
            std::cerr << "[tickcast] epoch " << st.epoch << " train NLL " << train_nll
                      << " val NLL " << val_nll << "\n";

        if (val_nll < st.best_val_nll) {
            st.best_val_nll = val_nll;
            st.best = st.current;
            st.evals_since_improve = 0;
        } else {
            ++st.evals_since_improve;
        }
        if (st.evals_since_improve >= cfg.patience) st.stopped = true;
        if (st.epoch >= cfg.max_epochs) st.stopped = true;
    }
    st.rng_state = rng.serialize_state();
}

inline TrainerState train(std::span<const features::Sample> train_set,
                          std::span<const features::Sample> validation,
                          const NetConfig& net_cfg, mixtures::Family family,
                          const TrainConfig& train_cfg) {
    TrainerState st = make_trainer(net_cfg, family, train_cfg, train_set);
    train_epochs(st, train_set, validation, train_cfg, train_cfg.max_epochs);
    return st;
}

// --- checkpoint file -------------------------------------------------------------------

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'T', 'K', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_params(std::ostream& out, ParameterStore& p) {
    for (const auto& b : parameter_blocks(p))
        out.write(reinterpret_cast<const char*>(b.data),
                  static_cast<std::streamsize>(b.n * sizeof(double)));
}

inline void read_params(std::istream& in, ParameterStore& p) {
    for (auto& b : parameter_blocks(p)) {
        in.read(reinterpret_cast<char*>(b.data),
                static_cast<std::streamsize>(b.n * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint parameters");
    }
}

inline void write_string(std::ostream& out, const std::string& s) {
    const std::uint64_t n = s.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(s.data(), static_cast<std::streamsize>(n));
}

inline std::string read_string(std::istream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("truncated checkpoint string");
    return s;
}

inline void write_net_config(std::ostream& out, const NetConfig& c) {
    features::detail::write_pod(out, static_cast<std::int32_t>(c.lstm_layers));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.state_size));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.dense_layers));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.dense_width));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.embed_type));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.embed_side));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.embed_hour));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.embed_pair));
    features::detail::write_pod(out, c.keep_prob);
    features::detail::write_pod(out, static_cast<std::int32_t>(c.embed_activation));
    features::detail::write_pod(out, static_cast<std::int32_t>(c.dense_activation));
    features::detail::write_pod(out, static_cast<std::uint8_t>(c.project_statics));
    features::detail::write_pod(out, c.seed);
}

inline NetConfig read_net_config(std::istream& in) {
    using features::detail::read_pod;
    NetConfig c;
    c.lstm_layers = read_pod<std::int32_t>(in);
    c.state_size = read_pod<std::int32_t>(in);
    c.dense_layers = read_pod<std::int32_t>(in);
    c.dense_width = read_pod<std::int32_t>(in);
    c.embed_type = read_pod<std::int32_t>(in);
    c.embed_side = read_pod<std::int32_t>(in);
    c.embed_hour = read_pod<std::int32_t>(in);
    c.embed_pair = read_pod<std::int32_t>(in);
    c.keep_prob = read_pod<double>(in);
    c.embed_activation = static_cast<Activation>(read_pod<std::int32_t>(in));
    c.dense_activation = static_cast<Activation>(read_pod<std::int32_t>(in));
    c.project_statics = read_pod<std::uint8_t>(in) != 0;
    c.seed = read_pod<std::uint64_t>(in);
    return c;
}

}  // namespace detail

struct Checkpoint {
    TrainerState trainer;
    features::NormalizationStats stats;
    std::uint64_t config_hash = 0;
};

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    using namespace detail;
    using features::detail::write_pod;
    out.write(kCheckpointMagic, 4);
    write_pod(out, kCheckpointVersion);
    char version_str[16] = {};
    std::snprintf(version_str, sizeof(version_str), "%s", std::string(kToolVersion).c_str());
    out.write(version_str, sizeof(version_str));
    write_pod(out, ck.config_hash);
    write_net_config(out, ck.trainer.current.config);
    write_pod(out, static_cast<std::int32_t>(ck.trainer.current.family));
    for (const auto& st : {ck.stats.interarrival, ck.stats.size, ck.stats.price,
                           ck.stats.ar_move}) {
        write_pod(out, st.mean);
        write_pod(out, st.sd);
    }
    write_pod(out, static_cast<std::int32_t>(ck.trainer.epoch));
    write_pod(out, ck.trainer.best_val_nll);
    write_pod(out, static_cast<std::int32_t>(ck.trainer.evals_since_improve));
    write_pod(out, static_cast<std::uint8_t>(ck.trainer.stopped));
    write_pod(out, ck.trainer.adam.step);
    write_pod(out, ck.trainer.adam.cfg.lr);
    write_pod(out, ck.trainer.adam.cfg.beta1);
    write_pod(out, ck.trainer.adam.cfg.beta2);
    write_pod(out, ck.trainer.adam.cfg.eps);
    write_string(out, ck.trainer.rng_state);
    write_pod(out, static_cast<std::uint64_t>(ck.trainer.history.size()));
    for (const auto& h : ck.trainer.history) {
        write_pod(out, static_cast<std::int32_t>(h.epoch));
        write_pod(out, h.train_nll);
        write_pod(out, h.val_nll);
        // Wall time stays out of the checkpoint so reruns with the same seed
        // produce byte-identical files; the training log CSV carries it.
        write_pod(out, 0.0);
    }
    write_params(out, ck.trainer.current);
    write_params(out, ck.trainer.best);
    write_params(out, ck.trainer.adam.m);
    write_params(out, ck.trainer.adam.v);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    using namespace detail;
    using features::detail::read_pod;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("not a tickcast checkpoint: " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    char version_str[16];
    in.read(version_str, sizeof(version_str));

    Checkpoint ck;
    ck.config_hash = read_pod<std::uint64_t>(in);
    const NetConfig cfg = read_net_config(in);
    const auto family = static_cast<mixtures::Family>(read_pod<std::int32_t>(in));
    for (auto* st : {&ck.stats.interarrival, &ck.stats.size, &ck.stats.price,
                     &ck.stats.ar_move}) {
        st->mean = read_pod<double>(in);
        st->sd = read_pod<double>(in);
    }
    ck.trainer.epoch = read_pod<std::int32_t>(in);
    ck.trainer.best_val_nll = read_pod<double>(in);
    ck.trainer.evals_since_improve = read_pod<std::int32_t>(in);
    ck.trainer.stopped = read_pod<std::uint8_t>(in) != 0;
    const long adam_steps = read_pod<long>(in);
    AdamConfig acfg;
    acfg.lr = read_pod<double>(in);
    acfg.beta1 = read_pod<double>(in);
    acfg.beta2 = read_pod<double>(in);
    acfg.eps = read_pod<double>(in);
    ck.trainer.rng_state = read_string(in);
    const auto n_hist = read_pod<std::uint64_t>(in);
    ck.trainer.history.resize(n_hist);
    for (auto& h : ck.trainer.history) {
        h.epoch = read_pod<std::int32_t>(in);
        h.train_nll = read_pod<double>(in);
        h.val_nll = read_pod<double>(in);
        h.wall_seconds = read_pod<double>(in);
    }

    ck.trainer.current = ParameterStore::init(cfg, family, 1.0);
    read_params(in, ck.trainer.current);
    ck.trainer.best = ck.trainer.current;
    read_params(in, ck.trainer.best);
    ck.trainer.adam = AdamState::init(ck.trainer.current, acfg);
    ck.trainer.adam.step = adam_steps;
    read_params(in, ck.trainer.adam.m);
    read_params(in, ck.trainer.adam.v);
    return ck;
}

}  // namespace tickcast::net
