#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/nn_ops.hpp"
#include "vad/pair_types.hpp"
#include "vad/parallel.hpp"
#include "vad/patch_grid.hpp"
#include "vad/rng.hpp"

namespace vad {

// ---- preprocessing ----------------------------------------------------------

struct PreprocessParams {
    double flow_max = 8.0; // px/frame mapped to the top of the motion-plane range
};

// Value mapping only: grayscale [0,255] -> [-1,1], motion planes
// clamp(x/f_max, 0, 1) -> [-1,1].
inline PatchTensor preprocess(const VideoPatch& patch, const PreprocessParams& params = {}) {
    PatchTensor out;
    float inv_fmax = static_cast<float>(1.0 / params.flow_max);
    for (int y = 0; y < VideoPatch::kH; ++y)
        for (int x = 0; x < VideoPatch::kW; ++x)
            out.at(0, y, x) = patch.at(0, y, x) / 127.5f - 1.0f;
    for (int c = 1; c < VideoPatch::kC; ++c)
        for (int y = 0; y < VideoPatch::kH; ++y)
            for (int x = 0; x < VideoPatch::kW; ++x) {
                float m = std::clamp(patch.at(c, y, x) * inv_fmax, 0.0f, 1.0f);
                out.at(c, y, x) = m * 2.0f - 1.0f;
            }
    return out;
}

struct AugmentRanges {
    double flip_prob = 0.5;
    double scale_min = 0.7;
    double scale_max = 1.0;
    double brightness = 0.2; // jitter amplitude for plane 0
};

// One draw of augmentation parameters; the two patches of a pair share it.
struct AugmentParams {
    bool flip = false;
    double scale = 1.0;
    double brightness = 0.0;

    static AugmentParams draw(Rng& rng, const AugmentRanges& ranges = {}) {
        AugmentParams a;
        a.flip = rng.bernoulli(ranges.flip_prob);
        a.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
        a.brightness = rng.uniform(-ranges.brightness, ranges.brightness);
        return a;
    }
};

namespace detail {

inline float sample_plane(const PatchTensor& t, int c, double y, double x) {
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    double fx = x - x0, fy = y - y0;
    auto px = [&](int yy, int xx) {
        yy = std::clamp(yy, 0, VideoPatch::kH - 1);
        xx = std::clamp(xx, 0, VideoPatch::kW - 1);
        return static_cast<double>(t.at(c, yy, xx));
    };
    double a = px(y0, x0) + fx * (px(y0, x0 + 1) - px(y0, x0));
    double b = px(y0 + 1, x0) + fx * (px(y0 + 1, x0 + 1) - px(y0 + 1, x0));
    return static_cast<float>(a + fy * (b - a));
}

} // namespace detail

// Geometric + photometric augmentation on a preprocessed tensor: left-right
// flip and central scaling apply to all planes, brightness jitter to the
// grayscale plane only (clamped back into [-1,1]).
inline void apply_augment(PatchTensor& t, const AugmentParams& params) {
    if (params.flip) {
        for (int c = 0; c < VideoPatch::kC; ++c)
            for (int y = 0; y < VideoPatch::kH; ++y)
                for (int x = 0; x < VideoPatch::kW / 2; ++x)
                    std::swap(t.at(c, y, x), t.at(c, y, VideoPatch::kW - 1 - x));
    }
    if (params.scale != 1.0) {
        PatchTensor src = t;
        double cy = (VideoPatch::kH - 1) * 0.5, cx = (VideoPatch::kW - 1) * 0.5;
        for (int c = 0; c < VideoPatch::kC; ++c)
            for (int y = 0; y < VideoPatch::kH; ++y)
                for (int x = 0; x < VideoPatch::kW; ++x)
                    t.at(c, y, x) = detail::sample_plane(src, c, cy + (y - cy) * params.scale,
                                                         cx + (x - cx) * params.scale);
    }
    if (params.brightness != 0.0) {
        for (int y = 0; y < VideoPatch::kH; ++y)
            for (int x = 0; x < VideoPatch::kW; ++x)
                t.at(0, y, x) = std::clamp(t.at(0, y, x) + static_cast<float>(params.brightness),
                                           -1.0f, 1.0f);
    }
}

// Spec-shaped entry point: map to [-1,1] and optionally augment with draws
// from rng (flip, central scale, brightness jitter, in that order).
inline PatchTensor preprocess(const VideoPatch& patch, bool augment, Rng& rng,
                              const PreprocessParams& params = {}, const AugmentRanges& ranges = {}) {
    PatchTensor out = preprocess(patch, params);
    if (augment) apply_augment(out, AugmentParams::draw(rng, ranges));
    return out;
}

// ---- architecture and model --------------------------------------------------

// Twin conv tails (weights tied by construction), elementwise subtraction,
// fc classification head. Every conv is 3x3 stride 1 same-padding followed by
// relu then batchnorm; 2x2 max-pool after conv2 and conv4.
struct Architecture {
    std::array<int, 5> conv_channels{32, 32, 64, 64, 128};
    int fc1_width = 512;
    double dropout_rate = 0.3;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    static constexpr int kInputC = VideoPatch::kC;
    static constexpr int kInputH = VideoPatch::kH;
    static constexpr int kInputW = VideoPatch::kW;

    int embedding_dim() const { return conv_channels[4] * 5 * 5; }

    bool operator==(const Architecture& o) const {
        return conv_channels == o.conv_channels && fc1_width == o.fc1_width &&
               dropout_rate == o.dropout_rate && bn_epsilon == o.bn_epsilon &&
               bn_momentum == o.bn_momentum;
    }
};

struct ParamGroup {
    std::string name;
    nn::Vec* values;
};

struct SiameseModel {
    Architecture arch;
    std::array<nn::Conv3x3, 5> conv;
    std::array<nn::BatchNorm, 5> bn;
    nn::Fc fc1, fc2;

    double best_val_pauc = 0.0;
    std::uint32_t iterations = 0;

    std::vector<ParamGroup> trainable() {
        std::vector<ParamGroup> g;
        for (int k = 0; k < 5; ++k) {
            std::string tag = "conv" + std::to_string(k + 1);
            g.push_back({tag + ".weight", &conv[static_cast<std::size_t>(k)].weight});
            g.push_back({tag + ".bias", &conv[static_cast<std::size_t>(k)].bias});
            std::string bt = "bn" + std::to_string(k + 1);
            g.push_back({bt + ".gamma", &bn[static_cast<std::size_t>(k)].gamma});
            g.push_back({bt + ".beta", &bn[static_cast<std::size_t>(k)].beta});
        }
        g.push_back({"fc1.weight", &fc1.weight});
        g.push_back({"fc1.bias", &fc1.bias});
        g.push_back({"fc2.weight", &fc2.weight});
        g.push_back({"fc2.bias", &fc2.bias});
        return g;
    }
};

// Xavier-Glorot normal initialization; biases zero, batchnorm identity.
inline SiameseModel init_model(const Architecture& arch, std::uint64_t seed) {
    SiameseModel m;
    m.arch = arch;
    Rng rng(seed);
    auto xavier = [&rng](nn::Vec& w, int fan_in, int fan_out) {
        double stddev = std::sqrt(2.0 / (fan_in + fan_out));
        for (auto& v : w) v = rng.normal(0.0, stddev);
    };
    int in_c = Architecture::kInputC;
    for (int k = 0; k < 5; ++k) {
        int out_c = arch.conv_channels[static_cast<std::size_t>(k)];
        auto& c = m.conv[static_cast<std::size_t>(k)];
        c.in_c = in_c;
        c.out_c = out_c;
        c.weight.assign(static_cast<std::size_t>(out_c) * in_c * 9, 0.0);
        c.bias.assign(static_cast<std::size_t>(out_c), 0.0);
        xavier(c.weight, in_c * 9, out_c * 9);
        auto& b = m.bn[static_cast<std::size_t>(k)];
        b.channels = out_c;
        b.epsilon = arch.bn_epsilon;
        b.momentum = arch.bn_momentum;
        b.gamma.assign(static_cast<std::size_t>(out_c), 1.0);
        b.beta.assign(static_cast<std::size_t>(out_c), 0.0);
        b.running_mean.assign(static_cast<std::size_t>(out_c), 0.0);
        b.running_var.assign(static_cast<std::size_t>(out_c), 1.0);
        in_c = out_c;
    }
    m.fc1.in_dim = arch.embedding_dim();
    m.fc1.out_dim = arch.fc1_width;
    m.fc1.weight.assign(static_cast<std::size_t>(m.fc1.in_dim) * m.fc1.out_dim, 0.0);
    m.fc1.bias.assign(static_cast<std::size_t>(m.fc1.out_dim), 0.0);
    xavier(m.fc1.weight, m.fc1.in_dim, m.fc1.out_dim);
    m.fc2.in_dim = arch.fc1_width;
    m.fc2.out_dim = 2;
    m.fc2.weight.assign(static_cast<std::size_t>(m.fc2.in_dim) * 2, 0.0);
    m.fc2.bias.assign(2, 0.0);
    xavier(m.fc2.weight, m.fc2.in_dim, 2);
    return m;
}

// ---- forward / backward -------------------------------------------------------

namespace detail {

// Cached activations of one tail pass over a batch of patch instances.
struct TailActivations {
    int n = 0;
    nn::Vec x0;                          // [n][13][400]
    std::array<nn::Vec, 5> relu_out;     // post-relu, pre-bn
    std::array<nn::Vec, 5> bn_out;       // block outputs
    nn::Vec pool1, pool2;
    std::vector<std::uint8_t> arg1, arg2;

    const nn::Vec& embeddings() const { return bn_out[4]; } // [n][3200]
};

inline void check_finite_logits(const nn::Vec& logits) {
    for (double v : logits)
        if (!std::isfinite(v)) raise(ErrorKind::Numeric, "non-finite activation in fc2");
}

template <typename ModelT>
inline void tail_forward_impl(ModelT& m, const nn::Vec& x, int n, bool train, TailActivations& ws) {
    ws.n = n;
    ws.x0 = x;
    nn::Vec tmp;
    auto block = [&](int k, const nn::Vec& in, int h, int w) {
        nn::conv_forward(in, n, h, w, m.conv[static_cast<std::size_t>(k)], tmp);
        nn::relu_forward(tmp, ws.relu_out[static_cast<std::size_t>(k)]);
        nn::batchnorm_forward(ws.relu_out[static_cast<std::size_t>(k)], n, h * w,
                              const_cast<nn::BatchNorm&>(m.bn[static_cast<std::size_t>(k)]), train,
                              ws.bn_out[static_cast<std::size_t>(k)],
                              "bn" + std::to_string(k + 1));
    };
    block(0, ws.x0, 20, 20);
    block(1, ws.bn_out[0], 20, 20);
    nn::maxpool_forward(ws.bn_out[1], n, m.arch.conv_channels[1], 20, 20, ws.pool1, ws.arg1);
    block(2, ws.pool1, 10, 10);
    block(3, ws.bn_out[2], 10, 10);
    nn::maxpool_forward(ws.bn_out[3], n, m.arch.conv_channels[3], 10, 10, ws.pool2, ws.arg2);
    block(4, ws.pool2, 5, 5);
}

inline void tail_forward_train(SiameseModel& m, const nn::Vec& x, int n, TailActivations& ws) {
    tail_forward_impl(m, x, n, true, ws);
}

inline void tail_forward_eval(const SiameseModel& m, const nn::Vec& x, int n, TailActivations& ws) {
    tail_forward_impl(m, x, n, false, ws);
}

struct HeadActivations {
    int n = 0;
    nn::Vec diff;      // [n][3200]
    nn::Vec fc1_relu;  // [n][fc1]
    nn::Vec head_in;   // after dropout (or alias of fc1_relu when off)
    std::vector<std::uint8_t> keep_mask;
    bool dropout_on = false;
    double keep_prob = 1.0;
    nn::Vec logits; // [n][2]
    nn::Vec p;      // [n], probability of the dissimilar class
};

inline void softmax_dissimilar(const nn::Vec& logits, int n, nn::Vec& p) {
    p.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double z0 = logits[2 * static_cast<std::size_t>(i)];
        double z1 = logits[2 * static_cast<std::size_t>(i) + 1];
        double mz = std::max(z0, z1);
        double e0 = std::exp(z0 - mz), e1 = std::exp(z1 - mz);
        p[static_cast<std::size_t>(i)] = e1 / (e0 + e1);
    }
}

inline void head_forward(const SiameseModel& m, nn::Vec diff, int n, bool dropout_on, Rng* drop_rng,
                         HeadActivations& ws) {
    ws.n = n;
    ws.diff = std::move(diff);
    nn::Vec pre;
    nn::fc_forward(ws.diff, n, m.fc1, pre);
    nn::relu_forward(pre, ws.fc1_relu);
    ws.dropout_on = dropout_on && m.arch.dropout_rate > 0.0;
    ws.keep_prob = 1.0 - m.arch.dropout_rate;
    if (ws.dropout_on) {
        ws.keep_mask.resize(ws.fc1_relu.size());
        for (std::size_t i = 0; i < ws.keep_mask.size(); ++i)
            ws.keep_mask[i] = drop_rng->bernoulli(ws.keep_prob) ? 1 : 0;
        ws.head_in.resize(ws.fc1_relu.size());
        double inv_keep = 1.0 / ws.keep_prob;
        for (std::size_t i = 0; i < ws.head_in.size(); ++i)
            ws.head_in[i] = ws.keep_mask[i] ? ws.fc1_relu[i] * inv_keep : 0.0;
    } else {
        ws.head_in = ws.fc1_relu;
    }
    nn::fc_forward(ws.head_in, n, m.fc2, ws.logits);
    check_finite_logits(ws.logits);
    softmax_dissimilar(ws.logits, n, ws.p);
}

} // namespace detail

// ---- loss ----------------------------------------------------------------------

struct LossParams {
    double gamma = 0.2;           // dissimilar-class weight
    double label_smoothing = 0.1; // smoothed target inside the loss
};

inline double pair_loss(double p, int y, const LossParams& lp) {
    double t = y == 1 ? 1.0 - lp.label_smoothing : lp.label_smoothing;
    double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return -lp.gamma * t * std::log(pc) - (1.0 - t) * std::log(1.0 - pc);
}

// Batch loss is the mean of per-example losses.
inline double batch_loss(std::span<const double> p, std::span<const std::uint8_t> y,
                         const LossParams& lp) {
    if (p.size() != y.size() || p.empty()) raise(ErrorKind::InvalidInput, "loss: bad batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += pair_loss(p[i], y[i], lp);
    return sum / static_cast<double>(p.size());
}

namespace detail {

// d(mean loss)/dlogits: dz1 = (-gamma*t*(1-p) + (1-t)*p)/n, dz0 = -dz1.
inline void loss_backward(const nn::Vec& p, const std::vector<std::uint8_t>& y,
                          const LossParams& lp, nn::Vec& dlogits) {
    std::size_t n = p.size();
    dlogits.assign(2 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double pi = p[i];
        if (pi <= 1e-12 || pi >= 1.0 - 1e-12) continue; // clamped region is flat
        double t = y[i] == 1 ? 1.0 - lp.label_smoothing : lp.label_smoothing;
        double dz1 = (-lp.gamma * t * (1.0 - pi) + (1.0 - t) * pi) / static_cast<double>(n);
        dlogits[2 * i] = -dz1;
        dlogits[2 * i + 1] = dz1;
    }
}

} // namespace detail

// Gradients aligned with SiameseModel::trainable() group order.
struct Gradients {
    std::vector<nn::Vec> groups;

    void add(const Gradients& o) {
        for (std::size_t g = 0; g < groups.size(); ++g)
            for (std::size_t j = 0; j < groups[g].size(); ++j) groups[g][j] += o.groups[g][j];
    }
};

namespace detail {

// Backward through one tail pass; accumulates into the 20 tail groups of
// grads (conv/bn interleaved as in SiameseModel::trainable()).
inline void tail_backward(const SiameseModel& m, const TailActivations& ws, const nn::Vec& d_emb,
                          Gradients& grads) {
    int n = ws.n;
    nn::Vec d = d_emb;
    nn::Vec dx, dg, db, dw;
    auto block_back = [&](int k, const nn::Vec& input, int h, int w, nn::Vec& d_input) {
        std::size_t gi = static_cast<std::size_t>(4 * k);
        nn::batchnorm_backward(ws.relu_out[static_cast<std::size_t>(k)], d, n, h * w,
                               m.bn[static_cast<std::size_t>(k)], dx, dg, db);
        for (std::size_t j = 0; j < dg.size(); ++j) grads.groups[gi + 2][j] += dg[j];
        for (std::size_t j = 0; j < db.size(); ++j) grads.groups[gi + 3][j] += db[j];
        nn::relu_backward(ws.relu_out[static_cast<std::size_t>(k)], dx);
        nn::Vec dcw, dcb;
        nn::conv_backward(input, dx, n, h, w, m.conv[static_cast<std::size_t>(k)], d_input, dcw, dcb);
        for (std::size_t j = 0; j < dcw.size(); ++j) grads.groups[gi][j] += dcw[j];
        for (std::size_t j = 0; j < dcb.size(); ++j) grads.groups[gi + 1][j] += dcb[j];
    };
    nn::Vec d_pool2, d_b3, d_pool1, d_b1, d_x0;
    block_back(4, ws.pool2, 5, 5, d_pool2);
    nn::maxpool_backward(d_pool2, ws.arg2, n, m.arch.conv_channels[3], 10, 10, d);
    block_back(3, ws.bn_out[2], 10, 10, d_b3);
    d = std::move(d_b3);
    block_back(2, ws.pool1, 10, 10, d_pool1);
    nn::maxpool_backward(d_pool1, ws.arg1, n, m.arch.conv_channels[1], 20, 20, d);
    block_back(1, ws.bn_out[0], 20, 20, d_b1);
    d = std::move(d_b1);
    block_back(0, ws.x0, 20, 20, d_x0);
}

inline void head_backward(const SiameseModel& m, const HeadActivations& ws, const nn::Vec& dlogits,
                          Gradients& grads, nn::Vec& ddiff) {
    int n = ws.n;
    nn::Vec dhead_in, dw2, db2;
    nn::fc_backward(ws.head_in, dlogits, n, m.fc2, dhead_in, dw2, db2);
    grads.groups[22] = std::move(dw2);
    grads.groups[23] = std::move(db2);
    if (ws.dropout_on) {
        double inv_keep = 1.0 / ws.keep_prob;
        for (std::size_t i = 0; i < dhead_in.size(); ++i)
            dhead_in[i] = ws.keep_mask[i] ? dhead_in[i] * inv_keep : 0.0;
    }
    nn::relu_backward(ws.fc1_relu, dhead_in);
    nn::Vec dw1, db1;
    nn::fc_backward(ws.diff, dhead_in, n, m.fc1, ddiff, dw1, db1);
    grads.groups[20] = std::move(dw1);
    grads.groups[21] = std::move(db1);
}

} // namespace detail

inline Gradients zero_gradients(SiameseModel& m) {
    Gradients g;
    for (auto& pg : m.trainable()) g.groups.emplace_back(pg.values->size(), 0.0);
    return g;
}

// A training minibatch after augmentation: patch tensors as double arrays.
struct MiniBatch {
    int n = 0;
    nn::Vec x1; // [n][13][400]
    nn::Vec x2;
    std::vector<std::uint8_t> y;
};

inline MiniBatch make_batch(const std::vector<PairExample>& pairs, std::span<const std::size_t> idx) {
    MiniBatch b;
    b.n = static_cast<int>(idx.size());
    b.x1.resize(static_cast<std::size_t>(b.n) * PatchTensor::kValues);
    b.x2.resize(static_cast<std::size_t>(b.n) * PatchTensor::kValues);
    b.y.resize(static_cast<std::size_t>(b.n));
    for (int i = 0; i < b.n; ++i) {
        const PairExample& pe = pairs[idx[static_cast<std::size_t>(i)]];
        for (int j = 0; j < PatchTensor::kValues; ++j) {
            b.x1[static_cast<std::size_t>(i) * PatchTensor::kValues + j] = pe.patch_a.v[static_cast<std::size_t>(j)];
            b.x2[static_cast<std::size_t>(i) * PatchTensor::kValues + j] = pe.patch_b.v[static_cast<std::size_t>(j)];
        }
        b.y[static_cast<std::size_t>(i)] = pe.label;
    }
    return b;
}

struct BatchEval {
    double loss = 0.0;
    nn::Vec p;
    Gradients grads;
    // FNV-1a hash of the relu/pool activation pattern; finite-difference
    // probes are only valid derivative estimates when the pattern is stable
    // across the stencil
    std::uint64_t pattern_hash = 0;
};

namespace detail {

inline void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}

inline std::uint64_t activation_pattern_hash(const TailActivations& tail,
                                             const HeadActivations& head) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto hash_signs = [&](const nn::Vec& v) {
        std::uint8_t acc = 0;
        int bits = 0;
        for (double x : v) {
            acc = static_cast<std::uint8_t>((acc << 1) | (x > 0.0 ? 1 : 0));
            if (++bits == 8) {
                hash_bytes(h, &acc, 1);
                acc = 0;
                bits = 0;
            }
        }
        if (bits > 0) hash_bytes(h, &acc, 1);
    };
    for (const auto& r : tail.relu_out) hash_signs(r);
    hash_bytes(h, tail.arg1.data(), tail.arg1.size());
    hash_bytes(h, tail.arg2.data(), tail.arg2.size());
    hash_signs(head.fc1_relu);
    return h;
}

} // namespace detail

// Train-mode forward + full backward over a batch: both patch stacks go
// through one tail pass (2n instances share the batch statistics), the
// embedding difference through the head; tied tail weights accumulate both
// streams' gradients.
inline BatchEval compute_loss_and_gradients(SiameseModel& model, const MiniBatch& batch,
                                            const LossParams& lp, bool enable_dropout,
                                            Rng* dropout_rng, bool want_pattern_hash = false) {
    int n = batch.n;
    int dim = model.arch.embedding_dim();
    nn::Vec stacked(static_cast<std::size_t>(2 * n) * PatchTensor::kValues);
    std::copy(batch.x1.begin(), batch.x1.end(), stacked.begin());
    std::copy(batch.x2.begin(), batch.x2.end(), stacked.begin() + batch.x1.size());

    detail::TailActivations tail;
    detail::tail_forward_train(model, stacked, 2 * n, tail);

    nn::Vec diff(static_cast<std::size_t>(n) * dim);
    const nn::Vec& emb = tail.embeddings();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j)
            diff[static_cast<std::size_t>(i) * dim + j] =
                emb[static_cast<std::size_t>(i) * dim + j] -
                emb[static_cast<std::size_t>(n + i) * dim + j];

    detail::HeadActivations head;
    detail::head_forward(model, std::move(diff), n, enable_dropout, dropout_rng, head);

    BatchEval out;
    out.p = head.p;
    out.loss = batch_loss(out.p, batch.y, lp);
    if (want_pattern_hash) out.pattern_hash = detail::activation_pattern_hash(tail, head);
    out.grads = zero_gradients(model);

    nn::Vec dlogits;
    detail::loss_backward(head.p, batch.y, lp, dlogits);
    nn::Vec ddiff;
    detail::head_backward(model, head, dlogits, out.grads, ddiff);

    nn::Vec d_emb(static_cast<std::size_t>(2 * n) * dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            d_emb[static_cast<std::size_t>(i) * dim + j] = ddiff[static_cast<std::size_t>(i) * dim + j];
            d_emb[static_cast<std::size_t>(n + i) * dim + j] = -ddiff[static_cast<std::size_t>(i) * dim + j];
        }
    detail::tail_backward(model, tail, d_emb, out.grads);
    return out;
}

// One optimizer step; returns the batch loss.
inline double backward_and_step(SiameseModel& model, const MiniBatch& batch, const LossParams& lp,
                                const nn::AdamConfig& adam_cfg, nn::AdamState& adam,
                                bool enable_dropout, Rng* dropout_rng) {
    BatchEval ev = compute_loss_and_gradients(model, batch, lp, enable_dropout, dropout_rng);
    for (const auto& g : ev.grads.groups)
        for (double v : g)
            if (!std::isfinite(v)) raise(ErrorKind::Numeric, "non-finite gradient");
    auto groups = model.trainable();
    std::vector<nn::Vec*> params;
    params.reserve(groups.size());
    std::vector<std::size_t> sizes;
    for (auto& g : groups) {
        params.push_back(g.values);
        sizes.push_back(g.values->size());
    }
    adam.ensure_size(sizes);
    adam.step(adam_cfg, params, ev.grads.groups);
    return ev.loss;
}

// ---- inference ------------------------------------------------------------------

// Eval-mode embeddings for a batch of preprocessed patches, [n][3200].
inline void embed_batch(const SiameseModel& model, const float* patches, int n, nn::Vec& out) {
    nn::Vec x(static_cast<std::size_t>(n) * PatchTensor::kValues);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = patches[i];
    detail::TailActivations tail;
    detail::tail_forward_eval(model, x, n, tail);
    out = tail.embeddings();
}

inline std::vector<double> embed(const SiameseModel& model, const PatchTensor& patch) {
    nn::Vec out;
    embed_batch(model, patch.v.data(), 1, out);
    return out;
}

// Head on an embedding difference; returns the softmax probability of the
// dissimilar class. Evaluated as d(f1, f2) = head(f1 - f2); note the learned
// distance is not symmetric in its arguments.
inline double head_distance(const SiameseModel& model, const nn::Vec& diff) {
    detail::HeadActivations head;
    head_forward(model, diff, 1, false, nullptr, head);
    return head.p[0];
}

inline double distance_from_embeddings(const SiameseModel& model, std::span<const double> f1,
                                       std::span<const double> f2) {
    int dim = model.arch.embedding_dim();
    if (static_cast<int>(f1.size()) != dim || static_cast<int>(f2.size()) != dim)
        raise(ErrorKind::InvalidInput, "distance_from_embeddings: wrong vector length");
    nn::Vec diff(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) diff[static_cast<std::size_t>(j)] = f1[static_cast<std::size_t>(j)] - f2[static_cast<std::size_t>(j)];
    return head_distance(model, diff);
}

// The constant distance of any identical pair (zero difference vector).
inline double zero_distance(const SiameseModel& model) {
    nn::Vec diff(static_cast<std::size_t>(model.arch.embedding_dim()), 0.0);
    return head_distance(model, diff);
}

struct ForwardResult {
    std::array<double, 2> logits{};
    double p = 0.0;
};

// Eval-mode forward over one pair.
inline ForwardResult forward_eval(const SiameseModel& model, const PatchTensor& a,
                                  const PatchTensor& b) {
    nn::Vec x(static_cast<std::size_t>(2) * PatchTensor::kValues);
    for (int j = 0; j < PatchTensor::kValues; ++j) {
        x[static_cast<std::size_t>(j)] = a.v[static_cast<std::size_t>(j)];
        x[static_cast<std::size_t>(PatchTensor::kValues + j)] = b.v[static_cast<std::size_t>(j)];
    }
    detail::TailActivations tail;
    detail::tail_forward_eval(model, x, 2, tail);
    int dim = model.arch.embedding_dim();
    nn::Vec diff(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j)
        diff[static_cast<std::size_t>(j)] = tail.embeddings()[static_cast<std::size_t>(j)] -
                                            tail.embeddings()[static_cast<std::size_t>(dim + j)];
    detail::HeadActivations head;
    detail::head_forward(model, std::move(diff), 1, false, nullptr, head);
    ForwardResult r;
    r.logits = {head.logits[0], head.logits[1]};
    r.p = head.p[0];
    return r;
}

// Batched fast path for exemplar scans: fc1 is linear, so fc1(q - e) equals
// proj(q) - proj(e) + bias with proj(f) = W1 * f. Scans precompute the
// projections once and run only the small tail of the head per comparison.
class HeadScanContext {
public:
    explicit HeadScanContext(const SiameseModel& model)
        : model_(&model), dim_(model.arch.embedding_dim()), width_(model.arch.fc1_width) {}

    std::vector<double> project(std::span<const float> embedding) const {
        if (static_cast<int>(embedding.size()) != dim_)
            raise(ErrorKind::InvalidInput, "project: wrong embedding length");
        std::vector<double> h(static_cast<std::size_t>(width_), 0.0);
        const nn::Vec& w = model_->fc1.weight;
        for (int o = 0; o < width_; ++o) {
            const double* row = w.data() + static_cast<std::size_t>(o) * dim_;
            double acc = 0.0;
            for (int j = 0; j < dim_; ++j) acc += row[static_cast<std::size_t>(j)] * embedding[static_cast<std::size_t>(j)];
            h[static_cast<std::size_t>(o)] = acc;
        }
        return h;
    }

    // distance between the query and exemplar given their projections
    double distance(const std::vector<double>& h_query, const std::vector<double>& h_exemplar) const {
        double z0, z1;
        logits(h_query, h_exemplar, z0, z1);
        double mz = std::max(z0, z1);
        double e0 = std::exp(z0 - mz), e1 = std::exp(z1 - mz);
        return e1 / (e0 + e1);
    }

private:
    void logits(const std::vector<double>& hq, const std::vector<double>& he, double& z0,
                double& z1) const {
        z0 = model_->fc2.bias[0];
        z1 = model_->fc2.bias[1];
        const nn::Vec& w2 = model_->fc2.weight;
        const nn::Vec& b1 = model_->fc1.bias;
        for (int j = 0; j < width_; ++j) {
            double a = hq[static_cast<std::size_t>(j)] - he[static_cast<std::size_t>(j)] + b1[static_cast<std::size_t>(j)];
            if (a > 0.0) {
                z0 += w2[static_cast<std::size_t>(j)] * a;
                z1 += w2[static_cast<std::size_t>(width_ + j)] * a;
            }
        }
    }

    const SiameseModel* model_;
    int dim_;
    int width_;
};

// ---- partial AUC -----------------------------------------------------------------

// Area under the ROC (dissimilar = positive) restricted to FPR in [0, cap].
// Tied scores collapse into single slanted segments, so an all-ties input
// scores the chance area cap^2/2.
inline double partial_auc(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          double fpr_cap) {
    if (scores.size() != labels.size() || scores.empty())
        raise(ErrorKind::InvalidInput, "partial_auc: bad input");
    std::size_t pos = 0, neg = 0;
    for (auto y : labels) (y == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) raise(ErrorKind::InvalidInput, "partial_auc: single-class input");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    double area = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        double fpr = static_cast<double>(fp) / static_cast<double>(neg);
        double tpr = static_cast<double>(tp) / static_cast<double>(pos);
        if (fpr >= fpr_cap) {
            // interpolate the crossing of the cap
            double t_at_cap = prev_tpr;
            if (fpr > prev_fpr)
                t_at_cap = prev_tpr + (tpr - prev_tpr) * (fpr_cap - prev_fpr) / (fpr - prev_fpr);
            area += 0.5 * (prev_tpr + t_at_cap) * (fpr_cap - prev_fpr);
            return area;
        }
        area += 0.5 * (prev_tpr + tpr) * (fpr - prev_fpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    // curve ended before the cap (only possible numerically); extend flat
    area += prev_tpr * (fpr_cap - prev_fpr);
    return area;
}

// ---- training --------------------------------------------------------------------

struct TrainConfig {
    Architecture arch;
    int batch_size = 128;
    nn::AdamConfig adam; // learning rate 0.001, betas 0.9/0.999, eps 1e-8
    int max_iterations = 500;
    LossParams loss; // gamma 0.2, label smoothing 0.1
    double validation_fraction = 0.1;
    int validate_every = 10;
    double pauc_fpr_cap = 0.3;
    AugmentRanges augment;
    std::uint64_t seed = 1;
};

struct TrainLogEntry {
    int step = 0;
    double val_pauc = 0.0;
    bool is_best = false;
};

namespace detail {

inline nn::Vec eval_scores(const SiameseModel& model, const std::vector<PairExample>& pairs,
                           const std::vector<std::size_t>& idx) {
    nn::Vec scores(idx.size(), 0.0);
    const int chunk = 128;
    int dim = model.arch.embedding_dim();
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::size_t count = std::min<std::size_t>(chunk, idx.size() - start);
        nn::Vec x(2 * count * PatchTensor::kValues);
        for (std::size_t i = 0; i < count; ++i) {
            const PairExample& pe = pairs[idx[start + i]];
            for (int j = 0; j < PatchTensor::kValues; ++j) {
                x[i * PatchTensor::kValues + static_cast<std::size_t>(j)] = pe.patch_a.v[static_cast<std::size_t>(j)];
                x[(count + i) * PatchTensor::kValues + static_cast<std::size_t>(j)] = pe.patch_b.v[static_cast<std::size_t>(j)];
            }
        }
        TailActivations tail;
        tail_forward_eval(model, x, static_cast<int>(2 * count), tail);
        nn::Vec diff(count * static_cast<std::size_t>(dim));
        for (std::size_t i = 0; i < count; ++i)
            for (int j = 0; j < dim; ++j)
                diff[i * dim + static_cast<std::size_t>(j)] =
                    tail.embeddings()[i * dim + static_cast<std::size_t>(j)] -
                    tail.embeddings()[(count + i) * dim + static_cast<std::size_t>(j)];
        HeadActivations head;
        head_forward(model, std::move(diff), static_cast<int>(count), false, nullptr, head);
        for (std::size_t i = 0; i < count; ++i) scores[start + i] = head.p[i];
    }
    return scores;
}

} // namespace detail

// Trains from a curated pair set: stratified validation split, shuffled
// minibatches with train-time augmentation, Adam steps, periodic validation
// partial-AUC, and returns the snapshot with the best validation value
// (earliest on ties).
inline SiameseModel train(const std::vector<PairExample>& pairs, const TrainConfig& cfg,
                          std::vector<TrainLogEntry>* log = nullptr) {
    std::vector<std::size_t> sim_idx, dis_idx;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        (pairs[i].label == 1 ? dis_idx : sim_idx).push_back(i);
    if (sim_idx.empty() || dis_idx.empty())
        raise(ErrorKind::InvalidInput, "train: dataset must contain both classes");

    Rng root(cfg.seed);
    Rng split_rng = root.fork(1);
    Rng epoch_rng = root.fork(2);
    Rng augment_rng = root.fork(3);
    Rng dropout_rng = root.fork(4);

    auto split_class = [&](std::vector<std::size_t>& idx, std::vector<std::size_t>& val,
                           std::vector<std::size_t>& tr) {
        split_rng.shuffle(idx);
        std::size_t n_val = cfg.validation_fraction > 0.0
                                ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                               cfg.validation_fraction *
                                                               static_cast<double>(idx.size()))))
                                : 0;
        n_val = std::min(n_val, idx.size() > 1 ? idx.size() - 1 : 0);
        val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        tr.insert(tr.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    };
    std::vector<std::size_t> val_idx, train_idx;
    split_class(sim_idx, val_idx, train_idx);
    split_class(dis_idx, val_idx, train_idx);
    if (static_cast<int>(train_idx.size()) < 2 * cfg.batch_size)
        raise(ErrorKind::InvalidInput, "train: dataset too small after validation split (need >= " +
                                           std::to_string(2 * cfg.batch_size) + " training pairs)");

    std::vector<std::uint8_t> val_labels(val_idx.size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) val_labels[i] = pairs[val_idx[i]].label;

    SiameseModel model = init_model(cfg.arch, root.fork(0).next_u64());
    nn::AdamState adam;

    double best_pauc = -1.0;
    SiameseModel best_model = model;
    std::uint32_t best_iter = 0;
    auto validate = [&](int step) {
        nn::Vec scores = detail::eval_scores(model, pairs, val_idx);
        double pauc = partial_auc(scores, val_labels, cfg.pauc_fpr_cap);
        bool is_best = pauc > best_pauc;
        if (is_best) {
            best_pauc = pauc;
            best_model = model;
            best_iter = static_cast<std::uint32_t>(step);
        }
        if (log) log->push_back({step, pauc, is_best});
    };
    validate(0);

    std::vector<std::size_t> order = train_idx;
    std::size_t cursor = order.size(); // force shuffle on first use
    int batches_per_epoch = static_cast<int>(order.size()) / cfg.batch_size;
    (void)batches_per_epoch;
    for (int step = 1; step <= cfg.max_iterations; ++step) {
        if (cursor + static_cast<std::size_t>(cfg.batch_size) > order.size()) {
            epoch_rng.shuffle(order);
            cursor = 0;
        }
        std::span<const std::size_t> batch_idx(order.data() + cursor,
                                               static_cast<std::size_t>(cfg.batch_size));
        cursor += static_cast<std::size_t>(cfg.batch_size);

        MiniBatch batch = make_batch(pairs, batch_idx);
        // pairwise augmentation: both patches share the same draw
        Rng step_rng = augment_rng.fork(static_cast<std::uint64_t>(step));
        for (int i = 0; i < batch.n; ++i) {
            AugmentParams ap = AugmentParams::draw(step_rng, cfg.augment);
            const PairExample& pe = pairs[batch_idx[static_cast<std::size_t>(i)]];
            PatchTensor a = pe.patch_a, b = pe.patch_b;
            apply_augment(a, ap);
            apply_augment(b, ap);
            for (int j = 0; j < PatchTensor::kValues; ++j) {
                batch.x1[static_cast<std::size_t>(i) * PatchTensor::kValues + j] = a.v[static_cast<std::size_t>(j)];
                batch.x2[static_cast<std::size_t>(i) * PatchTensor::kValues + j] = b.v[static_cast<std::size_t>(j)];
            }
        }
        Rng step_dropout = dropout_rng.fork(static_cast<std::uint64_t>(step));
        backward_and_step(model, batch, cfg.loss, cfg.adam, adam, true, &step_dropout);

        if (step % cfg.validate_every == 0 || step == cfg.max_iterations) validate(step);
    }

    best_model.best_val_pauc = best_pauc;
    best_model.iterations = best_iter;
    return best_model;
}

// ---- serialization ----------------------------------------------------------------

// Model file: magic `VADM1`, u32 version, f64 bn epsilon/momentum, layer
// descriptor, parameters as f32 in declaration order, then training metadata.
namespace model_file {
constexpr std::uint8_t kConv = 0, kBn = 1, kPool = 2, kFc = 3, kDropout = 4, kSubtract = 5,
                       kSoftmax = 6;
}

inline std::vector<std::uint8_t> serialize_model(const SiameseModel& m) {
    ByteWriter w;
    w.magic("VADM1");
    w.u32(1);
    w.f64(m.arch.bn_epsilon);
    w.f64(m.arch.bn_momentum);

    std::vector<std::array<std::uint32_t, 3>> layers; // kind, a, b
    auto add = [&](std::uint8_t kind, std::uint32_t a, std::uint32_t b) {
        layers.push_back({kind, a, b});
    };
    int in_c = Architecture::kInputC;
    for (int k = 0; k < 5; ++k) {
        int out_c = m.arch.conv_channels[static_cast<std::size_t>(k)];
        add(model_file::kConv, static_cast<std::uint32_t>(in_c), static_cast<std::uint32_t>(out_c));
        add(model_file::kBn, static_cast<std::uint32_t>(out_c), 0);
        if (k == 1 || k == 3) add(model_file::kPool, 2, 0);
        in_c = out_c;
    }
    add(model_file::kSubtract, static_cast<std::uint32_t>(m.arch.embedding_dim()), 0);
    add(model_file::kFc, static_cast<std::uint32_t>(m.fc1.in_dim), static_cast<std::uint32_t>(m.fc1.out_dim));
    add(model_file::kDropout, static_cast<std::uint32_t>(std::llround(m.arch.dropout_rate * 1e6)), 0);
    add(model_file::kFc, static_cast<std::uint32_t>(m.fc2.in_dim), 2);
    add(model_file::kSoftmax, 2, 0);

    w.u32(static_cast<std::uint32_t>(layers.size()));
    for (const auto& l : layers) {
        w.u8(static_cast<std::uint8_t>(l[0]));
        w.u32(l[1]);
        w.u32(l[2]);
    }
    for (int k = 0; k < 5; ++k) {
        const auto& c = m.conv[static_cast<std::size_t>(k)];
        const auto& b = m.bn[static_cast<std::size_t>(k)];
        w.f32_array(c.weight.data(), c.weight.size());
        w.f32_array(c.bias.data(), c.bias.size());
        w.f32_array(b.gamma.data(), b.gamma.size());
        w.f32_array(b.beta.data(), b.beta.size());
        w.f32_array(b.running_mean.data(), b.running_mean.size());
        w.f32_array(b.running_var.data(), b.running_var.size());
    }
    w.f32_array(m.fc1.weight.data(), m.fc1.weight.size());
    w.f32_array(m.fc1.bias.data(), m.fc1.bias.size());
    w.f32_array(m.fc2.weight.data(), m.fc2.weight.size());
    w.f32_array(m.fc2.bias.data(), m.fc2.bias.size());
    w.f64(m.best_val_pauc);
    w.u32(m.iterations);
    return w.data();
}

inline void save_model(const std::filesystem::path& path, const SiameseModel& m) {
    write_file_bytes(path, serialize_model(m));
}

inline SiameseModel deserialize_model(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    ByteReader r(bytes);
    r.expect_magic("VADM1", what);
    std::uint32_t version = r.u32();
    if (version != 1) raise(ErrorKind::Format, what + ": unsupported model version");
    Architecture arch;
    arch.bn_epsilon = r.f64();
    arch.bn_momentum = r.f64();
    std::uint32_t n_layers = r.u32();
    std::vector<std::array<std::uint32_t, 3>> layers;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        std::uint32_t kind = r.u8();
        std::uint32_t a = r.u32();
        std::uint32_t b = r.u32();
        layers.push_back({kind, a, b});
    }
    // validate the fixed topology and recover the widths
    static const std::uint8_t expected[] = {
        model_file::kConv, model_file::kBn, model_file::kConv, model_file::kBn, model_file::kPool,
        model_file::kConv, model_file::kBn, model_file::kConv, model_file::kBn, model_file::kPool,
        model_file::kConv, model_file::kBn, model_file::kSubtract, model_file::kFc,
        model_file::kDropout, model_file::kFc, model_file::kSoftmax};
    if (layers.size() != std::size(expected)) raise(ErrorKind::Format, what + ": unexpected layer count");
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i][0] != expected[i]) raise(ErrorKind::Format, what + ": unexpected layer kind");
    int conv_pos[5] = {0, 2, 5, 7, 10};
    int in_c = Architecture::kInputC;
    for (int k = 0; k < 5; ++k) {
        const auto& l = layers[static_cast<std::size_t>(conv_pos[k])];
        if (static_cast<int>(l[1]) != in_c) raise(ErrorKind::Format, what + ": conv input width mismatch");
        arch.conv_channels[static_cast<std::size_t>(k)] = static_cast<int>(l[2]);
        in_c = static_cast<int>(l[2]);
    }
    arch.fc1_width = static_cast<int>(layers[13][2]);
    arch.dropout_rate = static_cast<double>(layers[14][1]) / 1e6;
    if (static_cast<int>(layers[13][1]) != arch.embedding_dim())
        raise(ErrorKind::Format, what + ": fc1 input does not match tail output");
    if (static_cast<int>(layers[15][1]) != arch.fc1_width || layers[15][2] != 2)
        raise(ErrorKind::Format, what + ": fc2 shape mismatch");

    SiameseModel m = init_model(arch, 0);
    for (int k = 0; k < 5; ++k) {
        auto& c = m.conv[static_cast<std::size_t>(k)];
        auto& b = m.bn[static_cast<std::size_t>(k)];
        r.f32_into(c.weight.data(), c.weight.size());
        r.f32_into(c.bias.data(), c.bias.size());
        r.f32_into(b.gamma.data(), b.gamma.size());
        r.f32_into(b.beta.data(), b.beta.size());
        r.f32_into(b.running_mean.data(), b.running_mean.size());
        r.f32_into(b.running_var.data(), b.running_var.size());
    }
    r.f32_into(m.fc1.weight.data(), m.fc1.weight.size());
    r.f32_into(m.fc1.bias.data(), m.fc1.bias.size());
    r.f32_into(m.fc2.weight.data(), m.fc2.weight.size());
    r.f32_into(m.fc2.bias.data(), m.fc2.bias.size());
    m.best_val_pauc = r.f64();
    m.iterations = r.u32();
    if (!r.at_end()) raise(ErrorKind::Format, what + ": trailing bytes");
    return m;
}

inline SiameseModel load_model(const std::filesystem::path& path) {
    return deserialize_model(read_file_bytes(path), path.string());
}

} // namespace vad
