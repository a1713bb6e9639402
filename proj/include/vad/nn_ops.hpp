#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/parallel.hpp"

// Batched network primitives in double precision. All cross-instance
// reductions accumulate fixed-chunk partials in chunk order, so results are
// bit-identical for any thread count. Dense products go through Eigen.
namespace vad::nn {

using Vec = std::vector<double>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Conv3x3 {
    int in_c = 0, out_c = 0;
    Vec weight; // [out_c][in_c * 9]
    Vec bias;   // [out_c]
};

struct BatchNorm {
    int channels = 0;
    Vec gamma, beta;
    Vec running_mean, running_var;
    double epsilon = 1e-5;
    double momentum = 0.9;

    // batch statistics captured by the last train-mode forward
    Vec saved_mean, saved_invstd;
};

struct Fc {
    int in_dim = 0, out_dim = 0;
    Vec weight; // [out_dim][in_dim]
    Vec bias;   // [out_dim]
};

// ---- im2col ---------------------------------------------------------------

// x: one instance [C][H*W]; cols: [C*9][H*W], zero-padded 3x3 neighborhood.
inline void im2col_3x3(const double* x, int c_in, int h, int w, double* cols) {
    int hw = h * w;
    for (int c = 0; c < c_in; ++c) {
        const double* plane = x + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst + y * w, dst + (y + 1) * w, 0.0);
                        continue;
                    }
                    const double* src_row = plane + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        int sx = xx + kx - 1;
                        dst[y * w + xx] = (sx < 0 || sx >= w) ? 0.0 : src_row[sx];
                    }
                }
            }
        }
    }
}

// inverse scatter-add of im2col_3x3
inline void col2im_3x3(const double* cols, int c_in, int h, int w, double* dx) {
    int hw = h * w;
    for (int c = 0; c < c_in; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    double* dst_row = plane + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        int sx = xx + kx - 1;
                        if (sx >= 0 && sx < w) dst_row[sx] += src[y * w + xx];
                    }
                }
            }
        }
    }
}

// ---- convolution ----------------------------------------------------------

// x: [N][in_c][H*W] -> y: [N][out_c][H*W] (same padding, stride 1)
inline void conv_forward(const Vec& x, int n, int h, int w, const Conv3x3& conv, Vec& y) {
    int hw = h * w;
    int k = conv.in_c * 9;
    y.assign(static_cast<std::size_t>(n) * conv.out_c * hw, 0.0);
    CMapMat wm(conv.weight.data(), conv.out_c, k);
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int, std::size_t b, std::size_t e) {
        Vec cols(static_cast<std::size_t>(k) * hw);
        for (std::size_t i = b; i < e; ++i) {
            im2col_3x3(x.data() + i * conv.in_c * hw, conv.in_c, h, w, cols.data());
            CMapMat cm(cols.data(), k, hw);
            MapMat ym(y.data() + i * conv.out_c * hw, conv.out_c, hw);
            ym.noalias() = wm * cm;
            for (int oc = 0; oc < conv.out_c; ++oc) ym.row(oc).array() += conv.bias[static_cast<std::size_t>(oc)];
        }
    });
}

// dy: [N][out_c][H*W]; x is the forward input. Accumulates dW/db across the
// batch via per-chunk partials reduced in chunk order.
inline void conv_backward(const Vec& x, const Vec& dy, int n, int h, int w, const Conv3x3& conv,
                          Vec& dx, Vec& dweight, Vec& dbias) {
    int hw = h * w;
    int k = conv.in_c * 9;
    dx.assign(x.size(), 0.0);
    dweight.assign(conv.weight.size(), 0.0);
    dbias.assign(conv.bias.size(), 0.0);

    std::vector<Vec> dw_part(Parallel::kChunks);
    std::vector<Vec> db_part(Parallel::kChunks);
    CMapMat wm(conv.weight.data(), conv.out_c, k);
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int chunk, std::size_t b, std::size_t e) {
        Vec cols(static_cast<std::size_t>(k) * hw);
        Vec dcols(static_cast<std::size_t>(k) * hw);
        Vec& dw = dw_part[static_cast<std::size_t>(chunk)];
        Vec& db = db_part[static_cast<std::size_t>(chunk)];
        dw.assign(conv.weight.size(), 0.0);
        db.assign(conv.bias.size(), 0.0);
        MapMat dwm(dw.data(), conv.out_c, k);
        for (std::size_t i = b; i < e; ++i) {
            im2col_3x3(x.data() + i * conv.in_c * hw, conv.in_c, h, w, cols.data());
            CMapMat cm(cols.data(), k, hw);
            CMapMat dym(dy.data() + i * conv.out_c * hw, conv.out_c, hw);
            dwm.noalias() += dym * cm.transpose();
            for (int oc = 0; oc < conv.out_c; ++oc) db[static_cast<std::size_t>(oc)] += dym.row(oc).sum();
            MapMat dcm(dcols.data(), k, hw);
            dcm.noalias() = wm.transpose() * dym;
            col2im_3x3(dcols.data(), conv.in_c, h, w, dx.data() + i * conv.in_c * hw);
        }
    });
    for (int c = 0; c < Parallel::kChunks; ++c) {
        if (dw_part[static_cast<std::size_t>(c)].empty()) continue;
        for (std::size_t j = 0; j < dweight.size(); ++j) dweight[j] += dw_part[static_cast<std::size_t>(c)][j];
        for (std::size_t j = 0; j < dbias.size(); ++j) dbias[j] += db_part[static_cast<std::size_t>(c)][j];
    }
}

// ---- relu -----------------------------------------------------------------

inline void relu_forward(const Vec& x, Vec& y) {
    y.resize(x.size());
    Parallel::for_chunks(x.size(), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    });
}

// y is the relu output; grad passes where y > 0
inline void relu_backward(const Vec& y, Vec& dy) {
    Parallel::for_chunks(y.size(), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            if (!(y[i] > 0.0)) dy[i] = 0.0;
    });
}

// ---- batch norm -----------------------------------------------------------

// x: [N][C][P]. Train mode normalizes with batch statistics over N*P per
// channel and updates the running estimates; eval mode uses the running ones.
inline void batchnorm_forward(const Vec& x, int n, int p, BatchNorm& bn, bool train, Vec& y,
                              const std::string& layer_name) {
    int c_n = bn.channels;
    y.resize(x.size());
    std::size_t m = static_cast<std::size_t>(n) * p;
    Vec mean(static_cast<std::size_t>(c_n)), invstd(static_cast<std::size_t>(c_n));
    if (train) {
        std::vector<Vec> sum_part(Parallel::kChunks), sq_part(Parallel::kChunks);
        Parallel::for_chunks(static_cast<std::size_t>(n), [&](int chunk, std::size_t b, std::size_t e) {
            Vec& s = sum_part[static_cast<std::size_t>(chunk)];
            Vec& q = sq_part[static_cast<std::size_t>(chunk)];
            s.assign(static_cast<std::size_t>(c_n), 0.0);
            q.assign(static_cast<std::size_t>(c_n), 0.0);
            for (std::size_t i = b; i < e; ++i)
                for (int c = 0; c < c_n; ++c) {
                    const double* px = x.data() + (i * c_n + c) * p;
                    double sv = 0.0, qv = 0.0;
                    for (int j = 0; j < p; ++j) {
                        sv += px[j];
                        qv += px[j] * px[j];
                    }
                    s[static_cast<std::size_t>(c)] += sv;
                    q[static_cast<std::size_t>(c)] += qv;
                }
        });
        for (int c = 0; c < c_n; ++c) {
            double s = 0.0, q = 0.0;
            for (int ch = 0; ch < Parallel::kChunks; ++ch) {
                if (sum_part[static_cast<std::size_t>(ch)].empty()) continue;
                s += sum_part[static_cast<std::size_t>(ch)][static_cast<std::size_t>(c)];
                q += sq_part[static_cast<std::size_t>(ch)][static_cast<std::size_t>(c)];
            }
            double mu = s / static_cast<double>(m);
            double var = q / static_cast<double>(m) - mu * mu;
            if (var < 0.0) var = 0.0; // guard fp cancellation
            if (!std::isfinite(mu) || !std::isfinite(var))
                raise(ErrorKind::Numeric, "non-finite activation in " + layer_name);
            mean[static_cast<std::size_t>(c)] = mu;
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + bn.epsilon);
            bn.running_mean[static_cast<std::size_t>(c)] =
                bn.momentum * bn.running_mean[static_cast<std::size_t>(c)] + (1.0 - bn.momentum) * mu;
            bn.running_var[static_cast<std::size_t>(c)] =
                bn.momentum * bn.running_var[static_cast<std::size_t>(c)] + (1.0 - bn.momentum) * var;
        }
        bn.saved_mean = mean;
        bn.saved_invstd = invstd;
    } else {
        for (int c = 0; c < c_n; ++c) {
            mean[static_cast<std::size_t>(c)] = bn.running_mean[static_cast<std::size_t>(c)];
            double rv = bn.running_var[static_cast<std::size_t>(c)];
            if (!(rv > 0.0) || !std::isfinite(rv))
                raise(ErrorKind::Numeric, "invalid running variance in " + layer_name);
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(rv + bn.epsilon);
        }
    }
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < c_n; ++c) {
                const double* px = x.data() + (i * c_n + c) * p;
                double* py = y.data() + (i * c_n + c) * p;
                double mu = mean[static_cast<std::size_t>(c)];
                double is = invstd[static_cast<std::size_t>(c)];
                double g = bn.gamma[static_cast<std::size_t>(c)];
                double bb = bn.beta[static_cast<std::size_t>(c)];
                for (int j = 0; j < p; ++j) py[j] = g * (px[j] - mu) * is + bb;
            }
    });
}

// Backward through train-mode batch statistics. x is the forward input.
inline void batchnorm_backward(const Vec& x, const Vec& dy, int n, int p, const BatchNorm& bn,
                               Vec& dx, Vec& dgamma, Vec& dbeta) {
    int c_n = bn.channels;
    std::size_t m = static_cast<std::size_t>(n) * p;
    dx.resize(x.size());
    dgamma.assign(static_cast<std::size_t>(c_n), 0.0);
    dbeta.assign(static_cast<std::size_t>(c_n), 0.0);

    std::vector<Vec> s_dy(Parallel::kChunks), s_dyx(Parallel::kChunks);
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int chunk, std::size_t b, std::size_t e) {
        Vec& a = s_dy[static_cast<std::size_t>(chunk)];
        Vec& q = s_dyx[static_cast<std::size_t>(chunk)];
        a.assign(static_cast<std::size_t>(c_n), 0.0);
        q.assign(static_cast<std::size_t>(c_n), 0.0);
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < c_n; ++c) {
                const double* px = x.data() + (i * c_n + c) * p;
                const double* pd = dy.data() + (i * c_n + c) * p;
                double mu = bn.saved_mean[static_cast<std::size_t>(c)];
                double is = bn.saved_invstd[static_cast<std::size_t>(c)];
                double sa = 0.0, sq = 0.0;
                for (int j = 0; j < p; ++j) {
                    sa += pd[j];
                    sq += pd[j] * (px[j] - mu) * is;
                }
                a[static_cast<std::size_t>(c)] += sa;
                q[static_cast<std::size_t>(c)] += sq;
            }
    });
    Vec sum_dy(static_cast<std::size_t>(c_n), 0.0), sum_dy_xhat(static_cast<std::size_t>(c_n), 0.0);
    for (int ch = 0; ch < Parallel::kChunks; ++ch) {
        if (s_dy[static_cast<std::size_t>(ch)].empty()) continue;
        for (int c = 0; c < c_n; ++c) {
            sum_dy[static_cast<std::size_t>(c)] += s_dy[static_cast<std::size_t>(ch)][static_cast<std::size_t>(c)];
            sum_dy_xhat[static_cast<std::size_t>(c)] += s_dyx[static_cast<std::size_t>(ch)][static_cast<std::size_t>(c)];
        }
    }
    for (int c = 0; c < c_n; ++c) {
        dbeta[static_cast<std::size_t>(c)] = sum_dy[static_cast<std::size_t>(c)];
        dgamma[static_cast<std::size_t>(c)] = sum_dy_xhat[static_cast<std::size_t>(c)];
    }
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < c_n; ++c) {
                const double* px = x.data() + (i * c_n + c) * p;
                const double* pd = dy.data() + (i * c_n + c) * p;
                double* pdx = dx.data() + (i * c_n + c) * p;
                double mu = bn.saved_mean[static_cast<std::size_t>(c)];
                double is = bn.saved_invstd[static_cast<std::size_t>(c)];
                double g = bn.gamma[static_cast<std::size_t>(c)];
                double k1 = sum_dy[static_cast<std::size_t>(c)] / static_cast<double>(m);
                double k2 = sum_dy_xhat[static_cast<std::size_t>(c)] / static_cast<double>(m);
                for (int j = 0; j < p; ++j) {
                    double xhat = (px[j] - mu) * is;
                    pdx[j] = g * is * (pd[j] - k1 - xhat * k2);
                }
            }
    });
}

// ---- max pooling ----------------------------------------------------------

// 2x2 stride-2 max pool; argmax kept for backward (ties take the first in
// (dy, dx) scan order).
inline void maxpool_forward(const Vec& x, int n, int c_n, int h, int w, Vec& y,
                            std::vector<std::uint8_t>& argmax) {
    int oh = h / 2, ow = w / 2;
    y.resize(static_cast<std::size_t>(n) * c_n * oh * ow);
    argmax.resize(y.size());
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < c_n; ++c) {
                const double* px = x.data() + (i * c_n + c) * h * w;
                double* py = y.data() + (i * c_n + c) * oh * ow;
                std::uint8_t* pa = argmax.data() + (i * c_n + c) * oh * ow;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double best = -1e300;
                        std::uint8_t best_k = 0;
                        for (int k = 0; k < 4; ++k) {
                            int sy = 2 * oy + k / 2, sx = 2 * ox + k % 2;
                            double v = px[sy * w + sx];
                            if (v > best) {
                                best = v;
                                best_k = static_cast<std::uint8_t>(k);
                            }
                        }
                        py[oy * ow + ox] = best;
                        pa[oy * ow + ox] = best_k;
                    }
            }
    });
}

inline void maxpool_backward(const Vec& dy, const std::vector<std::uint8_t>& argmax, int n, int c_n,
                             int h, int w, Vec& dx) {
    int oh = h / 2, ow = w / 2;
    dx.assign(static_cast<std::size_t>(n) * c_n * h * w, 0.0);
    Parallel::for_chunks(static_cast<std::size_t>(n), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < c_n; ++c) {
                const double* pd = dy.data() + (i * c_n + c) * oh * ow;
                const std::uint8_t* pa = argmax.data() + (i * c_n + c) * oh * ow;
                double* pdx = dx.data() + (i * c_n + c) * h * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        int k = pa[oy * ow + ox];
                        int sy = 2 * oy + k / 2, sx = 2 * ox + k % 2;
                        pdx[sy * w + sx] += pd[oy * ow + ox];
                    }
            }
    });
}

// ---- fully connected ------------------------------------------------------

// x: [N][in] -> y: [N][out]
inline void fc_forward(const Vec& x, int n, const Fc& fc, Vec& y) {
    y.resize(static_cast<std::size_t>(n) * fc.out_dim);
    CMapMat xm(x.data(), n, fc.in_dim);
    CMapMat wm(fc.weight.data(), fc.out_dim, fc.in_dim);
    MapMat ym(y.data(), n, fc.out_dim);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < fc.out_dim; ++o) y[static_cast<std::size_t>(i) * fc.out_dim + o] += fc.bias[static_cast<std::size_t>(o)];
}

inline void fc_backward(const Vec& x, const Vec& dy, int n, const Fc& fc, Vec& dx, Vec& dweight,
                        Vec& dbias) {
    dx.resize(x.size());
    dweight.resize(fc.weight.size());
    dbias.assign(fc.bias.size(), 0.0);
    CMapMat xm(x.data(), n, fc.in_dim);
    CMapMat dym(dy.data(), n, fc.out_dim);
    CMapMat wm(fc.weight.data(), fc.out_dim, fc.in_dim);
    MapMat dwm(dweight.data(), fc.out_dim, fc.in_dim);
    MapMat dxm(dx.data(), n, fc.in_dim);
    dwm.noalias() = dym.transpose() * xm;
    dxm.noalias() = dym * wm;
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < fc.out_dim; ++o) dbias[static_cast<std::size_t>(o)] += dy[static_cast<std::size_t>(i) * fc.out_dim + o];
}

// ---- Adam -----------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    void ensure_size(const std::vector<std::size_t>& sizes) {
        if (!m_.empty()) return;
        for (std::size_t s : sizes) {
            m_.emplace_back(s, 0.0);
            v_.emplace_back(s, 0.0);
        }
    }

    // one update over aligned (param, grad) groups
    void step(const AdamConfig& cfg, std::vector<Vec*>& params, const std::vector<Vec>& grads) {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t g = 0; g < params.size(); ++g) {
            Vec& p = *params[g];
            const Vec& grad = grads[g];
            Vec& m = m_[g];
            Vec& v = v_[g];
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
            }
        }
    }

    std::uint64_t steps_taken() const { return t_; }

private:
    std::vector<Vec> m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace vad::nn
