#include "tmagrade/segnet.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

namespace tma {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

// ---- layers --------------------------------------------------------------------
//
// Activations are NHWC. A 3×3 same convolution runs as nine GEMMs over a
// zero-padded copy of each sample: with the padded row pitch P = W + 2, output
// pixel (y, x) sits at flat row y·P + x and tap (ky, kx) reads flat row
// y·P + x + ky·P + kx of the padded input. The two extra columns per row are
// scratch and never read back.

template <class T>
void pad_sample(const T* x, int h, int w, int c, std::vector<T>& padded) {
    const int pw = w + 2;
    padded.assign(static_cast<std::size_t>(h + 2) * pw * c, T{});
    for (int y = 0; y < h; ++y)
        std::copy_n(x + static_cast<std::size_t>(y) * w * c, static_cast<std::size_t>(w) * c,
                    padded.data() + (static_cast<std::size_t>(y + 1) * pw + 1) * c);
}

template <class T>
void conv3x3_forward(const Batch<T>& x, const std::vector<T>& weight, const std::vector<T>& bias, int cout,
                     Batch<T>& y) {
    const int h = x.h, w = x.w, cin = x.c, pw = w + 2;
    const Eigen::Index rows = static_cast<Eigen::Index>(h) * pw - 2;
    y = Batch<T>(x.n, h, w, cout);
    std::vector<T> padded;
    MatR<T> ext(rows, cout);
    for (int n = 0; n < x.n; ++n) {
        pad_sample(x.sample(n), h, w, cin, padded);
        ext.setZero();
        for (int k = 0; k < 9; ++k) {
            const int shift = (k / 3) * pw + (k % 3);
            ext.noalias() += CMapR<T>(padded.data() + static_cast<std::size_t>(shift) * cin, rows, cin) *
                             CMapR<T>(weight.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout);
        }
        T* out = y.sample(n);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                const T* src = ext.data() + (static_cast<std::size_t>(yy) * pw + xx) * cout;
                T* dst = out + (static_cast<std::size_t>(yy) * w + xx) * cout;
                for (int c = 0; c < cout; ++c) dst[c] = src[c] + bias[c];
            }
    }
}

// dx may be null when the input gradient is not needed.
template <class T>
void conv3x3_backward(const Batch<T>& x, const std::vector<T>& weight, int cout, const Batch<T>& dy, Batch<T>* dx,
                      std::vector<T>& dweight, std::vector<T>& dbias) {
    const int h = x.h, w = x.w, cin = x.c, pw = w + 2;
    const Eigen::Index rows = static_cast<Eigen::Index>(h) * pw - 2;
    if (dx) *dx = Batch<T>(x.n, h, w, cin);
    std::vector<T> padded;
    std::vector<T> dpadded;
    MatR<T> dext(rows, cout);
    for (int n = 0; n < x.n; ++n) {
        pad_sample(x.sample(n), h, w, cin, padded);
        dext.setZero();
        const T* g = dy.sample(n);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                const T* src = g + (static_cast<std::size_t>(yy) * w + xx) * cout;
                T* dst = dext.data() + (static_cast<std::size_t>(yy) * pw + xx) * cout;
                for (int c = 0; c < cout; ++c) {
                    dst[c] = src[c];
                    dbias[c] += src[c];
                }
            }
        if (dx) dpadded.assign(padded.size(), T{});
        for (int k = 0; k < 9; ++k) {
            const int shift = (k / 3) * pw + (k % 3);
            CMapR<T> pk(padded.data() + static_cast<std::size_t>(shift) * cin, rows, cin);
            MapR<T>(dweight.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout).noalias() +=
                pk.transpose() * dext;
            if (dx) {
                CMapR<T> wk(weight.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout);
                MapR<T>(dpadded.data() + static_cast<std::size_t>(shift) * cin, rows, cin).noalias() +=
                    dext * wk.transpose();
            }
        }
        if (dx) {
            T* out = dx->sample(n);
            for (int yy = 0; yy < h; ++yy)
                std::copy_n(dpadded.data() + (static_cast<std::size_t>(yy + 1) * pw + 1) * cin,
                            static_cast<std::size_t>(w) * cin, out + static_cast<std::size_t>(yy) * w * cin);
        }
    }
}

template <class T>
void conv1x1_forward(const Batch<T>& x, const std::vector<T>& weight, const std::vector<T>& bias, int cout,
                     Batch<T>& y) {
    y = Batch<T>(x.n, x.h, x.w, cout);
    const Eigen::Index rows = static_cast<Eigen::Index>(x.pixels());
    MapR<T> out(y.data.data(), rows, cout);
    out.noalias() = CMapR<T>(x.data.data(), rows, x.c) * CMapR<T>(weight.data(), x.c, cout);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int c = 0; c < cout; ++c) out(r, c) += bias[c];
}

template <class T>
void conv1x1_backward(const Batch<T>& x, const std::vector<T>& weight, int cout, const Batch<T>& dy, Batch<T>& dx,
                      std::vector<T>& dweight, std::vector<T>& dbias) {
    const Eigen::Index rows = static_cast<Eigen::Index>(x.pixels());
    CMapR<T> g(dy.data.data(), rows, cout);
    CMapR<T> in(x.data.data(), rows, x.c);
    MapR<T>(dweight.data(), x.c, cout).noalias() += in.transpose() * g;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int c = 0; c < cout; ++c) dbias[c] += g(r, c);
    dx = Batch<T>(x.n, x.h, x.w, x.c);
    MapR<T>(dx.data.data(), rows, x.c).noalias() = g * CMapR<T>(weight.data(), x.c, cout).transpose();
}

// 2×2 stride-2 transposed convolution: input pixel (i, j) writes the output block
// (2i + dy, 2j + dx) through tap weight[dy][dx].
template <class T>
void upconv_forward(const Batch<T>& x, const std::vector<T>& weight, const std::vector<T>& bias, int cout,
                    Batch<T>& y) {
    y = Batch<T>(x.n, 2 * x.h, 2 * x.w, cout);
    const Eigen::Index rows = static_cast<Eigen::Index>(x.h) * x.w;
    MatR<T> tap(rows, cout);
    for (int n = 0; n < x.n; ++n) {
        CMapR<T> in(x.sample(n), rows, x.c);
        T* out = y.sample(n);
        for (int k = 0; k < 4; ++k) {
            const int dy = k / 2, dx = k % 2;
            tap.noalias() = in * CMapR<T>(weight.data() + static_cast<std::size_t>(k) * x.c * cout, x.c, cout);
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const T* src = tap.data() + (static_cast<std::size_t>(i) * x.w + j) * cout;
                    T* dst = out + (static_cast<std::size_t>(2 * i + dy) * y.w + 2 * j + dx) * cout;
                    for (int c = 0; c < cout; ++c) dst[c] = src[c] + bias[c];
                }
        }
    }
}

template <class T>
void upconv_backward(const Batch<T>& x, const std::vector<T>& weight, int cout, const Batch<T>& dy, Batch<T>& dx,
                     std::vector<T>& dweight, std::vector<T>& dbias) {
    dx = Batch<T>(x.n, x.h, x.w, x.c);
    const Eigen::Index rows = static_cast<Eigen::Index>(x.h) * x.w;
    MatR<T> tap(rows, cout);
    for (int n = 0; n < x.n; ++n) {
        CMapR<T> in(x.sample(n), rows, x.c);
        MapR<T> din(dx.sample(n), rows, x.c);
        const T* g = dy.sample(n);
        for (int k = 0; k < 4; ++k) {
            const int oy = k / 2, ox = k % 2;
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const T* src = g + (static_cast<std::size_t>(2 * i + oy) * dy.w + 2 * j + ox) * cout;
                    T* dst = tap.data() + (static_cast<std::size_t>(i) * x.w + j) * cout;
                    for (int c = 0; c < cout; ++c) {
                        dst[c] = src[c];
                        dbias[c] += src[c];
                    }
                }
            MapR<T>(dweight.data() + static_cast<std::size_t>(k) * x.c * cout, x.c, cout).noalias() +=
                in.transpose() * tap;
            din.noalias() += tap * CMapR<T>(weight.data() + static_cast<std::size_t>(k) * x.c * cout, x.c, cout).transpose();
        }
    }
}

struct BnSlots {
    std::size_t gamma, beta, mean, var;
};

template <class T>
struct BnCache {
    std::vector<T> xhat;
    std::vector<double> invstd;
};

// In place: z becomes γ·x̂ + β.
template <class T>
void batchnorm_forward(Batch<T>& z, UNetParams<T>& p, const BnSlots& s, Mode mode, double eps, double momentum,
                       BnCache<T>* cache) {
    const int c = z.c;
    const std::size_t m = z.pixels();
    const auto& gamma = p.tensors[s.gamma].data;
    const auto& beta = p.tensors[s.beta].data;
    auto& rmean = p.tensors[s.mean].data;
    auto& rvar = p.tensors[s.var].data;
    std::vector<double> mean(c, 0.0), invstd(c, 0.0);
    if (mode == Mode::Train) {
        std::vector<double> var(c, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (int k = 0; k < c; ++k) mean[k] += z.data[i * c + k];
        for (int k = 0; k < c; ++k) mean[k] /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (int k = 0; k < c; ++k) {
                const double d = z.data[i * c + k] - mean[k];
                var[k] += d * d;
            }
        for (int k = 0; k < c; ++k) {
            var[k] /= static_cast<double>(m);
            invstd[k] = 1.0 / std::sqrt(var[k] + eps);
            const double unbiased = m > 1 ? var[k] * static_cast<double>(m) / static_cast<double>(m - 1) : var[k];
            rmean[k] = static_cast<T>(momentum * rmean[k] + (1.0 - momentum) * mean[k]);
            rvar[k] = static_cast<T>(momentum * rvar[k] + (1.0 - momentum) * unbiased);
        }
    } else {
        for (int k = 0; k < c; ++k) {
            mean[k] = rmean[k];
            invstd[k] = 1.0 / std::sqrt(static_cast<double>(rvar[k]) + eps);
        }
    }
    if (cache) {
        cache->xhat.resize(z.data.size());
        cache->invstd = invstd;
    }
    for (std::size_t i = 0; i < m; ++i)
        for (int k = 0; k < c; ++k) {
            const std::size_t idx = i * c + k;
            const T xhat = static_cast<T>((z.data[idx] - mean[k]) * invstd[k]);
            if (cache) cache->xhat[idx] = xhat;
            z.data[idx] = gamma[k] * xhat + beta[k];
        }
}

// In place: dz (gradient w.r.t. BN output) becomes the gradient w.r.t. BN input.
template <class T>
void batchnorm_backward(Batch<T>& dz, const std::vector<T>& gamma, const BnCache<T>& cache, std::vector<T>& dgamma,
                        std::vector<T>& dbeta) {
    const int c = dz.c;
    const std::size_t m = dz.pixels();
    std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0), sum_g(c, 0.0), sum_g_xhat(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (int k = 0; k < c; ++k) {
            const std::size_t idx = i * c + k;
            const double g = dz.data[idx];
            sum_g[k] += g;
            sum_g_xhat[k] += g * cache.xhat[idx];
        }
    for (int k = 0; k < c; ++k) {
        dgamma[k] += static_cast<T>(sum_g_xhat[k]);
        dbeta[k] += static_cast<T>(sum_g[k]);
        sum_dxhat[k] = sum_g[k] * gamma[k];
        sum_dxhat_xhat[k] = sum_g_xhat[k] * gamma[k];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        for (int k = 0; k < c; ++k) {
            const std::size_t idx = i * c + k;
            const double dxhat = static_cast<double>(dz.data[idx]) * gamma[k];
            dz.data[idx] = static_cast<T>(cache.invstd[k] * inv_m *
                                          (static_cast<double>(m) * dxhat - sum_dxhat[k] - cache.xhat[idx] * sum_dxhat_xhat[k]));
        }
}

template <class T>
void elu_forward(Batch<T>& z, double alpha) {
    const T a = static_cast<T>(alpha);
    for (T& v : z.data)
        if (!(v > T{0})) v = a * std::expm1(v);
}

// In place on dy; `out` is the ELU output.
template <class T>
void elu_backward(Batch<T>& dy, const Batch<T>& out, double alpha) {
    const T a = static_cast<T>(alpha);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (!(out.data[i] > T{0})) dy.data[i] *= out.data[i] + a;
}

template <class T>
void maxpool_forward(const Batch<T>& x, Batch<T>& y, std::vector<std::uint8_t>& argmax) {
    y = Batch<T>(x.n, x.h / 2, x.w / 2, x.c);
    argmax.assign(y.data.size(), 0);
    for (int n = 0; n < x.n; ++n) {
        const T* in = x.sample(n);
        T* out = y.sample(n);
        std::uint8_t* am = argmax.data() + static_cast<std::size_t>(n) * y.h * y.w * y.c;
        for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j)
                for (int c = 0; c < x.c; ++c) {
                    T best = in[(static_cast<std::size_t>(2 * i) * x.w + 2 * j) * x.c + c];
                    std::uint8_t which = 0;
                    for (std::uint8_t k = 1; k < 4; ++k) {
                        const T v = in[(static_cast<std::size_t>(2 * i + k / 2) * x.w + 2 * j + k % 2) * x.c + c];
                        if (v > best) {
                            best = v;
                            which = k;
                        }
                    }
                    const std::size_t o = (static_cast<std::size_t>(i) * y.w + j) * y.c + c;
                    out[o] = best;
                    am[o] = which;
                }
    }
}

template <class T>
void maxpool_backward(const Batch<T>& dy, const std::vector<std::uint8_t>& argmax, Batch<T>& dx) {
    for (int n = 0; n < dy.n; ++n) {
        const T* g = dy.sample(n);
        T* out = dx.sample(n);
        const std::uint8_t* am = argmax.data() + static_cast<std::size_t>(n) * dy.h * dy.w * dy.c;
        for (int i = 0; i < dy.h; ++i)
            for (int j = 0; j < dy.w; ++j)
                for (int c = 0; c < dy.c; ++c) {
                    const std::size_t o = (static_cast<std::size_t>(i) * dy.w + j) * dy.c + c;
                    const int k = am[o];
                    out[(static_cast<std::size_t>(2 * i + k / 2) * dx.w + 2 * j + k % 2) * dx.c + c] += g[o];
                }
    }
}

template <class T>
Batch<T> concat_channels(const Batch<T>& a, const Batch<T>& b) {
    Batch<T> out(a.n, a.h, a.w, a.c + b.c);
    const std::size_t m = a.pixels();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data.data() + i * a.c, a.c, out.data.data() + i * out.c);
        std::copy_n(b.data.data() + i * b.c, b.c, out.data.data() + i * out.c + a.c);
    }
    return out;
}

template <class T>
void softmax_inplace(Batch<T>& z) {
    const int c = z.c;
    for (std::size_t i = 0; i < z.pixels(); ++i) {
        T* px = z.data.data() + i * c;
        const T mx = *std::max_element(px, px + c);
        double sum = 0.0;
        for (int k = 0; k < c; ++k) {
            px[k] = std::exp(px[k] - mx);
            sum += px[k];
        }
        for (int k = 0; k < c; ++k) px[k] = static_cast<T>(px[k] / sum);
    }
}

struct ConvUnitSlots {
    std::size_t weight, bias;
    BnSlots bn;
};

struct EncSlots {
    ConvUnitSlots c1, c2;
};

struct DecSlots {
    std::size_t up_weight, up_bias;
    ConvUnitSlots c1, c2;
};

struct Slots {
    std::array<EncSlots, 4> enc;
    std::array<DecSlots, 3> dec;
    std::size_t head_weight, head_bias;
};

Slots slots_for_layout() {
    // Mirrors the order produced by param_layout().
    Slots s{};
    std::size_t i = 0;
    const auto unit = [&i]() {
        ConvUnitSlots u{};
        u.weight = i++;
        u.bias = i++;
        u.bn = BnSlots{i, i + 1, i + 2, i + 3};
        i += 4;
        return u;
    };
    for (auto& e : s.enc) {
        e.c1 = unit();
        e.c2 = unit();
    }
    for (auto& d : s.dec) {
        d.up_weight = i++;
        d.up_bias = i++;
        d.c1 = unit();
        d.c2 = unit();
    }
    s.head_weight = i++;
    s.head_bias = i++;
    return s;
}

const Slots kSlots = slots_for_layout();

}  // namespace

// ---- configuration and parameters ----------------------------------------------

void UNetConfig::validate() const {
    if (encoder_filters.size() != 4) throw Error("UNetConfig: encoder needs 4 blocks");
    if (decoder_filters.size() != 3) throw Error("UNetConfig: decoder needs 3 blocks");
    if (in_channels <= 0 || num_classes <= 0) throw Error("UNetConfig: channel counts must be positive");
    for (int f : encoder_filters)
        if (f <= 0) throw Error("UNetConfig: filter counts must be positive");
    for (int f : decoder_filters)
        if (f <= 0) throw Error("UNetConfig: filter counts must be positive");
    if (!(elu_alpha > 0.0) || !(bn_epsilon > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0))
        throw Error("UNetConfig: invalid ELU/BN hyperparameters");
}

std::size_t TensorSpec::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::vector<TensorSpec> param_layout(const UNetConfig& config) {
    config.validate();
    std::vector<TensorSpec> out;
    const auto unit = [&out](const std::string& prefix, int idx, int cin, int cout) {
        const std::string conv = prefix + ".conv" + std::to_string(idx);
        const std::string bn = prefix + ".bn" + std::to_string(idx);
        out.push_back({conv + ".weight", {3, 3, cin, cout}, ParamRole::ConvWeight});
        out.push_back({conv + ".bias", {cout}, ParamRole::ConvBias});
        out.push_back({bn + ".gamma", {cout}, ParamRole::BnScale});
        out.push_back({bn + ".beta", {cout}, ParamRole::BnShift});
        out.push_back({bn + ".running_mean", {cout}, ParamRole::BnRunningMean});
        out.push_back({bn + ".running_var", {cout}, ParamRole::BnRunningVar});
    };
    int cin = config.in_channels;
    for (int i = 0; i < 4; ++i) {
        const std::string prefix = "enc" + std::to_string(i + 1);
        const int f = config.encoder_filters[i];
        unit(prefix, 1, cin, f);
        unit(prefix, 2, f, f);
        cin = f;
    }
    for (int j = 0; j < 3; ++j) {
        const std::string prefix = "dec" + std::to_string(j + 1);
        const int f = config.decoder_filters[j];
        const int skip = config.encoder_filters[2 - j];
        out.push_back({prefix + ".up.weight", {2, 2, cin, f}, ParamRole::ConvWeight});
        out.push_back({prefix + ".up.bias", {f}, ParamRole::ConvBias});
        unit(prefix, 1, f + skip, f);
        unit(prefix, 2, f, f);
        cin = f;
    }
    out.push_back({"head.weight", {1, 1, cin, config.num_classes}, ParamRole::ConvWeight});
    out.push_back({"head.bias", {config.num_classes}, ParamRole::ConvBias});
    return out;
}

template <class T>
const ParamTensor<T>& UNetParams<T>::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.spec.name == name) return t;
    throw Error("no parameter tensor named '" + name + "'");
}

template <class T>
ParamTensor<T>& UNetParams<T>::get(const std::string& name) {
    return const_cast<ParamTensor<T>&>(static_cast<const UNetParams&>(*this).get(name));
}

template <class T>
std::size_t UNetParams<T>::trainable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors)
        if (t.spec.trainable()) n += t.data.size();
    return n;
}

template <class T>
bool UNetParams<T>::operator==(const UNetParams& o) const {
    if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].spec.name != o.tensors[i].spec.name || tensors[i].spec.shape != o.tensors[i].spec.shape)
            return false;
        // Bitwise comparison so that round trips are checked exactly.
        if (tensors[i].data.size() != o.tensors[i].data.size() ||
            std::memcmp(tensors[i].data.data(), o.tensors[i].data.data(), tensors[i].data.size() * sizeof(T)) != 0)
            return false;
    }
    return true;
}

template <class T>
UNetParams<T> init_params(const UNetConfig& config, std::uint64_t seed) {
    UNetParams<T> p;
    p.config = config;
    std::mt19937_64 rng(seed);
    for (auto& spec : param_layout(config)) {
        ParamTensor<T> t;
        t.data.assign(spec.numel(), T{});
        switch (spec.role) {
            case ParamRole::ConvWeight: {
                const int fan_in = spec.shape[0] * spec.shape[1] * spec.shape[2];
                // Transposed convolutions see one input pixel per output pixel.
                const bool upconv = spec.name.find(".up.") != std::string::npos;
                const double stddev = std::sqrt(2.0 / (upconv ? spec.shape[2] : fan_in));
                std::normal_distribution<double> dist(0.0, stddev);
                for (auto& v : t.data) v = static_cast<T>(dist(rng));
                break;
            }
            case ParamRole::BnScale:
            case ParamRole::BnRunningVar:
                std::fill(t.data.begin(), t.data.end(), T{1});
                break;
            default:
                break;
        }
        t.spec = std::move(spec);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

template <class To, class From>
UNetParams<To> convert_impl(const UNetParams<From>& in) {
    UNetParams<To> out;
    out.config = in.config;
    for (const auto& t : in.tensors) {
        ParamTensor<To> c;
        c.spec = t.spec;
        c.data.assign(t.data.begin(), t.data.end());
        out.tensors.push_back(std::move(c));
    }
    return out;
}

template <class T>
UNetParams<T> convert_params(const UNetParams<double>& params) {
    return convert_impl<T>(params);
}
template <class T>
UNetParams<T> convert_params(const UNetParams<float>& params) {
    return convert_impl<T>(params);
}

template <class T>
Batch<T> stack_images(std::span<const ImageF> images) {
    if (images.empty()) throw Error("stack_images: empty batch");
    const auto& first = images.front();
    Batch<T> b(static_cast<int>(images.size()), first.height, first.width, first.channels);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& im = images[i];
        if (im.height != b.h || im.width != b.w || im.channels != b.c)
            throw Error("stack_images: images in a batch must share their shape");
        std::copy(im.data.begin(), im.data.end(), b.sample(static_cast<int>(i)));
    }
    return b;
}

template <class T>
ImageF unstack_image(const Batch<T>& batch, int index) {
    ImageF im(batch.h, batch.w, batch.c);
    const T* src = batch.sample(index);
    for (std::size_t i = 0; i < im.data.size(); ++i) im.data[i] = static_cast<float>(src[i]);
    return im;
}

// ---- network -------------------------------------------------------------------

template <class T>
struct UNet<T>::Cache {
    struct Unit {
        BnCache<T> bn;
        Batch<T> act;  // ELU output
    };
    struct Enc {
        Batch<T> input;  // block input (network input or pooled map)
        Unit u1, u2;
        std::vector<std::uint8_t> pool_argmax;  // pooling of this block's output
    };
    struct Dec {
        Batch<T> up;      // transposed-conv output
        Batch<T> concat;  // [up, skip]
        Unit u1, u2;
    };
    std::array<Enc, 4> enc;
    std::array<Dec, 3> dec;
    Batch<T> probs;
    bool valid = false;
};

template <class T>
UNet<T>::UNet(UNetParams<T> params) : params_(std::move(params)), cache_(std::make_unique<Cache>()) {
    const auto layout = param_layout(params_.config);
    if (layout.size() != params_.tensors.size()) throw Error("UNet: parameter set does not match its config");
    for (std::size_t i = 0; i < layout.size(); ++i)
        if (layout[i].name != params_.tensors[i].spec.name || layout[i].shape != params_.tensors[i].spec.shape ||
            params_.tensors[i].data.size() != layout[i].numel())
            throw Error("UNet: tensor '" + layout[i].name + "' does not match its config");
}

template <class T>
UNet<T>::~UNet() = default;
template <class T>
UNet<T>::UNet(UNet&&) noexcept = default;
template <class T>
UNet<T>& UNet<T>::operator=(UNet&&) noexcept = default;

namespace {

template <class T, class Unit>
void unit_forward(const Batch<T>& x, UNetParams<T>& p, const ConvUnitSlots& s, Mode mode, Unit& cache) {
    const auto& cfg = p.config;
    const int cout = p.tensors[s.bias].spec.shape[0];
    conv3x3_forward(x, p.tensors[s.weight].data, p.tensors[s.bias].data, cout, cache.act);
    batchnorm_forward(cache.act, p, s.bn, mode, cfg.bn_epsilon, cfg.bn_momentum, mode == Mode::Train ? &cache.bn : nullptr);
    elu_forward(cache.act, cfg.elu_alpha);
}

// dact is consumed; returns the gradient w.r.t. the unit input (if wanted).
template <class T, class Unit>
void unit_backward(const Batch<T>& x, const UNetParams<T>& p, const ConvUnitSlots& s, const Unit& cache, Batch<T>& dact,
                   ParamGrads<T>& g, Batch<T>* dx) {
    elu_backward(dact, cache.act, p.config.elu_alpha);
    batchnorm_backward(dact, p.tensors[s.bn.gamma].data, cache.bn, g.grads[s.bn.gamma], g.grads[s.bn.beta]);
    const int cout = p.tensors[s.bias].spec.shape[0];
    conv3x3_backward(x, p.tensors[s.weight].data, cout, dact, dx, g.grads[s.weight], g.grads[s.bias]);
}

}  // namespace

template <class T>
Batch<T> UNet<T>::forward(const Batch<T>& input, Mode mode) {
    const auto& cfg = params_.config;
    if (input.c != cfg.in_channels)
        throw Error("forward: expected " + std::to_string(cfg.in_channels) + " input channels, got " +
                    std::to_string(input.c));
    if (input.h % 8 != 0 || input.w % 8 != 0 || input.h == 0 || input.w == 0)
        throw Error("forward: spatial size " + std::to_string(input.h) + "x" + std::to_string(input.w) +
                    " is not divisible by 8");
    Cache& c = *cache_;
    c.valid = false;
    trace_.clear();

    Batch<T> pooled;
    for (int i = 0; i < 4; ++i) {
        auto& e = c.enc[i];
        e.input = i == 0 ? input : std::move(pooled);
        unit_forward(e.input, params_, kSlots.enc[i].c1, mode, e.u1);
        unit_forward(e.u1.act, params_, kSlots.enc[i].c2, mode, e.u2);
        trace_.push_back({"enc" + std::to_string(i + 1), e.u2.act.h, e.u2.act.w, e.u2.act.c});
        if (i < 3) maxpool_forward(e.u2.act, pooled, e.pool_argmax);
    }
    const Batch<T>* prev = &c.enc[3].u2.act;
    for (int j = 0; j < 3; ++j) {
        auto& d = c.dec[j];
        const auto& s = kSlots.dec[j];
        const int f = params_.tensors[s.up_bias].spec.shape[0];
        upconv_forward(*prev, params_.tensors[s.up_weight].data, params_.tensors[s.up_bias].data, f, d.up);
        d.concat = concat_channels(d.up, c.enc[2 - j].u2.act);
        unit_forward(d.concat, params_, s.c1, mode, d.u1);
        unit_forward(d.u1.act, params_, s.c2, mode, d.u2);
        trace_.push_back({"dec" + std::to_string(j + 1), d.u2.act.h, d.u2.act.w, d.u2.act.c});
        prev = &d.u2.act;
    }
    conv1x1_forward(*prev, params_.tensors[kSlots.head_weight].data, params_.tensors[kSlots.head_bias].data,
                    cfg.num_classes, c.probs);
    softmax_inplace(c.probs);
    c.valid = mode == Mode::Train;
    return c.probs;
}

template <class T>
ParamGrads<T> UNet<T>::backward(const Batch<T>& target) {
    Cache& c = *cache_;
    if (!c.valid) throw Error("backward: no train-mode forward pass to differentiate");
    if (target.n != c.probs.n || target.h != c.probs.h || target.w != c.probs.w || target.c != c.probs.c)
        throw Error("backward: target shape does not match the last forward pass");

    ParamGrads<T> g;
    g.grads.resize(params_.tensors.size());
    for (std::size_t i = 0; i < params_.tensors.size(); ++i)
        if (params_.tensors[i].spec.trainable()) g.grads[i].assign(params_.tensors[i].data.size(), T{});

    // Softmax + cross-entropy: dL/dz = (p·Σt − t) / (N·H·W).
    Batch<T> dlogits = c.probs;
    const int k = c.probs.c;
    const double scale = 1.0 / static_cast<double>(c.probs.pixels());
    for (std::size_t i = 0; i < c.probs.pixels(); ++i) {
        const T* t = target.data.data() + i * k;
        T* d = dlogits.data.data() + i * k;
        double tsum = 0.0;
        for (int q = 0; q < k; ++q) tsum += t[q];
        for (int q = 0; q < k; ++q) d[q] = static_cast<T>((d[q] * tsum - t[q]) * scale);
    }

    Batch<T> dact;
    conv1x1_backward(c.dec[2].u2.act, params_.tensors[kSlots.head_weight].data, k, dlogits, dact,
                     g.grads[kSlots.head_weight], g.grads[kSlots.head_bias]);

    std::array<Batch<T>, 3> dskip;
    for (int j = 2; j >= 0; --j) {
        auto& d = c.dec[j];
        const auto& s = kSlots.dec[j];
        Batch<T> dmid;
        unit_backward(d.u1.act, params_, s.c2, d.u2, dact, g, &dmid);
        Batch<T> dcat;
        unit_backward(d.concat, params_, s.c1, d.u1, dmid, g, &dcat);
        const int fu = d.up.c;
        const int fs = dcat.c - fu;
        Batch<T> dup(d.up.n, d.up.h, d.up.w, fu);
        dskip[2 - j] = Batch<T>(d.up.n, d.up.h, d.up.w, fs);
        for (std::size_t i = 0; i < dup.pixels(); ++i) {
            std::copy_n(dcat.data.data() + i * dcat.c, fu, dup.data.data() + i * fu);
            std::copy_n(dcat.data.data() + i * dcat.c + fu, fs, dskip[2 - j].data.data() + i * fs);
        }
        const Batch<T>& up_in = j == 0 ? c.enc[3].u2.act : c.dec[j - 1].u2.act;
        upconv_backward(up_in, params_.tensors[s.up_weight].data, fu, dup, dact, g.grads[s.up_weight],
                        g.grads[s.up_bias]);
    }

    for (int i = 3; i >= 0; --i) {
        auto& e = c.enc[i];
        const auto& s = kSlots.enc[i];
        if (i < 3) {
            // dact currently holds the gradient w.r.t. the pooled map feeding block i + 1.
            Batch<T> dout = std::move(dskip[i]);
            maxpool_backward(dact, e.pool_argmax, dout);
            dact = std::move(dout);
        }
        Batch<T> dmid;
        unit_backward(e.u1.act, params_, s.c2, e.u2, dact, g, &dmid);
        Batch<T> din;
        unit_backward(e.input, params_, s.c1, e.u1, dmid, g, i > 0 ? &din : nullptr);
        dact = std::move(din);
    }
    return g;
}

// ---- loss ------------------------------------------------------------------------

template <class T>
double loss_xent(const Batch<T>& pred, const Batch<T>& target) {
    if (pred.n != target.n || pred.h != target.h || pred.w != target.w || pred.c != target.c)
        throw Error("loss_xent: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double t = target.data[i];
        if (t != 0.0) sum -= t * std::log(std::max(static_cast<double>(pred.data[i]), 1e-12));
    }
    return sum / static_cast<double>(pred.pixels());
}

double loss_xent(const SoftLabelMap& pred, const SoftLabelMap& target) {
    if (pred.height != target.height || pred.width != target.width || pred.channels != target.channels)
        throw Error("loss_xent: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double t = target.data[i];
        if (t != 0.0) sum -= t * std::log(std::max(static_cast<double>(pred.data[i]), 1e-12));
    }
    return sum / static_cast<double>(pred.pixels());
}

// ---- Adam ------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw Error("Adam betas must be in (0,1)");
    if (!(epsilon > 0.0)) throw Error("Adam epsilon must be positive");
    if (batch_size <= 0) throw Error("batch_size must be positive");
    if (epochs < 0) throw Error("epochs must be non-negative");
    if (max_steps < 0) throw Error("max_steps must be non-negative");
}

template <class T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const TrainConfig& cfg) {
    if (t < 1) throw Error("adam: step must be >= 1");
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
        throw Error("adam: buffer size mismatch");
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        const double mi = b1 * m[i] + (1.0 - b1) * g;
        const double vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / c1;
        const double vhat = vi / c2;
        theta[i] = static_cast<T>(theta[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

template <class T>
void adam_step(UNetParams<T>& params, const ParamGrads<T>& grads, AdamState<T>& state, std::int64_t t,
               const TrainConfig& cfg) {
    if (grads.grads.size() != params.tensors.size()) throw Error("adam: gradient set does not match parameters");
    if (state.m.size() != params.tensors.size()) {
        state.m.assign(params.tensors.size(), {});
        state.v.assign(params.tensors.size(), {});
        for (std::size_t i = 0; i < params.tensors.size(); ++i)
            if (params.tensors[i].spec.trainable()) {
                state.m[i].assign(params.tensors[i].data.size(), T{});
                state.v[i].assign(params.tensors[i].data.size(), T{});
            }
    }
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        if (!params.tensors[i].spec.trainable()) continue;
        adam_update<T>(params.tensors[i].data, grads.grads[i], state.m[i], state.v[i], t, cfg);
    }
    state.step = t;
}

// ---- explicit instantiations -----------------------------------------------------

template struct UNetParams<float>;
template struct UNetParams<double>;
template UNetParams<float> init_params<float>(const UNetConfig&, std::uint64_t);
template UNetParams<double> init_params<double>(const UNetConfig&, std::uint64_t);
template UNetParams<float> convert_params<float>(const UNetParams<double>&);
template UNetParams<double> convert_params<double>(const UNetParams<float>&);
template UNetParams<float> convert_params<float>(const UNetParams<float>&);
template UNetParams<double> convert_params<double>(const UNetParams<double>&);
template Batch<float> stack_images<float>(std::span<const ImageF>);
template Batch<double> stack_images<double>(std::span<const ImageF>);
template ImageF unstack_image<float>(const Batch<float>&, int);
template ImageF unstack_image<double>(const Batch<double>&, int);
template class UNet<float>;
template class UNet<double>;
template double loss_xent<float>(const Batch<float>&, const Batch<float>&);
template double loss_xent<double>(const Batch<double>&, const Batch<double>&);
template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 std::int64_t, const TrainConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::int64_t, const TrainConfig&);
template void adam_step<float>(UNetParams<float>&, const ParamGrads<float>&, AdamState<float>&, std::int64_t,
                               const TrainConfig&);
template void adam_step<double>(UNetParams<double>&, const ParamGrads<double>&, AdamState<double>&, std::int64_t,
                                const TrainConfig&);

}  // namespace tma
