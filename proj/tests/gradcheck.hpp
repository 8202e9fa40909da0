#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "tmagrade/segnet.hpp"

namespace tma::testing {

struct GradCheckResult {
    std::map<ParamRole, int> checked;
    std::map<ParamRole, double> worst;
    std::map<ParamRole, std::string> worst_where;
};

inline Batch<double> random_batch(std::mt19937_64& rng, int n, int h, int w, int c) {
    std::normal_distribution<double> d(0.0, 1.0);
    Batch<double> b(n, h, w, c);
    for (auto& v : b.data) v = d(rng);
    return b;
}

inline Batch<double> random_target(std::mt19937_64& rng, int n, int h, int w, int c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Batch<double> t(n, h, w, c);
    for (std::size_t p = 0; p < t.pixels(); ++p) {
        double s = 0.0;
        for (int k = 0; k < c; ++k) s += t.data[p * c + k] = u(rng);
        for (int k = 0; k < c; ++k) t.data[p * c + k] /= s;
    }
    return t;
}

/// Finite differences of the train-mode loss against the analytic gradients.
/// Relative error |a − n| / max(|a|, |n|, floor); the floor keeps gradients that are
/// analytically zero (conv biases feeding batch norm) from dividing by noise.
inline GradCheckResult gradient_check(const UNetConfig& cfg, int n, int hw, int samples_per_kind, double h,
                                      std::uint64_t seed, double floor = 1e-6) {
    std::mt19937_64 rng(seed);
    auto params = init_params<double>(cfg, seed);
    // Non-trivial BN affine parameters so their gradients are exercised.
    std::normal_distribution<double> nd(0.0, 0.2);
    for (auto& t : params.tensors)
        if (t.spec.role == ParamRole::BnScale || t.spec.role == ParamRole::BnShift || t.spec.role == ParamRole::ConvBias)
            for (auto& v : t.data) v += nd(rng);
    UNet<double> net(params);
    const auto x = random_batch(rng, n, hw, hw, cfg.in_channels);
    const auto y = random_target(rng, n, hw, hw, cfg.num_classes);
    net.forward(x, Mode::Train);
    const auto grads = net.backward(y);

    GradCheckResult res;
    for (ParamRole role : {ParamRole::ConvWeight, ParamRole::ConvBias, ParamRole::BnScale, ParamRole::BnShift}) {
        std::vector<std::pair<std::size_t, std::size_t>> coords;
        for (std::size_t i = 0; i < net.params().tensors.size(); ++i)
            if (net.params().tensors[i].spec.role == role)
                for (std::size_t k = 0; k < net.params().tensors[i].data.size(); ++k) coords.emplace_back(i, k);
        std::shuffle(coords.begin(), coords.end(), rng);
        if (static_cast<int>(coords.size()) > samples_per_kind) coords.resize(samples_per_kind);
        double worst = 0.0;
        for (auto [i, k] : coords) {
            double& p = net.params().tensors[i].data[k];
            const double saved = p;
            const auto loss_at = [&](double v) {
                p = v;
                return loss_xent(net.forward(x, Mode::Train), y);
            };
            // Fourth-order central stencil.
            const double numeric =
                (loss_at(saved - 2 * h) - 8 * loss_at(saved - h) + 8 * loss_at(saved + h) - loss_at(saved + 2 * h)) /
                (12.0 * h);
            p = saved;
            const double analytic = grads.grads[i][k];
            const double rel =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            if (rel > worst) {
                worst = rel;
                res.worst_where[role] = net.params().tensors[i].spec.name + "[" + std::to_string(k) + "]";
            }
        }
        res.checked[role] = static_cast<int>(coords.size());
        res.worst[role] = worst;
    }
    return res;
}

}  // namespace tma::testing
