#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tmagrade/metrics.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/segnet.hpp"

namespace tma {
namespace {

Batch<float> stack_targets(std::span<const SoftLabelMap* const> targets) {
    const auto& first = *targets[0];
    Batch<float> b(static_cast<int>(targets.size()), first.height, first.width, first.channels);
    for (std::size_t i = 0; i < targets.size(); ++i)
        std::copy(targets[i]->data.begin(), targets[i]->data.end(), b.sample(static_cast<int>(i)));
    return b;
}

double validation_dice(UNet<float>& net, std::span<const TrainingCase> cases) {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cases) {
        const auto labels = argmax_labels(predict_normalized(net, c.image));
        bool scored = false;
        for (auto v : c.reference.data) scored |= v != kIgnoredCode;
        if (!scored) continue;
        sum += mean_dice(labels, c.reference);
        ++n;
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainResult train_network(UNetParams<float> init, std::span<const TrainingCase> train_cases,
                          std::span<const TrainingCase> validation_cases, const TrainConfig& cfg,
                          const AdamState<float>* resume_state, int start_epoch, const EpochCallback& on_epoch) {
    cfg.validate();
    if (start_epoch < 0) throw Error("start_epoch must be non-negative");
    TrainResult result;
    result.best_params = init;
    result.epochs_completed = start_epoch;
    if (resume_state) result.adam = *resume_state;
    UNet<float> net(std::move(init));
    if (cfg.epochs > start_epoch && train_cases.empty()) throw Error("training cohort is empty");

    double best_dice = -std::numeric_limits<double>::infinity();
    std::int64_t step = result.adam.step;
    bool capped = cfg.max_steps > 0 && step >= cfg.max_steps;

    for (int epoch = start_epoch; epoch < cfg.epochs && !capped; ++epoch) {
        std::vector<std::size_t> order(train_cases.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                capped = true;
                break;
            }
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ImageF> images;
            std::vector<SoftLabelMap> augmented_targets;
            std::vector<const SoftLabelMap*> targets;
            images.reserve(end - begin);
            augmented_targets.reserve(end - begin);
            for (std::size_t k = begin; k < end; ++k) {
                const auto& c = train_cases[order[k]];
                if (cfg.augment) {
                    const auto s = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), order[k]);
                    auto a = augment_case(c.image, c.target, s);
                    images.push_back(std::move(a.image));
                    augmented_targets.push_back(std::move(a.target));
                    targets.push_back(&augmented_targets.back());
                } else {
                    images.push_back(c.image);
                    targets.push_back(&c.target);
                }
            }
            const auto input = stack_images<float>(images);
            const auto target = stack_targets(targets);
            const auto probs = net.forward(input, Mode::Train);
            const double loss = loss_xent(probs, target);
            const auto grads = net.backward(target);
            adam_step(net.params(), grads, result.adam, ++step, cfg);
            result.step_losses.push_back(loss);
            loss_sum += loss;
            ++batches;
        }
        if (batches == 0) break;

        EpochLog log;
        log.epoch = epoch + 1;
        log.steps = step;
        log.train_loss = loss_sum / batches;
        log.validation_dice = validation_dice(net, validation_cases);
        result.log.push_back(log);
        result.epochs_completed = epoch + 1;
        // NaN (no validation cases) keeps the latest parameters as "best".
        if (std::isnan(log.validation_dice) || log.validation_dice > best_dice) {
            if (!std::isnan(log.validation_dice)) best_dice = log.validation_dice;
            result.best_params = net.params();
            result.best_epoch = log.epoch;
        }
        result.params = net.params();
        if (on_epoch) on_epoch(log, result);
    }
    result.params = net.params();
    return result;
}

SoftLabelMap predict_normalized(UNet<float>& net, const ImageF& normalized_canvas) {
    const std::span<const ImageF> one(&normalized_canvas, 1);
    const auto probs = net.forward(stack_images<float>(one), Mode::Infer);
    return unstack_image(probs, 0);
}

SoftLabelMap predict(UNet<float>& net, const ImageF& canvas, const CohortStats& stats, const GeometryRecord& geometry) {
    return predict_normalized(net, normalize_zscore(canvas, stats, geometry));
}

}  // namespace tma
