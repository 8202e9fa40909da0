#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmagrade/preprocess.hpp"
#include "tmagrade/types.hpp"

namespace tma {

struct UNetConfig {
    int in_channels = 3;
    int num_classes = kNumClasses;
    std::vector<int> encoder_filters{64, 128, 256, 512};
    std::vector<int> decoder_filters{256, 128, 64};
    double elu_alpha = 1.0;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    /// Four encoder blocks, three decoder blocks, positive widths.
    void validate() const;
    bool operator==(const UNetConfig&) const = default;
};

enum class ParamRole : std::uint8_t { ConvWeight, ConvBias, BnScale, BnShift, BnRunningMean, BnRunningVar };

struct TensorSpec {
    std::string name;
    std::vector<int> shape;
    ParamRole role;

    std::size_t numel() const;
    bool trainable() const { return role != ParamRole::BnRunningMean && role != ParamRole::BnRunningVar; }
};

/// Every tensor of the network in its fixed order:
///
///   enc{1..4}.conv{1,2}.{weight,bias}   weight [3,3,in,out]
///   enc{1..4}.bn{1,2}.{gamma,beta,running_mean,running_var}
///   dec{1..3}.up.{weight,bias}          2×2 stride-2 transposed conv, weight [2,2,in,out]
///   dec{1..3}.conv{1,2}.*, dec{1..3}.bn{1,2}.*
///   head.{weight,bias}                  1×1 conv, weight [1,1,in,classes]
///
/// Within a block the order is conv1, bn1, conv2, bn2 (the up-convolution first for decoders).
std::vector<TensorSpec> param_layout(const UNetConfig& config);

template <class T>
struct ParamTensor {
    TensorSpec spec;
    std::vector<T> data;
};

template <class T>
struct UNetParams {
    UNetConfig config;
    std::vector<ParamTensor<T>> tensors;

    const ParamTensor<T>& get(const std::string& name) const;
    ParamTensor<T>& get(const std::string& name);
    std::size_t trainable_count() const;  // scalar count of trainable parameters
    bool operator==(const UNetParams& o) const;
};

/// Gradients aligned with UNetParams::tensors; entries of non-trainable tensors are empty.
template <class T>
struct ParamGrads {
    std::vector<std::vector<T>> grads;
};

/// He-normal convolution weights (fan-in scaled), zero biases, BN scale 1 / shift 0,
/// running statistics (0, 1). Deterministic given the seed.
template <class T>
UNetParams<T> init_params(const UNetConfig& config, std::uint64_t seed);

template <class T>
UNetParams<T> convert_params(const UNetParams<double>& params);
template <class T>
UNetParams<T> convert_params(const UNetParams<float>& params);

/// N×H×W×C batch.
template <class T>
struct Batch {
    int n = 0;
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<T> data;

    Batch() = default;
    Batch(int n_, int h_, int w_, int c_, T fill = T{})
        : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}
    std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }
    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * h * w * c; }
    const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * h * w * c; }
    bool operator==(const Batch&) const = default;
};

template <class T>
Batch<T> stack_images(std::span<const ImageF> images);
template <class T>
ImageF unstack_image(const Batch<T>& batch, int index);

enum class Mode { Train, Infer };

struct StageShape {
    std::string stage;
    int height;
    int width;
    int channels;
};

template <class T>
class UNet {
public:
    explicit UNet(UNetParams<T> params);
    ~UNet();
    UNet(UNet&&) noexcept;
    UNet& operator=(UNet&&) noexcept;

    /// Softmax probabilities. Train mode normalizes with batch statistics, updates
    /// the running statistics and keeps the activations needed by backward().
    Batch<T> forward(const Batch<T>& input, Mode mode);

    /// Exact gradients of loss_xent(last train forward, target).
    ParamGrads<T> backward(const Batch<T>& target);

    const UNetParams<T>& params() const { return params_; }
    UNetParams<T>& params() { return params_; }

    /// Spatial trace of the last forward: encoder outputs then decoder outputs.
    const std::vector<StageShape>& trace() const { return trace_; }

private:
    struct Cache;
    UNetParams<T> params_;
    std::unique_ptr<Cache> cache_;
    std::vector<StageShape> trace_;
};

/// L = −(1/(N·H·W)) Σ_pixels Σ_c target_c · log(max(pred_c, 1e-12)).
template <class T>
double loss_xent(const Batch<T>& pred, const Batch<T>& target);
double loss_xent(const SoftLabelMap& pred, const SoftLabelMap& target);

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 2;
    int epochs = 1;
    int max_steps = 0;  // 0 = no step cap
    std::uint64_t seed = 0;
    bool augment = false;

    void validate() const;
};

template <class T>
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of a flat parameter vector at step t ≥ 1.
template <class T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const TrainConfig& cfg);

/// Adam over every trainable tensor; initializes the moment buffers on first use.
template <class T>
void adam_step(UNetParams<T>& params, const ParamGrads<T>& grads, AdamState<T>& state, std::int64_t t,
               const TrainConfig& cfg);

// ---- weights file ----------------------------------------------------------
//
// "TMAW", u32 version = 1, u32 tensor count; per tensor: u32 name length, UTF-8
// name, u8 dtype (0 = f32, 1 = f64), u8 rank, u32 dims[rank], little-endian payload.
// Optional trailing section "ADM1", u8 dtype, u64 step, u32 epoch, u32 count, then
// the first and second moments of every trainable tensor in layout order.

template <class T>
struct WeightsFile {
    UNetParams<T> params;
    std::optional<AdamState<T>> adam;
    int epoch = 0;  // completed epochs when the file was written as a checkpoint
};

template <class T>
void save_weights(const std::filesystem::path& path, const UNetParams<T>& params,
                  const AdamState<T>* adam = nullptr, int epoch = 0);

/// Validates the whole file against `config` before returning anything.
template <class T>
WeightsFile<T> load_weights(const std::filesystem::path& path, const UNetConfig& config);

// ---- training ----------------------------------------------------------------

struct TrainingCase {
    std::string case_id;
    ImageF image;            // normalized canvas
    SoftLabelMap target;     // fused soft labels on the canvas
    GradeLabelMap reference; // argmax of target (lowest code on ties)
};

struct EpochLog {
    int epoch = 0;
    std::int64_t steps = 0;  // cumulative Adam steps
    double train_loss = 0.0;
    double validation_dice = 0.0;
};

struct TrainResult {
    UNetParams<float> params;       // after the last step
    UNetParams<float> best_params;  // highest validation Dice
    AdamState<float> adam;
    std::vector<EpochLog> log;
    std::vector<double> step_losses;
    int best_epoch = -1;
    int epochs_completed = 0;
};

using EpochCallback = std::function<void(const EpochLog&, const TrainResult&)>;

/// Deterministic given cfg.seed: epoch e shuffles with a seed derived from
/// (seed, e), so resuming at epoch e replays the uninterrupted run.
TrainResult train_network(UNetParams<float> init, std::span<const TrainingCase> train_cases,
                          std::span<const TrainingCase> validation_cases, const TrainConfig& cfg,
                          const AdamState<float>* resume_state = nullptr, int start_epoch = 0,
                          const EpochCallback& on_epoch = {});

/// Infer-mode forward of one canvas image (already normalized).
SoftLabelMap predict_normalized(UNet<float>& net, const ImageF& normalized_canvas);

/// Normalizes the canvas with the cohort statistics (valid region only) and predicts.
SoftLabelMap predict(UNet<float>& net, const ImageF& canvas, const CohortStats& stats, const GeometryRecord& geometry);

}  // namespace tma
