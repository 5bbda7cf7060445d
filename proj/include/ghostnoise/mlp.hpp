#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "ghostnoise/ghost_noise.hpp"
#include "ghostnoise/matrix.hpp"
#include "ghostnoise/normalization.hpp"
#include "ghostnoise/rng.hpp"
#include "ghostnoise/tensor.hpp"

namespace ghostnoise {

enum class NormKind {
    none,
    batch_norm,
    ghost_batch_norm,
    exclusive_batch_norm,
    layer_norm
};

struct LayerSpec {
    NormKind norm = NormKind::batch_norm;
    std::size_t ghost_size = 0;  // ghost/exclusive batch norm only
    double norm_eps = 1e-5;
    Injector injector = NoInjector{};
};

/// Fully-connected classifier. Each hidden layer applies
/// linear -> normalization -> injector -> learned gain/bias -> ReLU;
/// an EAGN injector may instead be placed after the gain/bias. The final
/// layer is linear. Injectors only act in train mode.
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths = {512, 300};
    std::size_t classes = 0;
    std::vector<LayerSpec> layers;  // one per hidden layer; empty = defaults
    double ema_decay = 0.9;

    void validate() const;
    bool has_batch_stat_layer() const;
};

struct LayerParams {
    Matrix w;                    // in x out
    std::vector<double> bias;    // linear bias
    std::vector<double> gain;    // post-norm gain
    std::vector<double> offset;  // post-norm offset
};

struct MlpParams {
    std::vector<LayerParams> hidden;
    Matrix out_w;
    std::vector<double> out_bias;
};

MlpParams zeros_like(const MlpParams& p);

/// Visits every parameter buffer in a fixed order. `weight` is true for the
/// buffers subject to weight decay (the weight matrices; gains and biases are
/// excluded).
void visit_param_buffers(
    MlpParams& p,
    const std::function<void(std::vector<double>& buf, bool weight)>& fn);
void visit_param_buffers(
    const MlpParams& p,
    const std::function<void(const std::vector<double>& buf, bool weight)>& fn);

std::size_t param_count(const MlpParams& p);

struct MlpModel {
    MlpSpec spec;
    MlpParams params;
    std::vector<RunningStats> running;  // per hidden layer
};

MlpModel make_mlp(const MlpSpec& spec, RngStream& rng);

// Frozen injector realizations, replayable so that finite differencing and
// backward see the exact same noise constants.
struct NoDraw {};
struct AffineDraw {
    std::vector<double> shift;  // B x C, or C when per_channel
    std::vector<double> scale;
    bool per_channel = false;
};
struct FactorDraw {
    std::vector<double> factor;  // B x C
};
struct AdditiveDraw {
    std::vector<double> eta;  // B x C
};
using LayerDraw = std::variant<NoDraw, AffineDraw, FactorDraw, AdditiveDraw>;

struct LayerCache {
    Matrix input;       // activations entering the linear map
    Matrix pre_norm;    // after linear
    Matrix normalized;  // after normalization
    std::vector<double> inv_std;    // layout depends on the norm kind
    std::vector<double> norm_mean;  // exclusive_batch_norm only (B x C)
    Matrix post_injector;
    Matrix pre_relu;  // after gain/bias (and post-affine noise, if any)
    LayerDraw draw;
    bool draw_post_affine = false;
    ChannelStats batch_stats;  // batch statistics seen by a BN-family layer
    bool has_batch_stats = false;
};

struct ForwardCache {
    Mode mode = Mode::train;
    bool batch_stats_for_eval = false;
    Matrix input;
    std::vector<LayerCache> layers;
    Matrix final_hidden;  // activations entering the output layer
    Matrix logits;
};

struct ForwardResult {
    Matrix logits;
    ForwardCache cache;
};

/// Runs the network. In train mode normalization uses batch statistics and
/// injectors draw noise from `rng` (or replay the draws of a previous cache).
/// In eval mode normalization uses running statistics and injectors are
/// skipped; `batch_stats_for_eval` instead evaluates with batch statistics,
/// for models whose running stats have not been populated yet.
ForwardResult mlp_forward(const MlpModel& model, const Matrix& x, Mode mode,
                          RngStream& rng,
                          const ForwardCache* replay = nullptr,
                          bool batch_stats_for_eval = false);

/// Tensor entry point; x must have height = width = 1 and channel count equal
/// to the model input dimension.
ForwardResult forward(const MlpModel& model, const Tensor4& x, Mode mode,
                      RngStream& rng);

struct BackwardResult {
    double loss = 0.0;
    MlpParams grads;
    Matrix input_grad;
};

/// Softmax cross-entropy loss and exact reverse-mode gradients for every
/// parameter. Normalization backward includes the dependence of the batch
/// statistics on the inputs; injector draws are constants (their backward is
/// the same affine map as forward).
BackwardResult backward(const MlpModel& model, const ForwardCache& cache,
                        std::span<const int> labels);

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix* dlogits = nullptr);

/// Fraction of rows whose argmax matches the label (ties -> lowest index).
double accuracy(const Matrix& logits, std::span<const int> labels);

/// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.
/// Weight decay applies to weight matrices only.
void sgd_step(MlpParams& params, const MlpParams& grads, MlpParams& velocity,
              double lr, double momentum, double weight_decay);

/// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay to 0
/// over the remaining steps.
double cosine_lr(std::size_t step, std::size_t total_steps,
                 std::size_t warmup_steps, double base_lr);

}  // namespace ghostnoise
