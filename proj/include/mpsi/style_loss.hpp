#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mpsi/blend_field.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/numerics.hpp"
#include "mpsi/prompt_mixer.hpp"

namespace mpsi {

/// Coarse-to-fine masks. Level l covers ceil(H/2^l) x ceil(W/2^l) cells, each
/// cell pooling a 2^l x 2^l block of grid positions (clipped at the border).
struct MaskPyramid {
    struct Level {
        std::size_t H = 0;
        std::size_t W = 0;
        std::vector<double> mask;  // row-major, values in [0, 1]
        double weight = 0.0;       // lambda_l, sums to 1 across levels
    };
    std::vector<Level> levels;

    std::size_t stride(std::size_t level) const { return std::size_t{1} << level; }
};

/// All-ones masks; weights default to uniform and are normalized to sum to one.
/// Throws ShapeError when 2^(levels-1) exceeds max(H, W).
MaskPyramid build_pyramid(std::size_t H, std::size_t W, std::size_t levels,
                          std::optional<std::vector<double>> level_weights = std::nullopt);

/// Unit edit directions, one per prompt, plus the fused direction when a global term is used.
struct StyleDirections {
    std::vector<Vec> styles;
    std::optional<Vec> fused;
};

/// normalize(z - z_src) when a source is given, otherwise z itself.
/// Throws DegenerateError when |z - z_src| < 1e-8.
Vec style_direction(std::span<const double> z, const std::optional<Vec>& source);

/// Per-prompt directions of a prompt set (no fused direction).
StyleDirections directions_from(const PromptSet& prompts);

/// style_direction(mix(params, prompts), prompts.source)
Vec fused_direction(const MixerParams& params, const PromptSet& prompts);

struct LossCoeffs {
    double lambda_g = 0.0;  // global fused-code term
    double lambda_c = 0.01; // content preservation
    double lambda_2 = 0.1;  // trajectory smoothness
    double eps = 1e-3;      // cosine regularizer
};

/// Term breakdown. total == sum(levels) + global + content + smoothness;
/// per_style splits sum(levels) by prompt.
struct LossReport {
    double total = 0.0;
    std::vector<double> levels;  // lambda_l * spatial(l)
    double global = 0.0;
    double content = 0.0;
    double smoothness = 0.0;
    std::vector<double> per_style;
};

/// Trajectory state for the second-order term. At the evaluation point the
/// current step is delta_t = current - previous; the penalty is
/// (lambda_2 / P) sum_p |delta_t(p) - prev_delta(p)|^2.
struct TrajectoryHistory {
    std::vector<double> previous;
    std::vector<double> prev_delta;
};

/// Mixer whose output defines the fused direction; gradients flow into it.
struct MixerBinding {
    const MixerParams& params;
    const PromptSet& prompts;
};

struct LossInputs {
    const LatentGrid& current;
    const LatentGrid& initial;
    const StyleDirections& dirs;
    const BlendField& field;
    const MaskPyramid& pyramid;
    LossCoeffs coeffs;
    const TrajectoryHistory* history = nullptr;
    /// When set (and lambda_g > 0) the fused direction is recomputed from the mixer.
    const MixerBinding* mixer = nullptr;
    /// Precomputed weights(field); recomputed when null.
    const std::vector<double>* cached_weights = nullptr;
};

struct LossGradients {
    LossReport report;
    std::vector<double> latent;        // H*W*d, same layout as LatentGrid::values
    std::vector<double> logits;        // k*H*W, zero for a frozen field
    std::optional<MixerParams> mixer;  // set when a mixer binding is attached and lambda_g > 0
};

/// Hierarchical masked directional loss plus global, content and smoothness terms.
/// Throws ConfigError when lambda_g > 0 and no fused direction is available.
LossReport dir_loss(const LossInputs& in);

/// Exact gradients of dir_loss(in).total.
LossGradients dir_loss_grad(const LossInputs& in);

}  // namespace mpsi
