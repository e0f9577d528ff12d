#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the engine's loss, mixer or softmax code.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpsi/blend_field.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/numerics.hpp"
#include "mpsi/prompt_mixer.hpp"
#include "mpsi/style_loss.hpp"

namespace mpsi::testing {

Vec naive_matvec(const Mat& W, const Vec& b, const Vec& x);

/// Mixer forward pass written out with plain loops.
Vec naive_mix(const MixerParams& p, const PromptSet& prompts);

/// exp / sum per position, no max subtraction.
std::vector<double> naive_weights(const BlendField& field);

/// Total loss recomputed position by position, grouping cells with a map.
double brute_force_total(const LossInputs& in);

/// Exact max over unit u of min_i <u, z_i>, as the norm of the min-norm point
/// of the convex hull of the prompts (enumerating every face). Valid when the
/// origin lies outside the hull.
struct HullOptimum {
    Vec direction;
    double value = 0.0;
};
HullOptimum hull_maxmin(const PromptSet& prompts);

/// Random loss configuration that owns everything a LossInputs refers to.
struct LossCase {
    LossCase() = default;
    LossCase(const LossCase&) = delete;  // binding points into this object
    LossCase& operator=(const LossCase&) = delete;

    LatentGrid initial;
    LatentGrid current;
    PromptSet prompts;
    StyleDirections dirs;
    BlendField field;
    MaskPyramid pyramid;
    LossCoeffs coeffs;
    std::optional<TrajectoryHistory> history;
    std::optional<MixerParams> mixer;
    std::optional<MixerBinding> binding;

    LossInputs inputs() const;
};

struct CaseShape {
    std::size_t H = 4, W = 4, d = 8, k = 2, levels = 2;
};

/// Fills a LossCase; `use_mixer` attaches a mixer binding, otherwise a fixed
/// fused direction is supplied when lambda_g > 0.
void fill_case(LossCase& c, std::uint64_t seed, const CaseShape& shape, bool use_mixer);

/// Shape drawn from the given seed within grids <= 8x8, k <= 4, levels <= 3.
CaseShape random_shape(std::uint64_t seed);

/// Three unit vectors in d = 8 with pairwise angles >= 30 degrees.
PromptSet asymmetric_tuple(std::uint64_t seed);

/// Standard basis e1, e2, e3 in d = 3.
PromptSet orthogonal_triple();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

std::vector<std::uint8_t> slurp(const std::filesystem::path& path);

}  // namespace mpsi::testing
