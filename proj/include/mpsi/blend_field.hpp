#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mpsi/embedding_store.hpp"

namespace mpsi {

/// Per-position style logits, k x H x W, style-major. weights() turns them
/// into blending weights that sum to one at every position.
struct BlendField {
    static constexpr double logit_clamp = 100.0;
    /// Logit scale applied to user masks; softmax(20, 0) is within 2.1e-9 of one-hot.
    static constexpr double mask_scale = 20.0;

    std::size_t k = 0;
    std::size_t H = 0;
    std::size_t W = 0;
    std::vector<double> logits;
    bool trainable = false;

    std::size_t positions() const { return H * W; }
    double& logit(std::size_t style, std::size_t p) { return logits[style * H * W + p]; }
    double logit(std::size_t style, std::size_t p) const { return logits[style * H * W + p]; }

    /// Clamps every logit into [-100, 100].
    void clamp();

    bool operator==(const BlendField&) const = default;
};

BlendField uniform_field(std::size_t k, std::size_t H, std::size_t W, bool trainable = false);

/// logits = 20 * mask. Throws DegenerateError when every mask is below 1e-6 at some position.
BlendField from_user_masks(const MaskSet& masks);

/// Per-position softmax, same layout as the logits.
std::vector<double> weights(const BlendField& field);

/// Softmax Jacobian applied per position to dL/dw. Throws UsageError on a frozen field.
std::vector<double> weights_grad(const BlendField& field, std::span<const double> upstream);

/// Same Jacobian, no trainability check; used when the caller already holds the weights.
std::vector<double> weights_vjp(std::span<const double> w, std::size_t k, std::span<const double> upstream);

/// max_p |sum_i w_i(p) - 1|
double normalization_error(std::span<const double> w, std::size_t k);

}  // namespace mpsi
