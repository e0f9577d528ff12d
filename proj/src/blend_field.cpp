#include "mpsi/blend_field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mpsi/errors.hpp"

namespace mpsi {

void BlendField::clamp() {
    for (auto& v : logits) v = std::clamp(v, -logit_clamp, logit_clamp);
}

BlendField uniform_field(std::size_t k, std::size_t H, std::size_t W, bool trainable) {
    if (k < 1 || H < 1 || W < 1) throw std::invalid_argument("uniform_field: k, H, W must be >= 1");
    return BlendField{k, H, W, std::vector<double>(k * H * W, 0.0), trainable};
}

BlendField from_user_masks(const MaskSet& masks) {
    if (masks.k < 1 || masks.H < 1 || masks.W < 1 || masks.values.size() != masks.k * masks.H * masks.W) {
        throw ShapeError("from_user_masks: mask dimensions inconsistent");
    }
    const std::size_t P = masks.H * masks.W;
    for (std::size_t p = 0; p < P; ++p) {
        bool covered = false;
        for (std::size_t i = 0; i < masks.k; ++i) covered = covered || masks.at(i, p) >= 1e-6;
        if (!covered) {
            throw DegenerateError("from_user_masks: no style covers position (" + std::to_string(p / masks.W) + ", " +
                                  std::to_string(p % masks.W) + ")");
        }
    }
    BlendField f{masks.k, masks.H, masks.W, std::vector<double>(masks.values.size()), false};
    for (std::size_t n = 0; n < masks.values.size(); ++n) {
        if (masks.values[n] < 0.0 || masks.values[n] > 1.0) throw DataError("from_user_masks: value outside [0, 1]");
        f.logits[n] = BlendField::mask_scale * masks.values[n];
    }
    return f;
}

std::vector<double> weights(const BlendField& field) {
    const std::size_t P = field.positions(), k = field.k;
    std::vector<double> w(k * P);
    for (std::size_t p = 0; p < P; ++p) {
        double m = field.logit(0, p);
        for (std::size_t i = 1; i < k; ++i) m = std::max(m, field.logit(i, p));
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double e = std::exp(field.logit(i, p) - m);
            w[i * P + p] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < k; ++i) w[i * P + p] /= sum;
    }
    return w;
}

std::vector<double> weights_vjp(std::span<const double> w, std::size_t k, std::span<const double> upstream) {
    if (w.size() != upstream.size() || k == 0 || w.size() % k != 0) throw ShapeError("weights_vjp: shape mismatch");
    const std::size_t P = w.size() / k;
    std::vector<double> g(w.size());
    for (std::size_t p = 0; p < P; ++p) {
        double mean = 0.0;
        for (std::size_t i = 0; i < k; ++i) mean += w[i * P + p] * upstream[i * P + p];
        for (std::size_t i = 0; i < k; ++i) g[i * P + p] = w[i * P + p] * (upstream[i * P + p] - mean);
    }
    return g;
}

std::vector<double> weights_grad(const BlendField& field, std::span<const double> upstream) {
    if (!field.trainable) throw UsageError("weights_grad: field is frozen");
    if (upstream.size() != field.logits.size()) throw ShapeError("weights_grad: upstream has wrong size");
    return weights_vjp(weights(field), field.k, upstream);
}

double normalization_error(std::span<const double> w, std::size_t k) {
    const std::size_t P = w.size() / k;
    double worst = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += w[i * P + p];
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

}  // namespace mpsi
