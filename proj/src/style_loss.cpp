#include "mpsi/style_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mpsi/errors.hpp"

namespace mpsi {

MaskPyramid build_pyramid(std::size_t H, std::size_t W, std::size_t levels,
                          std::optional<std::vector<double>> level_weights) {
    if (levels < 1) throw ShapeError("build_pyramid: need at least one level");
    if (H < 1 || W < 1) throw ShapeError("build_pyramid: grid dims must be positive");
    if (levels > 63 || (std::size_t{1} << (levels - 1)) > std::max(H, W)) {
        throw ShapeError("build_pyramid: " + std::to_string(levels) + " levels is too many for a " + std::to_string(H) +
                         "x" + std::to_string(W) + " grid");
    }
    std::vector<double> lw = level_weights.value_or(std::vector<double>(levels, 1.0));
    if (lw.size() != levels) throw ShapeError("build_pyramid: level_weights must have one entry per level");
    double sum = 0.0;
    for (double v : lw) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("build_pyramid: level weights must be >= 0");
        sum += v;
    }
    if (!(sum > 0.0)) throw std::invalid_argument("build_pyramid: level weights sum to zero");

    MaskPyramid pyr;
    for (std::size_t l = 0; l < levels; ++l) {
        const std::size_t s = std::size_t{1} << l;
        MaskPyramid::Level level;
        level.H = (H + s - 1) / s;
        level.W = (W + s - 1) / s;
        level.mask.assign(level.H * level.W, 1.0);
        level.weight = lw[l] / sum;
        pyr.levels.push_back(std::move(level));
    }
    return pyr;
}

Vec style_direction(std::span<const double> z, const std::optional<Vec>& source) {
    if (!source) return Vec(z.begin(), z.end());
    if (source->size() != z.size()) throw ShapeError("style_direction: source has wrong dimension");
    Vec diff(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) diff[j] = z[j] - (*source)[j];
    if (norm(diff) < 1e-8) throw DegenerateError("style_direction: prompt coincides with the source embedding");
    return normalize(diff, 1e-8);
}

StyleDirections directions_from(const PromptSet& prompts) {
    StyleDirections dirs;
    for (const auto& z : prompts.embeddings) dirs.styles.push_back(style_direction(z, prompts.source));
    return dirs;
}

Vec fused_direction(const MixerParams& params, const PromptSet& prompts) {
    return style_direction(mix(params, prompts).z_mix, prompts.source);
}

namespace {

void validate(const LossInputs& in) {
    const auto& cur = in.current;
    if (!cur.same_shape(in.initial)) throw ShapeError("dir_loss: current and initial grids differ in shape");
    if (cur.values.size() != cur.H * cur.W * cur.d) throw ShapeError("dir_loss: latent value count mismatch");
    if (in.field.H != cur.H || in.field.W != cur.W) throw ShapeError("dir_loss: blend field does not match grid");
    if (in.dirs.styles.size() != in.field.k) throw ShapeError("dir_loss: one direction per style required");
    for (const auto& dir : in.dirs.styles) {
        if (dir.size() != cur.d) throw ShapeError("dir_loss: style direction has wrong dimension");
    }
    if (in.pyramid.levels.empty() || in.pyramid.levels[0].H != cur.H || in.pyramid.levels[0].W != cur.W) {
        throw ShapeError("dir_loss: pyramid level 0 does not match grid");
    }
    const auto& c = in.coeffs;
    if (!(c.lambda_g >= 0.0 && c.lambda_c >= 0.0 && c.lambda_2 >= 0.0 && c.eps >= 0.0)) {
        throw ConfigError("dir_loss: coefficients must be non-negative");
    }
    if (in.history) {
        const std::size_t n = cur.values.size();
        if (in.history->previous.size() != n || in.history->prev_delta.size() != n) {
            throw ShapeError("dir_loss: trajectory history does not match grid");
        }
    }
    if (c.lambda_g > 0.0 && !in.mixer && !in.dirs.fused) {
        throw ConfigError("dir_loss: lambda_g > 0 needs a fused direction or an attached mixer");
    }
    if (in.dirs.fused && in.dirs.fused->size() != cur.d) throw ShapeError("dir_loss: fused direction has wrong dimension");
}

LossGradients evaluate(const LossInputs& in, bool want_grad) {
    validate(in);
    const LatentGrid& cur = in.current;
    const std::size_t H = cur.H, W = cur.W, d = cur.d, P = H * W, k = in.field.k;
    const LossCoeffs& c = in.coeffs;
    const double eps2 = c.eps * c.eps;
    const double inv_P = 1.0 / static_cast<double>(P);

    std::vector<double> owned_w;
    if (!in.cached_weights) owned_w = weights(in.field);
    const std::vector<double>& w = in.cached_weights ? *in.cached_weights : owned_w;
    if (w.size() != k * P) throw ShapeError("dir_loss: cached weights have wrong size");

    std::vector<double> delta(P * d);
    for (std::size_t n = 0; n < delta.size(); ++n) delta[n] = cur.values[n] - in.initial.values[n];

    LossGradients out;
    LossReport& rep = out.report;
    rep.levels.assign(in.pyramid.levels.size(), 0.0);
    rep.per_style.assign(k, 0.0);

    const bool grad_w = want_grad && in.field.trainable;
    if (want_grad) out.latent.assign(P * d, 0.0);
    std::vector<double> upstream_w;
    if (grad_w) upstream_w.assign(k * P, 0.0);

    std::vector<double> pooled(d), wbar(k), ab(k), g_cell(d);
    for (std::size_t l = 0; l < in.pyramid.levels.size(); ++l) {
        const auto& level = in.pyramid.levels[l];
        const std::size_t s = in.pyramid.stride(l);
        const double coef = level.weight / static_cast<double>(level.H * level.W);
        double level_sum = 0.0;
        for (std::size_t cr = 0; cr < level.H; ++cr) {
            for (std::size_t cc = 0; cc < level.W; ++cc) {
                const double m = level.mask[cr * level.W + cc];
                if (m == 0.0) continue;
                const std::size_t r0 = cr * s, r1 = std::min(r0 + s, H);
                const std::size_t c0 = cc * s, c1 = std::min(c0 + s, W);
                const double n_cell = static_cast<double>((r1 - r0) * (c1 - c0));

                const double* a = nullptr;
                if (s == 1) {
                    const std::size_t p = r0 * W + c0;
                    a = delta.data() + p * d;
                    for (std::size_t i = 0; i < k; ++i) wbar[i] = w[i * P + p];
                } else {
                    std::fill(pooled.begin(), pooled.end(), 0.0);
                    std::fill(wbar.begin(), wbar.end(), 0.0);
                    for (std::size_t r = r0; r < r1; ++r) {
                        for (std::size_t col = c0; col < c1; ++col) {
                            const std::size_t p = r * W + col;
                            const double* dz = delta.data() + p * d;
                            for (std::size_t j = 0; j < d; ++j) pooled[j] += dz[j];
                            for (std::size_t i = 0; i < k; ++i) wbar[i] += w[i * P + p];
                        }
                    }
                    for (auto& v : pooled) v /= n_cell;
                    for (auto& v : wbar) v /= n_cell;
                    a = pooled.data();
                }

                double nn = 0.0;
                for (std::size_t j = 0; j < d; ++j) nn += a[j] * a[j];
                const double sden = std::sqrt(nn + eps2);
                if (sden == 0.0) throw DegenerateError("dir_loss: zero latent change with eps = 0");

                double cell_sum = 0.0;
                double weighted_ab = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    const double* dir = in.dirs.styles[i].data();
                    double t = 0.0;
                    for (std::size_t j = 0; j < d; ++j) t += a[j] * dir[j];
                    ab[i] = t;
                    const double e = 1.0 - t / sden;
                    cell_sum += wbar[i] * e;
                    rep.per_style[i] += coef * m * wbar[i] * e;
                    weighted_ab += wbar[i] * t;
                }
                level_sum += m * cell_sum;
                if (!want_grad) continue;

                // d/da of sum_i wbar_i (1 - <a, b_i>/s) = -sum_i wbar_i b_i / s + (sum_i wbar_i <a, b_i>) a / s^3
                const double scale = coef * m / n_cell;
                const double inv_s = 1.0 / sden;
                const double radial = weighted_ab * inv_s * inv_s * inv_s;
                for (std::size_t j = 0; j < d; ++j) g_cell[j] = radial * a[j];
                for (std::size_t i = 0; i < k; ++i) {
                    const double f = wbar[i] * inv_s;
                    const double* dir = in.dirs.styles[i].data();
                    for (std::size_t j = 0; j < d; ++j) g_cell[j] -= f * dir[j];
                }
                for (std::size_t r = r0; r < r1; ++r) {
                    for (std::size_t col = c0; col < c1; ++col) {
                        const std::size_t p = r * W + col;
                        double* g = out.latent.data() + p * d;
                        for (std::size_t j = 0; j < d; ++j) g[j] += scale * g_cell[j];
                        if (grad_w) {
                            for (std::size_t i = 0; i < k; ++i) {
                                upstream_w[i * P + p] += scale * (1.0 - ab[i] * inv_s);
                            }
                        }
                    }
                }
            }
        }
        rep.levels[l] = coef * level_sum;
    }

    // Global term on the mean latent change.
    if (c.lambda_g > 0.0) {
        Vec mean(d, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            const double* dz = delta.data() + p * d;
            for (std::size_t j = 0; j < d; ++j) mean[j] += dz[j];
        }
        for (auto& v : mean) v *= inv_P;

        Vec zmix;
        Vec fused;
        if (in.mixer) {
            zmix = mix(in.mixer->params, in.mixer->prompts).z_mix;
            fused = style_direction(zmix, in.mixer->prompts.source);
        } else {
            fused = *in.dirs.fused;
        }
        rep.global = c.lambda_g * eps_cosine(mean, fused, c.eps);

        if (want_grad) {
            const Vec ga = eps_cosine_grad(mean, fused, c.eps);
            for (std::size_t p = 0; p < P; ++p) {
                double* g = out.latent.data() + p * d;
                for (std::size_t j = 0; j < d; ++j) g[j] += c.lambda_g * ga[j] * inv_P;
            }
            if (in.mixer) {
                Vec gdir = eps_cosine_grad_dir(mean, fused, c.eps);
                for (auto& v : gdir) v *= c.lambda_g;
                Vec gz = gdir;
                if (const auto& src = in.mixer->prompts.source) {
                    Vec diff(d);
                    for (std::size_t j = 0; j < d; ++j) diff[j] = zmix[j] - (*src)[j];
                    gz = normalize_backward(diff, 1e-8, gdir);
                }
                out.mixer = mix_grad(in.mixer->params, in.mixer->prompts, gz).params;
            }
        }
    }

    // Content preservation.
    if (c.lambda_c > 0.0) {
        double sq = 0.0;
        for (double v : delta) sq += v * v;
        rep.content = c.lambda_c * inv_P * sq;
        if (want_grad) {
            const double f = 2.0 * c.lambda_c * inv_P;
            for (std::size_t n = 0; n < delta.size(); ++n) out.latent[n] += f * delta[n];
        }
    }

    // Second-order trajectory smoothness.
    if (in.history && c.lambda_2 > 0.0) {
        const auto& prev = in.history->previous;
        const auto& pd = in.history->prev_delta;
        double sq = 0.0;
        const double f = 2.0 * c.lambda_2 * inv_P;
        for (std::size_t n = 0; n < delta.size(); ++n) {
            const double acc = (cur.values[n] - prev[n]) - pd[n];
            sq += acc * acc;
            if (want_grad) out.latent[n] += f * acc;
        }
        rep.smoothness = c.lambda_2 * inv_P * sq;
    }

    rep.total = std::accumulate(rep.levels.begin(), rep.levels.end(), 0.0) + rep.global + rep.content + rep.smoothness;

    if (want_grad) {
        out.logits = grad_w ? weights_vjp(w, k, upstream_w) : std::vector<double>(k * P, 0.0);
        if (in.mixer && c.lambda_g > 0.0 && !out.mixer) {
            out.mixer = MixerParams::zeros(in.mixer->params.k, in.mixer->params.d, in.mixer->params.hidden);
        }
    }
    return out;
}

}  // namespace

LossReport dir_loss(const LossInputs& in) {
    return evaluate(in, false).report;
}

LossGradients dir_loss_grad(const LossInputs& in) {
    return evaluate(in, true);
}

}  // namespace mpsi
