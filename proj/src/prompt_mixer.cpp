#include "mpsi/prompt_mixer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mpsi/errors.hpp"
#include "mpsi/mpsi1_codec.hpp"

namespace mpsi {

namespace {

constexpr double output_eps = 1e-8;

struct Forward {
    Vec x;    // concatenated prompts
    Vec act;  // tanh(W1 x + b1)
    Vec r;    // residual sum before normalization
    Vec y;    // normalized output
};

void check_shapes(const MixerParams& params, const PromptSet& prompts) {
    if (prompts.k != params.k || prompts.d != params.d) {
        throw ShapeError("mixer expects k=" + std::to_string(params.k) + ", d=" + std::to_string(params.d) +
                         "; prompts have k=" + std::to_string(prompts.k) + ", d=" + std::to_string(prompts.d));
    }
}

Forward forward(const MixerParams& p, const PromptSet& prompts) {
    check_shapes(p, prompts);
    Forward f;
    f.x.reserve(p.k * p.d);
    for (const auto& z : prompts.embeddings) f.x.insert(f.x.end(), z.begin(), z.end());

    f.act = affine(p.W1, p.b1, f.x);
    for (auto& v : f.act) v = std::tanh(v);

    f.r = affine(p.W2, p.b2, f.act);
    const double inv_k = 1.0 / static_cast<double>(p.k);
    for (std::size_t j = 0; j < p.d; ++j) {
        double mean = 0.0;
        for (const auto& z : prompts.embeddings) mean += z[j];
        f.r[j] += mean * inv_k;
    }
    f.y = normalize(f.r, output_eps);
    return f;
}

}  // namespace

MixerParams MixerParams::zeros(std::size_t k, std::size_t d, std::size_t hidden) {
    MixerParams p;
    p.k = k;
    p.d = d;
    p.hidden = hidden;
    p.W1 = Mat(hidden, k * d);
    p.b1 = Vec(hidden, 0.0);
    p.W2 = Mat(d, hidden);
    p.b2 = Vec(d, 0.0);
    return p;
}

std::size_t MixerParams::parameter_count() const {
    return W1.values.size() + b1.size() + W2.values.size() + b2.size();
}

Vec MixerParams::flat() const {
    Vec out;
    out.reserve(parameter_count());
    out.insert(out.end(), W1.values.begin(), W1.values.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), W2.values.begin(), W2.values.end());
    out.insert(out.end(), b2.begin(), b2.end());
    return out;
}

void MixerParams::set_flat(std::span<const double> values) {
    if (values.size() != parameter_count()) throw ShapeError("mixer: flat parameter size mismatch");
    auto it = values.begin();
    auto fill = [&it](std::vector<double>& dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    fill(W1.values);
    fill(b1);
    fill(W2.values);
    fill(b2);
}

void MixerParams::validate() const {
    if (k < 1 || d < 2 || hidden < 1) throw ShapeError("mixer: need k >= 1, d >= 2, hidden >= 1");
    if (W1.rows != hidden || W1.cols != k * d || b1.size() != hidden || W2.rows != d || W2.cols != hidden ||
        b2.size() != d || W1.values.size() != hidden * k * d || W2.values.size() != d * hidden) {
        throw ShapeError("mixer: parameter shapes inconsistent with (k, d, hidden)");
    }
    if (!all_finite(flat())) throw DataError("mixer: non-finite parameter");
}

MixerParams init_mixer(Rng& rng, std::size_t k, std::size_t d, std::size_t hidden) {
    if (k < 1 || d < 2 || hidden < 1) throw std::invalid_argument("init_mixer: need k >= 1, d >= 2, hidden >= 1");
    MixerParams p = MixerParams::zeros(k, d, hidden);
    const double scale = 1.0 / std::sqrt(static_cast<double>(k * d));
    for (auto& v : p.W1.values) v = scale * rng.normal();
    for (auto& v : p.b1) v = scale * rng.normal();
    return p;
}

StyleCode mix(const MixerParams& params, const PromptSet& prompts) {
    return {forward(params, prompts).y};
}

MixerGrad mix_grad(const MixerParams& params, const PromptSet& prompts, std::span<const double> grad_out) {
    const Forward f = forward(params, prompts);
    if (grad_out.size() != params.d) throw ShapeError("mix_grad: grad_out has wrong dimension");
    const std::size_t k = params.k, d = params.d, h = params.hidden;

    const Vec dr = normalize_backward(f.r, output_eps, grad_out);

    MixerGrad g;
    g.params = MixerParams::zeros(k, d, h);
    g.params.b2 = dr;
    Vec da(h, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
            g.params.W2(i, j) = dr[i] * f.act[j];
            da[j] += params.W2(i, j) * dr[i];
        }
    }
    Vec dpre(h);
    for (std::size_t j = 0; j < h; ++j) dpre[j] = da[j] * (1.0 - f.act[j] * f.act[j]);
    g.params.b1 = dpre;

    Vec dx(k * d, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        for (std::size_t c = 0; c < k * d; ++c) {
            g.params.W1(j, c) = dpre[j] * f.x[c];
            dx[c] += params.W1(j, c) * dpre[j];
        }
    }
    const double inv_k = 1.0 / static_cast<double>(k);
    g.inputs.assign(k, Vec(d));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) g.inputs[i][j] = dx[i * d + j] + dr[j] * inv_k;
    }
    return g;
}

double min_alignment(std::span<const double> u, const PromptSet& prompts) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& z : prompts.embeddings) m = std::min(m, dot(u, z));
    return m;
}

double fair_fusion_loss(std::span<const double> y, const PromptSet& prompts, double tau, Vec* grad_y) {
    const std::size_t k = prompts.k;
    Vec neg(k);
    for (std::size_t i = 0; i < k; ++i) neg[i] = -tau * dot(y, prompts.embeddings[i]);
    const double m = *std::max_element(neg.begin(), neg.end());
    double sum = 0.0;
    for (double v : neg) sum += std::exp(v - m);
    const double loss = (m + std::log(sum)) / tau;
    if (grad_y) {
        // dL/dy = -sum_i p_i z_i with p = softmax(-tau a)
        const Vec p = softmax(neg);
        grad_y->assign(y.size(), 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < y.size(); ++j) (*grad_y)[j] -= p[i] * prompts.embeddings[i][j];
        }
    }
    return loss;
}

namespace {

double batch_loss(const MixerParams& params, const std::vector<PromptSet>& batch, double tau) {
    double total = 0.0;
    for (const auto& prompts : batch) total += fair_fusion_loss(mix(params, prompts).z_mix, prompts, tau);
    return total / static_cast<double>(batch.size());
}

}  // namespace

MixerTrainResult train_mixer(MixerParams params, const PromptSampler& sampler, const MixerTrainConfig& config) {
    if (!(config.lr > 0.0) || !(config.tau > 0.0)) throw std::invalid_argument("train_mixer: lr and tau must be > 0");
    if (config.batch < 1 || config.epochs < 0) throw std::invalid_argument("train_mixer: batch >= 1, epochs >= 0");
    params.validate();

    Rng eval_rng(config.seed ^ 0x5EEDF00DULL);
    std::vector<PromptSet> eval_batch;
    for (std::size_t b = 0; b < config.batch; ++b) eval_batch.push_back(sampler(eval_rng));

    MixerTrainResult result;
    result.initial_loss = batch_loss(params, eval_batch, config.tau);
    const MixerParams start = params;

    Rng rng(config.seed);
    const double inv_batch = 1.0 / static_cast<double>(config.batch);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Vec grad(params.parameter_count(), 0.0);
        double loss = 0.0;
        for (std::size_t b = 0; b < config.batch; ++b) {
            const PromptSet prompts = sampler(rng);
            Vec gy;
            loss += fair_fusion_loss(mix(params, prompts).z_mix, prompts, config.tau, &gy);
            const Vec gp = mix_grad(params, prompts, gy).params.flat();
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += gp[j];
        }
        loss *= inv_batch;
        if (!std::isfinite(loss) || !all_finite(grad)) {
            throw DivergenceError("train_mixer: non-finite loss at epoch " + std::to_string(epoch) +
                                  " (lr=" + std::to_string(config.lr) + ")");
        }
        Vec theta = params.flat();
        for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= config.lr * grad[j] * inv_batch;
        // The loss is bounded, so blow-up shows in the parameters first.
        if (!std::isfinite(norm(theta))) {
            throw DivergenceError("train_mixer: parameters overflowed at epoch " + std::to_string(epoch) +
                                  " (lr=" + std::to_string(config.lr) + ")");
        }
        params.set_flat(theta);
        result.epochs_run = epoch + 1;
    }

    result.final_loss = batch_loss(params, eval_batch, config.tau);
    if (!std::isfinite(result.final_loss)) {
        throw DivergenceError("train_mixer: non-finite final loss (lr=" + std::to_string(config.lr) + ")");
    }
    if (result.final_loss > result.initial_loss) {
        result.params = start;
        result.final_loss = result.initial_loss;
    } else {
        result.params = std::move(params);
    }
    return result;
}

PromptSampler fixed_sampler(PromptSet prompts) {
    return [prompts = std::move(prompts)](Rng&) { return prompts; };
}

namespace {

Vec orthogonal_unit(std::span<const double> z) {
    // First standard basis vector with the smallest overlap, Gram-Schmidt against z.
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j) {
        if (std::abs(z[j]) < std::abs(z[best])) best = j;
    }
    Vec e(z.size(), 0.0);
    e[best] = 1.0;
    const double proj = dot(e, z);
    for (std::size_t j = 0; j < z.size(); ++j) e[j] -= proj * z[j];
    return normalize(e, 1e-300);
}

Vec ascend(const PromptSet& prompts, Vec u, double& best_value) {
    constexpr int iterations = 4000;
    constexpr double step0 = 0.25;
    Vec best = u;
    best_value = min_alignment(u, prompts);
    for (int t = 0; t < iterations; ++t) {
        std::size_t arg = 0;
        double lowest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < prompts.k; ++i) {
            const double a = dot(u, prompts.embeddings[i]);
            if (a < lowest) {
                lowest = a;
                arg = i;
            }
        }
        if (lowest > best_value) {
            best_value = lowest;
            best = u;
        }
        // Riemannian subgradient step on the sphere followed by projection.
        const auto& z = prompts.embeddings[arg];
        const double step = step0 / std::sqrt(static_cast<double>(t + 1));
        for (std::size_t j = 0; j < u.size(); ++j) u[j] += step * (z[j] - lowest * u[j]);
        u = normalize(u, 1e-300);
    }
    const double last = min_alignment(u, prompts);
    if (last > best_value) {
        best_value = last;
        best = u;
    }
    return best;
}

}  // namespace

MaxMinResult maxmin_oracle(const PromptSet& prompts, int restarts, std::uint64_t seed) {
    const auto& z = prompts.embeddings;
    if (prompts.k == 1) return {z[0], 1.0};
    if (prompts.k == 2) {
        Vec s(prompts.d);
        for (std::size_t j = 0; j < prompts.d; ++j) s[j] = z[0][j] + z[1][j];
        Vec u = norm(s) > 1e-12 ? normalize(s, 1e-300) : orthogonal_unit(z[0]);
        return {u, min_alignment(u, prompts)};
    }

    Rng rng(seed);
    MaxMinResult best;
    best.value = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(restarts, 1); ++r) {
        Vec start;
        if (r == 0) {
            Vec mean(prompts.d, 0.0);
            for (const auto& e : z) {
                for (std::size_t j = 0; j < prompts.d; ++j) mean[j] += e[j];
            }
            start = norm(mean) > 1e-12 ? normalize(mean, 1e-300) : orthogonal_unit(z[0]);
        } else {
            start = normalize(rng.normal_vec(prompts.d), 1e-300);
        }
        double value = 0.0;
        Vec u = ascend(prompts, std::move(start), value);
        if (value > best.value) {
            best.value = value;
            best.direction = std::move(u);
        }
    }
    return best;
}

std::vector<std::uint8_t> encode_mixer(const MixerParams& params) {
    params.validate();
    codec::Writer w(PayloadKind::mixer_params);
    w.u32(static_cast<std::uint32_t>(params.k));
    w.u32(static_cast<std::uint32_t>(params.d));
    w.u32(static_cast<std::uint32_t>(params.hidden));
    w.f32s(params.flat());
    return w.take();
}

MixerParams decode_mixer(std::span<const std::uint8_t> bytes) {
    codec::Reader r(bytes, PayloadKind::mixer_params);
    const std::size_t k = r.u32(), d = r.u32(), h = r.u32();
    if (k < 1 || d < 2 || h < 1) throw FormatError("MPSI1 mixer: need k >= 1, d >= 2, hidden >= 1");
    MixerParams p = MixerParams::zeros(k, d, h);
    r.require_floats(p.parameter_count());
    p.set_flat(r.f32s(p.parameter_count()));
    r.finish();
    return p;
}

void save_mixer(const MixerParams& params, const std::filesystem::path& path) {
    write_file(path, encode_mixer(params));
}

MixerParams load_mixer(const std::filesystem::path& path) {
    return decode_mixer(read_file(path));
}

}  // namespace mpsi
