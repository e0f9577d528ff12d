#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mpsi/embedding_store.hpp"
#include "mpsi/numerics.hpp"

namespace mpsi {

/// Fusion network parameters: one tanh hidden layer over the concatenated
/// prompts, added as a residual to the prompt mean.
struct MixerParams {
    std::size_t k = 0;
    std::size_t d = 0;
    std::size_t hidden = 0;
    Mat W1;  // hidden x (k*d)
    Vec b1;  // hidden
    Mat W2;  // d x hidden
    Vec b2;  // d

    static MixerParams zeros(std::size_t k, std::size_t d, std::size_t hidden);

    std::size_t parameter_count() const;
    /// W1, b1, W2, b2 concatenated; the serialization order.
    Vec flat() const;
    void set_flat(std::span<const double> values);
    void validate() const;

    bool operator==(const MixerParams&) const = default;
};

struct StyleCode {
    Vec z_mix;
};

/// W1, b1 ~ N(0, 1/(k d)); W2, b2 zero, so the initial output is normalize(mean z_i).
MixerParams init_mixer(Rng& rng, std::size_t k, std::size_t d, std::size_t hidden);

/// z_mix = normalize(mean_i z_i + W2 tanh(W1 [z_1; ...; z_k] + b1) + b2).
StyleCode mix(const MixerParams& params, const PromptSet& prompts);

struct MixerGrad {
    MixerParams params;        // same shape as the mixer, holds dL/dtheta
    std::vector<Vec> inputs;   // dL/dz_i
};

/// Reverse-mode gradient of <grad_out, mix(params, prompts)>.
MixerGrad mix_grad(const MixerParams& params, const PromptSet& prompts, std::span<const double> grad_out);

/// Smallest alignment <u, z_i> over the prompts.
double min_alignment(std::span<const double> u, const PromptSet& prompts);

/// Fair-fusion loss (1/tau) log sum_i exp(-tau <y, z_i>), i.e. minus the soft
/// minimum of the alignments. Writes dL/dy into grad_y when non-null.
double fair_fusion_loss(std::span<const double> y, const PromptSet& prompts, double tau, Vec* grad_y = nullptr);

struct MixerTrainConfig {
    int epochs = 500;
    double lr = 0.05;
    double tau = 30.0;
    std::size_t batch = 16;
    std::uint64_t seed = 0;
};

using PromptSampler = std::function<PromptSet(Rng&)>;

struct MixerTrainResult {
    MixerParams params;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int epochs_run = 0;
};

/// Plain gradient descent on the batch-averaged fair-fusion loss. The returned
/// parameters never score worse than the starting ones on a fixed evaluation
/// batch. Throws DivergenceError on a non-finite loss.
MixerTrainResult train_mixer(MixerParams params, const PromptSampler& sampler, const MixerTrainConfig& config);

/// Sampler that always returns the same prompt tuple.
PromptSampler fixed_sampler(PromptSet prompts);

struct MaxMinResult {
    Vec direction;
    double value = 0.0;
};

/// argmax over unit u of min_i <u, z_i>. Closed form for k <= 2; otherwise
/// projected subgradient ascent from `restarts` seeded starts, best kept.
MaxMinResult maxmin_oracle(const PromptSet& prompts, int restarts = 32, std::uint64_t seed = 0);

std::vector<std::uint8_t> encode_mixer(const MixerParams& params);
MixerParams decode_mixer(std::span<const std::uint8_t> bytes);
void save_mixer(const MixerParams& params, const std::filesystem::path& path);
MixerParams load_mixer(const std::filesystem::path& path);

}  // namespace mpsi
