#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mpsi/blend_field.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/prompt_mixer.hpp"
#include "mpsi/style_loss.hpp"

namespace mpsi {

struct SolverConfig {
    double dt = 0.1;
    int steps = 500;
    double eta_w = 0.0;      // blend-logit learning rate, 0 freezes
    double eta_theta = 0.0;  // mixer learning rate, 0 freezes
    double stop_tol = 1e-6;  // relative loss change over a 10-step window; 0 disables
    int record_every = 1;

    void validate() const;
};

/// Everything a run needs. The fused direction for the global term comes from
/// the mixer when one is attached, otherwise from fused_override.
struct RunSetup {
    LatentGrid initial;
    PromptSet prompts;
    BlendField field;
    std::optional<MixerParams> mixer;
    std::optional<Vec> fused_override;
    MaskPyramid pyramid;
    LossCoeffs coeffs;
    /// Starting latent; defaults to `initial` (zero latent change).
    std::optional<LatentGrid> start;
};

struct TraceEntry {
    int step = 0;
    LossReport report;
};

struct PhaseTimings {
    double gradient_ms = 0.0;
    double update_ms = 0.0;
    double total_ms = 0.0;
};

struct RunResult {
    LatentGrid final_latent;
    BlendField final_field;
    std::optional<MixerParams> final_mixer;
    std::vector<TraceEntry> trace;
    int steps_executed = 0;
    bool stopped_early = false;
    PhaseTimings timings;
};

struct StepResult {
    LatentGrid next;
    std::optional<BlendField> field;    // set when the logits were updated
    std::optional<MixerParams> mixer;   // set when the mixer was updated
    std::vector<double> delta;          // next - current
    LossReport report;                  // loss at `current`
};

/// One explicit Euler step of the gradient flow:
///   next = current - dt * dL/dz,  logits -= eta_w * dL/dlogits,  theta -= eta_theta * dL/dtheta.
/// Throws DivergenceError (naming step_index) on a non-finite gradient.
StepResult step(const LossInputs& in, const SolverConfig& cfg, int step_index = 0);

/// Iterates step() until cfg.steps are done or the loss plateaus.
RunResult run(const RunSetup& setup, const SolverConfig& cfg);

RunResult run(const LatentGrid& initial, const PromptSet& prompts, const BlendField& field,
              const std::optional<MixerParams>& mixer, const MaskPyramid& pyramid, const LossCoeffs& coeffs,
              const SolverConfig& cfg);

/// Largest dt (found by doubling then bisection) for which every probe's loss
/// is non-increasing over `steps` steps.
double stability_probe(const std::vector<RunSetup>& family, int steps = 100, double dt_guess = 1.0);

/// Seeded small tasks (k = 2, 4x4 grid, d = 8, two levels, learned weights off)
/// starting from a perturbed latent.
std::vector<RunSetup> standard_probe_family(std::uint64_t seed = 1, std::size_t count = 4);

}  // namespace mpsi
