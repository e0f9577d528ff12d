#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mpsi::cli {

struct GradcheckConfig {
    std::uint64_t seed = 1;
    std::size_t cases = 3;
    std::size_t d = 8;
    std::size_t H = 3;
    std::size_t W = 3;
    std::size_t k = 2;
    std::size_t levels = 2;
    double h = 1e-5;
    double tolerance = 1e-4;
    /// Magnitude below which a component is compared absolutely.
    double small = 1e-6;
    double small_tolerance = 1e-7;
    /// Test hook: perturb the analytic gradient of this class.
    std::optional<std::string> corrupt;
};

struct ClassResult {
    std::string name;
    double worst_rel = 0.0;        // over components with magnitude >= small
    double worst_abs_small = 0.0;  // over components with magnitude < small
    std::size_t components = 0;
    bool pass = true;
};

/// Finite-difference audit of every analytic gradient in the engine. Classes:
/// mixer_params, mixer_inputs, blend_weights, loss_latent, loss_logits,
/// loss_mixer, solver_step.
std::vector<ClassResult> run_gradcheck(const GradcheckConfig& cfg);

}  // namespace mpsi::cli
