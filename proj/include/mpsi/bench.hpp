#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpsi/embedding_store.hpp"
#include "mpsi/prompt_mixer.hpp"
#include "mpsi/solver.hpp"
#include "mpsi/style_loss.hpp"

namespace mpsi::bench {

enum class Strategy { single, linear, mixed };

const char* to_string(Strategy s);

/// One comparison task: prompts, content latent and an a-priori assignment of
/// grid positions to styles used only for evaluation (and for the user masks
/// of the mixed strategy).
struct BenchTask {
    std::uint64_t seed = 0;
    double angle_deg = 0.0;
    PromptSet prompts;
    LatentGrid initial;
    std::vector<std::size_t> assignment;  // H*W style indices
    SolverConfig solver;
    LossCoeffs coeffs;
    std::size_t levels = 2;
    bool learned_weights = false;
    std::size_t hidden = 0;  // 0 -> 2 d
    MixerTrainConfig mixer_train;
};

struct StrategyResult {
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::single;
    std::size_t k = 0;
    double angle_deg = 0.0;
    std::size_t H = 0;
    std::size_t W = 0;
    int steps = 0;
    double regional = 0.0;
    std::vector<double> global;  // cos(mean latent change, direction_i) per prompt
    double joint = 0.0;          // min over global
    double wall_ms = 0.0;
};

struct SuiteConfig {
    std::size_t tasks = 20;
    std::uint64_t seed = 1;
    std::size_t k = 2;
    double angle_deg = 120.0;
    std::size_t H = 8;
    std::size_t W = 8;
    std::size_t d = 32;
    std::size_t levels = 2;
    int steps = 300;
    double dt = 0.1;
    double eta_w = 0.0;
    double eta_theta = 0.0;
    bool learned_weights = false;
    LossCoeffs coeffs{.lambda_g = 0.1, .lambda_c = 0.01, .lambda_2 = 0.1, .eps = 1e-3};
};

struct StrategySummary {
    double mean_regional = 0.0;
    double mean_joint = 0.0;
};

struct BenchReport {
    std::vector<StrategyResult> rows;  // task-major, strategies in enum order
    StrategySummary single, linear, mixed;
    double mixed_beats_linear = 0.0;     // fraction of tasks, regional alignment
    double linear_beats_single = 0.0;    // fraction of tasks with linear >= single
    bool ordering_holds = false;         // mixed >= linear >= single on every task
    std::vector<std::uint64_t> counterexamples;
};

/// (1/P) sum_p cos(dz(p), dir[assignment(p)]), with cos(0, .) = 0.
double regional_alignment(const LatentGrid& final_latent, const LatentGrid& initial, std::span<const Vec> dirs,
                          std::span<const std::size_t> assignment);

/// cos(mean_p dz(p), dir_i) for each direction.
std::vector<double> global_alignment(const LatentGrid& final_latent, const LatentGrid& initial,
                                     std::span<const Vec> dirs);

/// Vertical stripes: column c belongs to style floor(c k / W).
std::vector<std::size_t> stripe_assignment(std::size_t k, std::size_t H, std::size_t W);

/// One-hot masks of an assignment map.
MaskSet assignment_masks(std::span<const std::size_t> assignment, std::size_t k, std::size_t H, std::size_t W);

BenchTask make_task(const SuiteConfig& cfg, std::uint64_t seed);

StrategyResult run_strategy(const BenchTask& task, Strategy strategy);

BenchReport benchmark(const SuiteConfig& cfg);

/// task_seed,strategy,k,angle_deg,grid,steps,regional_alignment,joint_alignment,wall_ms
/// wall_ms is written as NA unless with_timings is set, so files are reproducible.
std::string to_csv(const BenchReport& report, bool with_timings);

/// Aggregate statistics as a JSON document.
std::string summary_json(const BenchReport& report, const SuiteConfig& cfg);

struct OverheadResult {
    double ratio = 0.0;
    double single_ms = 0.0;
    double mixed_ms = 0.0;
};

/// Median-of-`repeats` wall-time ratio of the k=2 mixed pipeline to the k=1
/// single-prompt pipeline on the same grid and solver budget.
OverheadResult overhead_probe(std::size_t H, std::size_t W, std::size_t d, int steps, int repeats = 5,
                              std::uint64_t seed = 11);

}  // namespace mpsi::bench
