#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "mpsi/blend_field.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/errors.hpp"
#include "mpsi/solver.hpp"
#include "support.hpp"

using namespace mpsi;
using mpsi::testing::CaseShape;
using mpsi::testing::fill_case;
using mpsi::testing::LossCase;

namespace {

// k = 1, uniform frozen field, one level, content term only beyond the spatial one.
RunSetup single_prompt_setup(std::uint64_t seed, std::size_t H, std::size_t W, std::size_t d, double lambda_c) {
    Rng rng(seed);
    return RunSetup{.initial = synth_latent(rng, H, W, d, 1.0),
                    .prompts = synth_prompts(rng, 1, d, 0.0),
                    .field = uniform_field(1, H, W),
                    .mixer = std::nullopt,
                    .fused_override = std::nullopt,
                    .pyramid = build_pyramid(H, W, 1),
                    .coeffs = LossCoeffs{.lambda_g = 0.0, .lambda_c = lambda_c, .lambda_2 = 0.0, .eps = 1e-3},
                    .start = std::nullopt};
}

bool non_increasing(const std::vector<TraceEntry>& trace) {
    for (std::size_t i = 1; i < trace.size(); ++i) {
        const double prev = trace[i - 1].report.total;
        if (trace[i].report.total > prev + 1e-12 * std::abs(prev)) return false;
    }
    return true;
}

}  // namespace

TEST(Step, ZeroRatesLeaveStateBitExact) {
    LossCase c;
    fill_case(c, 1, CaseShape{}, true);
    SolverConfig cfg;
    cfg.dt = 0.0;
    const StepResult s = step(c.inputs(), cfg);
    EXPECT_EQ(s.next, c.current);
    EXPECT_FALSE(s.field);
    EXPECT_FALSE(s.mixer);
}

TEST(Step, PureContentTermClosedForm) {
    LossCase c;
    fill_case(c, 2, CaseShape{.H = 3, .W = 2, .d = 4, .k = 2, .levels = 1}, false);
    c.coeffs = LossCoeffs{.lambda_g = 0.0, .lambda_c = 0.3, .lambda_2 = 0.0, .eps = 1e-3};
    for (auto& level : c.pyramid.levels) std::fill(level.mask.begin(), level.mask.end(), 0.0);
    SolverConfig cfg;
    cfg.dt = 0.7;
    const StepResult s = step(c.inputs(), cfg);
    for (std::size_t n = 0; n < c.current.values.size(); ++n) {
        const double dz = c.current.values[n] - c.initial.values[n];
        EXPECT_NEAR(s.next.values[n], c.current.values[n] - 0.7 * 0.3 * (2.0 / 6.0) * dz, 1e-15);
    }
}

TEST(Step, LatentChangeIsMinusDtTimesNumericGradient) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        LossCase c;
        fill_case(c, 20 + seed, CaseShape{.H = 3, .W = 3, .d = 6, .k = 2, .levels = 2}, true);
        SolverConfig cfg;
        cfg.dt = 0.05;
        const StepResult s = step(c.inputs(), cfg);
        const LatentGrid saved = c.current;
        const Vec numeric = fd_grad(
            [&](std::span<const double> x) {
                c.current.values.assign(x.begin(), x.end());
                return dir_loss(c.inputs()).total;
            },
            saved.values, 1e-5);
        for (std::size_t n = 0; n < numeric.size(); ++n) {
            const GradErr e = grad_error(s.delta[n], -cfg.dt * numeric[n], 1e-8);
            if (!e.small) {
                EXPECT_LE(e.rel, 1e-5) << n;
            }
        }
    }
}

TEST(Step, NonFiniteGradientNamesStep) {
    LossCase c;
    fill_case(c, 3, CaseShape{}, false);
    c.current.values[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        step(c.inputs(), SolverConfig{}, 17);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("17"), std::string::npos) << e.what();
    }
}

TEST(Run, ZeroStepsReturnsInitial) {
    const RunSetup s = single_prompt_setup(1, 3, 3, 4, 0.01);
    SolverConfig cfg;
    cfg.steps = 0;
    const RunResult r = run(s, cfg);
    EXPECT_EQ(r.final_latent, s.initial);
    ASSERT_EQ(r.trace.size(), 1u);
    EXPECT_EQ(r.trace[0].step, 0);
    EXPECT_EQ(r.steps_executed, 0);
}

TEST(Run, SevenArgumentFormRequiresMixerForGlobalTerm) {
    RunSetup s = single_prompt_setup(1, 2, 2, 4, 0.01);
    s.coeffs.lambda_g = 0.2;
    EXPECT_THROW(run(s.initial, s.prompts, s.field, std::nullopt, s.pyramid, s.coeffs, SolverConfig{}), ConfigError);
}

// The single-prompt case decouples per position: starting from zero change,
// every cell moves along the prompt direction by x_t, where
//   x_{t+1} = x_t + (dt / P) (eps^2 / (x_t^2 + eps^2)^{3/2} - 2 lambda_c x_t).
TEST(Run, SinglePromptMatchesScalarSimulation) {
    constexpr std::size_t H = 8, W = 8, d = 64, P = H * W;
    constexpr double dt = 0.1, lc = 0.01, eps = 1e-3;
    const RunSetup s = single_prompt_setup(9, H, W, d, lc);
    SolverConfig cfg;
    cfg.dt = dt;
    cfg.stop_tol = 0.0;
    const Vec& b = s.prompts.embeddings[0];

    double x = 0.0;
    for (int steps = 1; steps <= 200; steps += 1) {
        x += dt / P * (eps * eps / std::pow(x * x + eps * eps, 1.5) - 2.0 * lc * x);
        if (steps % 50 != 0) continue;
        cfg.steps = steps;
        const RunResult r = run(s, cfg);
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dz = r.final_latent.cell(p)[j] - s.initial.cell(p)[j];
                ASSERT_NEAR(dz, x * b[j], 1e-9 * std::max(1.0, std::abs(x))) << "step " << steps;
            }
        }
    }
}

TEST(Run, SinglePromptReductionAligns) {
    const RunSetup s = single_prompt_setup(4, 8, 8, 64, 0.01);
    SolverConfig cfg;
    cfg.dt = 0.1;
    cfg.steps = 500;
    const RunResult r = run(s, cfg);
    double mean_cos = 0.0;
    for (std::size_t p = 0; p < 64; ++p) {
        Vec dz(64);
        for (std::size_t j = 0; j < 64; ++j) dz[j] = r.final_latent.cell(p)[j] - s.initial.cell(p)[j];
        mean_cos += dot(dz, s.prompts.embeddings[0]) / norm(dz) / 64.0;
    }
    EXPECT_GE(mean_cos, 0.999);
    EXPECT_TRUE(non_increasing(r.trace));
}

TEST(Run, SinglePromptWeightMachineryIsInert) {
    RunSetup s = single_prompt_setup(5, 3, 3, 4, 0.01);
    s.field = uniform_field(1, 3, 3, true);
    const StyleDirections dirs = directions_from(s.prompts);
    LatentGrid cur = s.initial;
    Rng rng(5);
    for (auto& v : cur.values) v += rng.normal();
    const LossInputs in{.current = cur, .initial = s.initial, .dirs = dirs, .field = s.field,
                        .pyramid = s.pyramid, .coeffs = s.coeffs};
    const LossGradients g = dir_loss_grad(in);
    for (double v : g.logits) EXPECT_EQ(v, 0.0);
    for (std::size_t p = 0; p < 9; ++p) {
        Vec dz(4);
        for (std::size_t j = 0; j < 4; ++j) dz[j] = cur.cell(p)[j] - s.initial.cell(p)[j];
        const Vec ref = eps_cosine_grad(dz, dirs.styles[0], 1e-3);
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(g.latent[p * 4 + j], ref[j] / 9.0 + 2.0 * 0.01 * dz[j] / 9.0, 1e-15);
        }
    }
}

TEST(Run, FrozenFieldAndMixerStayBitIdentical) {
    auto family = standard_probe_family(3, 1);
    RunSetup s = family[0];
    s.field.trainable = true;
    SolverConfig cfg;
    cfg.steps = 30;
    const RunResult r = run(s, cfg);
    EXPECT_EQ(r.final_field, s.field);
    EXPECT_EQ(r.final_mixer, s.mixer);
}

TEST(Run, LearnedFieldAndMixerMove) {
    auto family = standard_probe_family(3, 1);
    RunSetup s = family[0];
    s.field.trainable = true;
    SolverConfig cfg;
    cfg.steps = 30;
    cfg.eta_w = 0.5;
    cfg.eta_theta = 0.5;
    const RunResult r = run(s, cfg);
    EXPECT_NE(r.final_field, s.field);
    EXPECT_NE(r.final_mixer, s.mixer);
    EXPECT_LE(normalization_error(weights(r.final_field), 2), 1e-12);
}

TEST(Run, Deterministic) {
    auto family = standard_probe_family(7, 1);
    SolverConfig cfg;
    cfg.steps = 40;
    cfg.eta_theta = 0.1;
    const RunResult a = run(family[0], cfg), b = run(family[0], cfg);
    EXPECT_EQ(a.final_latent, b.final_latent);
    EXPECT_EQ(a.final_mixer, b.final_mixer);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].report.total, b.trace[i].report.total);
}

TEST(Run, EarlyStopOnPlateau) {
    const RunSetup s = single_prompt_setup(2, 2, 2, 4, 0.01);
    SolverConfig cfg;
    cfg.steps = 100000;
    cfg.stop_tol = 1e-6;
    const RunResult r = run(s, cfg);
    EXPECT_TRUE(r.stopped_early);
    EXPECT_LT(r.steps_executed, 100000);
}

TEST(StabilityProbe, ContentOnlyQuadraticMatchesAnalyticBound) {
    constexpr std::size_t H = 4, W = 4;
    constexpr double lc = 0.01;
    std::vector<RunSetup> family;
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        RunSetup s = single_prompt_setup(seed, H, W, 3, lc);
        std::fill(s.pyramid.levels[0].mask.begin(), s.pyramid.levels[0].mask.end(), 0.0);
        LatentGrid start = s.initial;
        Rng rng(seed + 50);
        for (auto& v : start.values) v += rng.normal();
        s.start = start;
        family.push_back(std::move(s));
    }
    const double bound = static_cast<double>(H * W) / lc;
    const double probed = stability_probe(family, 100);
    EXPECT_NEAR(probed, bound, 0.1 * bound);
}

TEST(StabilityProbe, TinyStepDescends) {
    for (const auto& s : standard_probe_family(1, 4)) {
        SolverConfig cfg;
        cfg.dt = 1e-6;
        cfg.steps = 100;
        cfg.stop_tol = 0.0;
        EXPECT_TRUE(non_increasing(run(s, cfg).trace));
    }
}

TEST(StabilityProbe, DeterministicAndHalfStepDescends) {
    const auto family = standard_probe_family(1, 4);
    const double a = stability_probe(family), b = stability_probe(family);
    EXPECT_EQ(a, b);
    EXPECT_GT(a, 0.0);
    for (double frac : {0.5, 0.25, 0.1}) {
        for (const auto& s : family) {
            SolverConfig cfg;
            cfg.dt = frac * a;
            cfg.steps = 100;
            cfg.stop_tol = 0.0;
            EXPECT_TRUE(non_increasing(run(s, cfg).trace)) << frac;
        }
    }
}
