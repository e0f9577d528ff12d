#include "mpsi/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mpsi/errors.hpp"

namespace mpsi {

void SolverConfig::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("solver: dt must be > 0");
    if (steps < 0) throw ConfigError("solver: steps must be >= 0");
    if (!(eta_w >= 0.0) || !(eta_theta >= 0.0)) throw ConfigError("solver: learning rates must be >= 0");
    if (!(stop_tol >= 0.0)) throw ConfigError("solver: stop_tol must be >= 0");
    if (record_every < 1) throw ConfigError("solver: record_every must be >= 1");
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void check_finite(const LossGradients& g, int step_index) {
    const bool ok = std::isfinite(g.report.total) && all_finite(g.latent) && all_finite(g.logits) &&
                    (!g.mixer || all_finite(g.mixer->flat()));
    if (!ok) throw DivergenceError("solver: non-finite loss or gradient at step " + std::to_string(step_index));
}

void apply_mixer_update(MixerParams& mixer, const MixerParams& grad, double eta) {
    Vec theta = mixer.flat();
    const Vec g = grad.flat();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= eta * g[j];
    mixer.set_flat(theta);
}

}  // namespace

StepResult step(const LossInputs& in, const SolverConfig& cfg, int step_index) {
    if (!(cfg.dt >= 0.0) || !(cfg.eta_w >= 0.0) || !(cfg.eta_theta >= 0.0)) {
        throw ConfigError("step: dt and learning rates must be >= 0");
    }
    const LossGradients g = dir_loss_grad(in);
    check_finite(g, step_index);

    StepResult out;
    out.report = g.report;
    out.next = in.current;
    out.delta.resize(in.current.values.size());
    for (std::size_t n = 0; n < out.next.values.size(); ++n) {
        out.next.values[n] = in.current.values[n] - cfg.dt * g.latent[n];
        out.delta[n] = out.next.values[n] - in.current.values[n];
    }
    if (in.field.trainable && cfg.eta_w > 0.0) {
        BlendField f = in.field;
        for (std::size_t n = 0; n < f.logits.size(); ++n) f.logits[n] -= cfg.eta_w * g.logits[n];
        f.clamp();
        out.field = std::move(f);
    }
    if (in.mixer && g.mixer && cfg.eta_theta > 0.0) {
        MixerParams m = in.mixer->params;
        apply_mixer_update(m, *g.mixer, cfg.eta_theta);
        out.mixer = std::move(m);
    }
    return out;
}

RunResult run(const RunSetup& setup, const SolverConfig& cfg) {
    cfg.validate();
    const auto t_start = Clock::now();
    const LatentGrid& initial = setup.initial;

    RunResult res;
    res.final_latent = setup.start.value_or(initial);
    res.final_field = setup.field;
    res.final_mixer = setup.mixer;
    if (!res.final_latent.same_shape(initial)) throw ShapeError("run: start latent does not match initial");

    StyleDirections dirs = directions_from(setup.prompts);
    const bool learn_mixer = res.final_mixer && cfg.eta_theta > 0.0 && setup.coeffs.lambda_g > 0.0;
    if (res.final_mixer) {
        if (!learn_mixer) dirs.fused = fused_direction(*res.final_mixer, setup.prompts);
    } else if (setup.fused_override) {
        dirs.fused = setup.fused_override;
    }
    const bool learn_field = res.final_field.trainable && cfg.eta_w > 0.0;
    std::vector<double> frozen_w;
    if (!learn_field) frozen_w = weights(res.final_field);

    std::optional<TrajectoryHistory> history;
    std::optional<std::vector<double>> last_delta;
    std::vector<double> totals;

    for (int t = 0;; ++t) {
        std::optional<MixerBinding> binding;
        if (learn_mixer) binding.emplace(MixerBinding{*res.final_mixer, setup.prompts});
        const LossInputs in{
            .current = res.final_latent,
            .initial = initial,
            .dirs = dirs,
            .field = res.final_field,
            .pyramid = setup.pyramid,
            .coeffs = setup.coeffs,
            .history = history ? &*history : nullptr,
            .mixer = binding ? &*binding : nullptr,
            .cached_weights = learn_field ? nullptr : &frozen_w,
        };

        const bool last = t >= cfg.steps;
        if (last) {
            const LossReport rep = dir_loss(in);
            if (!std::isfinite(rep.total)) throw DivergenceError("run: non-finite loss at step " + std::to_string(t));
            res.trace.push_back({t, rep});
            res.steps_executed = t;
            break;
        }

        const auto t_grad = Clock::now();
        StepResult s;
        try {
            s = step(in, cfg, t);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " (dt=" + std::to_string(cfg.dt) + ")");
        }
        res.timings.gradient_ms += ms_since(t_grad);

        totals.push_back(s.report.total);
        if (t % cfg.record_every == 0) res.trace.push_back({t, s.report});

        if (cfg.stop_tol > 0.0 && t >= 10) {
            const double ref = totals[static_cast<std::size_t>(t) - 10];
            const double change = std::abs(s.report.total - ref) / std::max(std::abs(ref), 1e-300);
            if (change < cfg.stop_tol) {
                if (res.trace.empty() || res.trace.back().step != t) res.trace.push_back({t, s.report});
                res.steps_executed = t;
                res.stopped_early = true;
                break;
            }
        }

        const auto t_upd = Clock::now();
        if (last_delta) {
            history = TrajectoryHistory{res.final_latent.values, std::move(*last_delta)};
        }
        last_delta = std::move(s.delta);
        res.final_latent = std::move(s.next);
        if (s.field) res.final_field = std::move(*s.field);
        if (s.mixer) res.final_mixer = std::move(*s.mixer);
        res.timings.update_ms += ms_since(t_upd);
    }
    res.timings.total_ms = ms_since(t_start);
    return res;
}

RunResult run(const LatentGrid& initial, const PromptSet& prompts, const BlendField& field,
              const std::optional<MixerParams>& mixer, const MaskPyramid& pyramid, const LossCoeffs& coeffs,
              const SolverConfig& cfg) {
    if (coeffs.lambda_g > 0.0 && !mixer) throw ConfigError("run: lambda_g > 0 requires a mixer");
    RunSetup setup{initial, prompts, field, mixer, std::nullopt, pyramid, coeffs, std::nullopt};
    return run(setup, cfg);
}

namespace {

bool descends(const RunSetup& task, double dt, int steps) {
    SolverConfig cfg;
    cfg.dt = dt;
    cfg.steps = steps;
    cfg.stop_tol = 0.0;
    RunResult r;
    try {
        r = run(task, cfg);
    } catch (const DivergenceError&) {
        return false;
    }
    for (std::size_t i = 1; i < r.trace.size(); ++i) {
        const double prev = r.trace[i - 1].report.total;
        if (r.trace[i].report.total > prev + 1e-12 * std::abs(prev)) return false;
    }
    return true;
}

bool all_descend(const std::vector<RunSetup>& family, double dt, int steps) {
    return std::all_of(family.begin(), family.end(), [&](const RunSetup& t) { return descends(t, dt, steps); });
}

}  // namespace

double stability_probe(const std::vector<RunSetup>& family, int steps, double dt_guess) {
    if (family.empty()) throw std::invalid_argument("stability_probe: empty probe family");
    if (!(dt_guess > 0.0)) throw std::invalid_argument("stability_probe: dt_guess must be > 0");
    double lo = dt_guess, hi = dt_guess;
    if (all_descend(family, dt_guess, steps)) {
        for (int i = 0; i < 60 && all_descend(family, hi, steps); ++i) {
            lo = hi;
            hi *= 2.0;
        }
        if (lo == hi) return hi;
    } else {
        for (int i = 0; i < 60; ++i) {
            hi = lo;
            lo *= 0.5;
            if (all_descend(family, lo, steps)) break;
        }
    }
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (all_descend(family, mid, steps)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;
}

std::vector<RunSetup> standard_probe_family(std::uint64_t seed, std::size_t count) {
    std::vector<RunSetup> family;
    for (std::size_t n = 0; n < count; ++n) {
        Rng rng(seed * 1000 + n);
        constexpr std::size_t H = 4, W = 4, d = 8;
        RunSetup s{
            .initial = synth_latent(rng, H, W, d, 1.0),
            .prompts = synth_prompts(rng, 2, d, 60.0),
            .field = uniform_field(2, H, W),
            .mixer = std::nullopt,
            .fused_override = std::nullopt,
            .pyramid = build_pyramid(H, W, 2),
            .coeffs = LossCoeffs{.lambda_g = 0.1, .lambda_c = 0.01, .lambda_2 = 0.1, .eps = 1e-3},
            .start = std::nullopt,
        };
        s.field.logits = rng.normal_vec(s.field.logits.size());
        s.mixer = init_mixer(rng, 2, d, 2 * d);
        LatentGrid start = s.initial;
        for (auto& v : start.values) v += 0.5 * rng.normal();
        s.start = std::move(start);
        family.push_back(std::move(s));
    }
    return family;
}

}  // namespace mpsi
