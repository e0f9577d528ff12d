#include "mpsi/cli/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mpsi/blend_field.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/numerics.hpp"
#include "mpsi/prompt_mixer.hpp"
#include "mpsi/solver.hpp"
#include "mpsi/style_loss.hpp"

namespace mpsi::cli {

namespace {

struct Case {
    PromptSet prompts;
    LatentGrid initial;
    LatentGrid current;
    BlendField field;
    MaskPyramid pyramid;
    LossCoeffs coeffs;
    TrajectoryHistory history;
    MixerParams mixer;
};

Case make_case(const GradcheckConfig& cfg, std::size_t index) {
    Rng rng(cfg.seed * 7919 + index);
    Case c;
    c.prompts = synth_prompts(rng, cfg.k, cfg.d, 30.0);
    if (index % 2 == 1) c.prompts.source = normalize(rng.normal_vec(cfg.d), 1e-12);
    c.initial = synth_latent(rng, cfg.H, cfg.W, cfg.d, 1.0);
    c.current = c.initial;
    for (auto& v : c.current.values) v += 0.7 * rng.normal();
    c.field = uniform_field(cfg.k, cfg.H, cfg.W, true);
    c.field.logits = rng.normal_vec(c.field.logits.size());

    std::vector<double> lw(cfg.levels);
    for (auto& v : lw) v = rng.uniform(0.5, 1.5);
    c.pyramid = build_pyramid(cfg.H, cfg.W, cfg.levels, lw);
    for (auto& level : c.pyramid.levels) {
        for (auto& m : level.mask) m = rng.uniform(0.2, 1.0);
    }
    c.coeffs = LossCoeffs{.lambda_g = 0.3, .lambda_c = 0.05, .lambda_2 = 0.2, .eps = 1e-3};

    c.history.previous = c.current.values;
    c.history.prev_delta.resize(c.current.values.size());
    for (std::size_t n = 0; n < c.current.values.size(); ++n) {
        c.history.previous[n] -= 0.1 * rng.normal();
        c.history.prev_delta[n] = 0.1 * rng.normal();
    }

    c.mixer = init_mixer(rng, cfg.k, cfg.d, 2 * cfg.d);
    for (auto& v : c.mixer.W2.values) v = 0.3 * rng.normal();
    for (auto& v : c.mixer.b2) v = 0.3 * rng.normal();
    return c;
}

void accumulate(ClassResult& res, const GradcheckConfig& cfg, const Vec& analytic, const Vec& numeric) {
    for (std::size_t j = 0; j < analytic.size(); ++j) {
        const GradErr e = grad_error(analytic[j], numeric[j], cfg.small);
        if (e.small) {
            res.worst_abs_small = std::max(res.worst_abs_small, e.abs);
        } else {
            res.worst_rel = std::max(res.worst_rel, e.rel);
        }
    }
    res.components += analytic.size();
}

void maybe_corrupt(const GradcheckConfig& cfg, const std::string& name, Vec& g) {
    if (cfg.corrupt && *cfg.corrupt == name && !g.empty()) g[0] = 1.01 * g[0] + 1e-3;
}

}  // namespace

std::vector<ClassResult> run_gradcheck(const GradcheckConfig& cfg) {
    const char* names[] = {"mixer_params", "mixer_inputs", "blend_weights", "loss_latent",
                           "loss_logits",  "loss_mixer",   "solver_step"};
    std::vector<ClassResult> results;
    for (const char* n : names) results.push_back(ClassResult{n});
    auto cls = [&](const char* n) -> ClassResult& {
        return *std::find_if(results.begin(), results.end(), [&](const ClassResult& r) { return r.name == n; });
    };

    for (std::size_t index = 0; index < cfg.cases; ++index) {
        Case c = make_case(cfg, index);
        Rng rng(cfg.seed * 104729 + index);
        const StyleDirections dirs = directions_from(c.prompts);

        // Mixer forward, contracted with a random cotangent.
        {
            const Vec gout = rng.normal_vec(cfg.d);
            const MixerGrad g = mix_grad(c.mixer, c.prompts, gout);
            MixerParams probe = c.mixer;
            Vec analytic = g.params.flat();
            maybe_corrupt(cfg, "mixer_params", analytic);
            const Vec numeric = fd_grad(
                [&](std::span<const double> th) {
                    probe.set_flat(th);
                    return dot(gout, mix(probe, c.prompts).z_mix);
                },
                c.mixer.flat(), cfg.h);
            accumulate(cls("mixer_params"), cfg, analytic, numeric);

            Vec flat_in;
            for (const auto& z : c.prompts.embeddings) flat_in.insert(flat_in.end(), z.begin(), z.end());
            Vec analytic_in;
            for (const auto& gi : g.inputs) analytic_in.insert(analytic_in.end(), gi.begin(), gi.end());
            maybe_corrupt(cfg, "mixer_inputs", analytic_in);
            PromptSet moved = c.prompts;
            const Vec numeric_in = fd_grad(
                [&](std::span<const double> x) {
                    for (std::size_t i = 0; i < cfg.k; ++i) {
                        std::copy(x.begin() + static_cast<std::ptrdiff_t>(i * cfg.d),
                                  x.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.d),
                                  moved.embeddings[i].begin());
                    }
                    return dot(gout, mix(c.mixer, moved).z_mix);
                },
                flat_in, cfg.h);
            accumulate(cls("mixer_inputs"), cfg, analytic_in, numeric_in);
        }

        // Blend weights.
        {
            const Vec up = rng.normal_vec(c.field.logits.size());
            Vec analytic = weights_grad(c.field, up);
            maybe_corrupt(cfg, "blend_weights", analytic);
            BlendField probe = c.field;
            const Vec numeric = fd_grad(
                [&](std::span<const double> z) {
                    probe.logits.assign(z.begin(), z.end());
                    return dot(up, weights(probe));
                },
                c.field.logits, cfg.h);
            accumulate(cls("blend_weights"), cfg, analytic, numeric);
        }

        // Total loss against latent, logits, mixer.
        {
            const MixerBinding binding{c.mixer, c.prompts};
            auto inputs = [&](const LatentGrid& cur, const BlendField& field, const MixerBinding& b) {
                return LossInputs{.current = cur,
                                  .initial = c.initial,
                                  .dirs = dirs,
                                  .field = field,
                                  .pyramid = c.pyramid,
                                  .coeffs = c.coeffs,
                                  .history = &c.history,
                                  .mixer = &b};
            };
            const LossGradients g = dir_loss_grad(inputs(c.current, c.field, binding));

            LatentGrid cur = c.current;
            Vec a_lat = g.latent;
            maybe_corrupt(cfg, "loss_latent", a_lat);
            const Vec n_lat = fd_grad(
                [&](std::span<const double> x) {
                    cur.values.assign(x.begin(), x.end());
                    return dir_loss(inputs(cur, c.field, binding)).total;
                },
                c.current.values, cfg.h);
            accumulate(cls("loss_latent"), cfg, a_lat, n_lat);

            BlendField field = c.field;
            Vec a_log = g.logits;
            maybe_corrupt(cfg, "loss_logits", a_log);
            const Vec n_log = fd_grad(
                [&](std::span<const double> z) {
                    field.logits.assign(z.begin(), z.end());
                    return dir_loss(inputs(c.current, field, binding)).total;
                },
                c.field.logits, cfg.h);
            accumulate(cls("loss_logits"), cfg, a_log, n_log);

            MixerParams theta = c.mixer;
            const MixerBinding moved{theta, c.prompts};
            Vec a_mix = g.mixer->flat();
            maybe_corrupt(cfg, "loss_mixer", a_mix);
            const Vec n_mix = fd_grad(
                [&](std::span<const double> th) {
                    theta.set_flat(th);
                    return dir_loss(inputs(c.current, c.field, moved)).total;
                },
                c.mixer.flat(), cfg.h);
            accumulate(cls("loss_mixer"), cfg, a_mix, n_mix);

            // One explicit step moves the latent by -dt * gradient.
            SolverConfig sc;
            sc.dt = 0.05;
            const StepResult s = step(inputs(c.current, c.field, binding), sc, 0);
            Vec a_step = s.delta;
            maybe_corrupt(cfg, "solver_step", a_step);
            Vec n_step = n_lat;
            for (auto& v : n_step) v *= -sc.dt;
            accumulate(cls("solver_step"), cfg, a_step, n_step);
        }
    }

    for (auto& r : results) {
        r.pass = r.worst_rel <= cfg.tolerance && r.worst_abs_small <= cfg.small_tolerance;
    }
    return results;
}

}  // namespace mpsi::cli
