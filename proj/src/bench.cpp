#include "mpsi/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mpsi/blend_field.hpp"
#include "mpsi/errors.hpp"

namespace mpsi::bench {

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::single:
            return "single";
        case Strategy::linear:
            return "linear";
        case Strategy::mixed:
            return "mixed";
    }
    return "?";
}

namespace {

double cosine_or_zero(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace

double regional_alignment(const LatentGrid& final_latent, const LatentGrid& initial, std::span<const Vec> dirs,
                          std::span<const std::size_t> assignment) {
    if (!final_latent.same_shape(initial) || assignment.size() != initial.positions()) {
        throw ShapeError("regional_alignment: shapes disagree");
    }
    const std::size_t d = initial.d;
    Vec dz(d);
    double sum = 0.0;
    for (std::size_t p = 0; p < initial.positions(); ++p) {
        if (assignment[p] >= dirs.size()) throw ShapeError("regional_alignment: assignment index out of range");
        for (std::size_t j = 0; j < d; ++j) dz[j] = final_latent.cell(p)[j] - initial.cell(p)[j];
        sum += cosine_or_zero(dz, dirs[assignment[p]]);
    }
    return sum / static_cast<double>(initial.positions());
}

std::vector<double> global_alignment(const LatentGrid& final_latent, const LatentGrid& initial,
                                     std::span<const Vec> dirs) {
    const std::size_t d = initial.d;
    Vec mean(d, 0.0);
    for (std::size_t n = 0; n < initial.values.size(); ++n) mean[n % d] += final_latent.values[n] - initial.values[n];
    for (auto& v : mean) v /= static_cast<double>(initial.positions());
    std::vector<double> out;
    for (const auto& dir : dirs) out.push_back(cosine_or_zero(mean, dir));
    return out;
}

std::vector<std::size_t> stripe_assignment(std::size_t k, std::size_t H, std::size_t W) {
    std::vector<std::size_t> a(H * W);
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) a[r * W + c] = std::min(k - 1, c * k / W);
    }
    return a;
}

MaskSet assignment_masks(std::span<const std::size_t> assignment, std::size_t k, std::size_t H, std::size_t W) {
    MaskSet m{k, H, W, std::vector<double>(k * H * W, 0.0)};
    for (std::size_t p = 0; p < H * W; ++p) m.values[assignment[p] * H * W + p] = 1.0;
    return m;
}

BenchTask make_task(const SuiteConfig& cfg, std::uint64_t seed) {
    if (cfg.k < 1) throw std::invalid_argument("make_task: k must be >= 1");
    Rng rng(seed);
    BenchTask t;
    t.seed = seed;
    t.angle_deg = cfg.k == 1 ? 0.0 : cfg.angle_deg;
    if (cfg.k == 1) {
        t.prompts = synth_prompts(rng, 1, cfg.d, 0.0);
    } else if (cfg.k == 2) {
        t.prompts = synth_prompt_pair(rng, cfg.d, cfg.angle_deg);
    } else {
        t.prompts = synth_prompts(rng, cfg.k, cfg.d, cfg.angle_deg);
    }
    t.initial = synth_latent(rng, cfg.H, cfg.W, cfg.d, 1.0);
    t.assignment = stripe_assignment(cfg.k, cfg.H, cfg.W);
    t.solver.dt = cfg.dt;
    t.solver.steps = cfg.steps;
    t.solver.eta_w = cfg.eta_w;
    t.solver.eta_theta = cfg.eta_theta;
    t.solver.stop_tol = 0.0;  // identical budget for every strategy
    t.solver.record_every = std::max(1, cfg.steps);
    t.coeffs = cfg.coeffs;
    t.levels = cfg.levels;
    t.learned_weights = cfg.learned_weights;
    t.mixer_train.batch = 1;  // the sampler returns the task's fixed tuple
    t.mixer_train.seed = seed;
    return t;
}

namespace {

PromptSet single_prompt(const PromptSet& all, const Vec& z, const std::string& label) {
    PromptSet ps;
    ps.k = 1;
    ps.d = all.d;
    ps.embeddings = {z};
    ps.labels = {label};
    ps.source = all.source;
    return ps;
}

struct Outcome {
    RunResult result;
    double wall_ms = 0.0;
};

Outcome run_one_direction(const BenchTask& task, const PromptSet& prompts) {
    const Vec dir = style_direction(prompts.embeddings[0], prompts.source);
    RunSetup setup{
        .initial = task.initial,
        .prompts = prompts,
        .field = uniform_field(1, task.initial.H, task.initial.W),
        .mixer = std::nullopt,
        .fused_override = dir,
        .pyramid = build_pyramid(task.initial.H, task.initial.W, task.levels),
        .coeffs = task.coeffs,
        .start = std::nullopt,
    };
    Outcome o;
    o.result = run(setup, task.solver);
    o.wall_ms = o.result.timings.total_ms;
    return o;
}

StrategyResult make_row(const BenchTask& task, Strategy s, const RunResult& r, std::span<const Vec> dirs,
                        double wall_ms) {
    StrategyResult row;
    row.seed = task.seed;
    row.strategy = s;
    row.k = task.prompts.k;
    row.angle_deg = task.angle_deg;
    row.H = task.initial.H;
    row.W = task.initial.W;
    row.steps = r.steps_executed;
    row.regional = regional_alignment(r.final_latent, task.initial, dirs, task.assignment);
    row.global = global_alignment(r.final_latent, task.initial, dirs);
    row.joint = *std::min_element(row.global.begin(), row.global.end());
    row.wall_ms = wall_ms;
    return row;
}

}  // namespace

StrategyResult run_strategy(const BenchTask& task, Strategy strategy) {
    task.prompts.validate();
    const StyleDirections dirs = directions_from(task.prompts);
    const std::size_t k = task.prompts.k, d = task.prompts.d;

    switch (strategy) {
        case Strategy::single: {
            StrategyResult best;
            double total_ms = 0.0;
            bool have = false;
            for (std::size_t i = 0; i < k; ++i) {
                const Outcome o = run_one_direction(task, single_prompt(task.prompts, task.prompts.embeddings[i],
                                                                        task.prompts.labels[i]));
                total_ms += o.wall_ms;
                StrategyResult row = make_row(task, strategy, o.result, dirs.styles, 0.0);
                if (!have || row.joint > best.joint) {
                    best = std::move(row);
                    have = true;
                }
            }
            best.wall_ms = total_ms;
            return best;
        }
        case Strategy::linear: {
            Vec mean(d, 0.0);
            for (const auto& z : task.prompts.embeddings) {
                for (std::size_t j = 0; j < d; ++j) mean[j] += z[j];
            }
            for (auto& v : mean) v /= static_cast<double>(k);
            if (norm(mean) < 1e-12) throw DegenerateError("linear blend: prompt mean is the zero vector");
            const Outcome o = run_one_direction(task, single_prompt(task.prompts, normalize(mean, 1e-12), "linear"));
            return make_row(task, strategy, o.result, dirs.styles, o.wall_ms);
        }
        case Strategy::mixed: {
            const std::size_t H = task.initial.H, W = task.initial.W;
            BlendField field = task.learned_weights
                                   ? uniform_field(k, H, W, true)
                                   : from_user_masks(assignment_masks(task.assignment, k, H, W));
            Rng rng(task.seed ^ 0xA5A5A5A5ULL);
            const std::size_t hidden = task.hidden ? task.hidden : 2 * d;
            MixerParams mixer = init_mixer(rng, k, d, hidden);
            mixer = train_mixer(std::move(mixer), fixed_sampler(task.prompts), task.mixer_train).params;
            RunSetup setup{
                .initial = task.initial,
                .prompts = task.prompts,
                .field = std::move(field),
                .mixer = std::move(mixer),
                .fused_override = std::nullopt,
                .pyramid = build_pyramid(H, W, task.levels),
                .coeffs = task.coeffs,
                .start = std::nullopt,
            };
            const RunResult r = run(setup, task.solver);
            return make_row(task, strategy, r, dirs.styles, r.timings.total_ms);
        }
    }
    throw std::logic_error("run_strategy: unknown strategy");
}

BenchReport benchmark(const SuiteConfig& cfg) {
    if (cfg.tasks < 1) throw std::invalid_argument("benchmark: need at least one task");
    BenchReport rep;
    std::size_t mixed_wins = 0, linear_wins = 0;
    const std::size_t n = cfg.tasks;
    for (std::size_t t = 0; t < n; ++t) {
        const std::uint64_t seed = cfg.seed + t;
        const BenchTask task = make_task(cfg, seed);
        const StrategyResult s = run_strategy(task, Strategy::single);
        const StrategyResult l = run_strategy(task, Strategy::linear);
        const StrategyResult m = run_strategy(task, Strategy::mixed);
        if (m.regional > l.regional) ++mixed_wins;
        if (l.regional >= s.regional) ++linear_wins;
        if (!(m.regional >= l.regional && l.regional >= s.regional)) rep.counterexamples.push_back(seed);
        rep.single.mean_regional += s.regional / static_cast<double>(n);
        rep.linear.mean_regional += l.regional / static_cast<double>(n);
        rep.mixed.mean_regional += m.regional / static_cast<double>(n);
        rep.single.mean_joint += s.joint / static_cast<double>(n);
        rep.linear.mean_joint += l.joint / static_cast<double>(n);
        rep.mixed.mean_joint += m.joint / static_cast<double>(n);
        rep.rows.push_back(s);
        rep.rows.push_back(l);
        rep.rows.push_back(m);
    }
    rep.mixed_beats_linear = static_cast<double>(mixed_wins) / static_cast<double>(n);
    rep.linear_beats_single = static_cast<double>(linear_wins) / static_cast<double>(n);
    rep.ordering_holds = rep.counterexamples.empty();
    return rep;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

std::string to_csv(const BenchReport& report, bool with_timings) {
    std::ostringstream os;
    os << "task_seed,strategy,k,angle_deg,grid,steps,regional_alignment,joint_alignment,wall_ms\n";
    for (const auto& r : report.rows) {
        os << r.seed << ',' << to_string(r.strategy) << ',' << r.k << ',' << fmt_double(r.angle_deg) << ',' << r.H
           << 'x' << r.W << ',' << r.steps << ',' << fmt_double(r.regional) << ',' << fmt_double(r.joint) << ','
           << (with_timings ? fmt_double(r.wall_ms) : std::string("NA")) << '\n';
    }
    return os.str();
}

std::string summary_json(const BenchReport& report, const SuiteConfig& cfg) {
    using nlohmann::json;
    auto strat = [](const StrategySummary& s) {
        return json{{"mean_regional_alignment", s.mean_regional}, {"mean_joint_alignment", s.mean_joint}};
    };
    json j;
    j["suite"] = {{"tasks", cfg.tasks}, {"seed", cfg.seed},   {"k", cfg.k},         {"angle_deg", cfg.angle_deg},
                  {"H", cfg.H},         {"W", cfg.W},         {"d", cfg.d},         {"levels", cfg.levels},
                  {"steps", cfg.steps}, {"dt", cfg.dt},       {"eta_w", cfg.eta_w}, {"eta_theta", cfg.eta_theta},
                  {"learned_weights", cfg.learned_weights}};
    j["strategies"] = {{"single", strat(report.single)}, {"linear", strat(report.linear)}, {"mixed", strat(report.mixed)}};
    j["style_fidelity_proxy"] = "regional_alignment";
    j["mixed_beats_linear_rate"] = report.mixed_beats_linear;
    j["linear_ge_single_rate"] = report.linear_beats_single;
    j["ordering_mixed_ge_linear_ge_single"] = report.ordering_holds;
    j["counterexample_seeds"] = report.counterexamples;
    return j.dump(2) + "\n";
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

OverheadResult overhead_probe(std::size_t H, std::size_t W, std::size_t d, int steps, int repeats,
                              std::uint64_t seed) {
    if (repeats < 1) throw std::invalid_argument("overhead_probe: repeats must be >= 1");
    SuiteConfig cfg;
    cfg.H = H;
    cfg.W = W;
    cfg.d = d;
    cfg.steps = steps;
    cfg.k = 2;
    const BenchTask multi = make_task(cfg, seed);

    SolverConfig solver = multi.solver;
    const MaskPyramid pyramid = build_pyramid(H, W, multi.levels);

    Rng rng(seed);
    RunSetup mixed{
        .initial = multi.initial,
        .prompts = multi.prompts,
        .field = from_user_masks(assignment_masks(multi.assignment, 2, H, W)),
        .mixer = init_mixer(rng, 2, d, 2 * d),
        .fused_override = std::nullopt,
        .pyramid = pyramid,
        .coeffs = multi.coeffs,
        .start = std::nullopt,
    };
    PromptSet one = single_prompt(multi.prompts, multi.prompts.embeddings[0], multi.prompts.labels[0]);
    RunSetup single{
        .initial = multi.initial,
        .prompts = one,
        .field = uniform_field(1, H, W),
        .mixer = std::nullopt,
        .fused_override = style_direction(one.embeddings[0], one.source),
        .pyramid = pyramid,
        .coeffs = multi.coeffs,
        .start = std::nullopt,
    };

    // Warm-up, then interleave the arms so drift hits both equally.
    (void)run(single, solver);
    (void)run(mixed, solver);
    std::vector<double> t_single, t_mixed;
    for (int r = 0; r < repeats; ++r) {
        t_single.push_back(run(single, solver).timings.total_ms);
        t_mixed.push_back(run(mixed, solver).timings.total_ms);
    }
    OverheadResult out;
    out.single_ms = median(t_single);
    out.mixed_ms = median(t_mixed);
    out.ratio = out.mixed_ms / out.single_ms;
    return out;
}

}  // namespace mpsi::bench
