#include "mpsi/cli/commands.hpp"

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mpsi/bench.hpp"
#include "mpsi/blend_field.hpp"
#include "mpsi/cli/config.hpp"
#include "mpsi/cli/gradcheck.hpp"
#include "mpsi/embedding_store.hpp"
#include "mpsi/errors.hpp"
#include "mpsi/prompt_mixer.hpp"
#include "mpsi/solver.hpp"

namespace mpsi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

fs::path prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

json report_json(const LossReport& r) {
    return json{{"total", r.total},     {"levels", r.levels},         {"global", r.global},
                {"content", r.content}, {"smoothness", r.smoothness}, {"per_style", r.per_style}};
}

fs::path base_of(const fs::path& config) {
    const fs::path parent = config.parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

}  // namespace

fs::path output_dir(const std::optional<fs::path>& flag, const fs::path& configured) {
    if (const char* env = std::getenv("MPSI_OUT"); env != nullptr && *env != '\0') return fs::path(env);
    if (flag) return *flag;
    return configured;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
    try {
        return body();
    } catch (const DivergenceError& e) {
        err << "error: diverged: " << e.what() << "\n";
        return exit_diverged;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const DegenerateError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const InfeasibleError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_check_failed;
    }
}

// ---------------------------------------------------------------------------
// run

int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            const RunConfig cfg = parse_run_config(read_json(opts.config), base_of(opts.config));
            cfg.solver.validate();

            std::vector<std::string> warnings;
            PromptSet prompts = load_prompts(cfg.prompts, &warnings);
            if (cfg.source) {
                const PromptSet src = load_prompts(*cfg.source, &warnings);
                if (src.k != 1 || src.d != prompts.d) {
                    throw ConfigError("source: expected a single embedding of dimension " + std::to_string(prompts.d));
                }
                prompts.source = src.embeddings[0];
            }
            for (const auto& w : warnings) err << "warning: " << w << "\n";

            const LatentGrid latent = load_latent(cfg.latent);
            if (latent.d != prompts.d) {
                throw ConfigError("latent: dimension " + std::to_string(latent.d) + " does not match prompt bank (" +
                                  std::to_string(prompts.d) + ")");
            }

            BlendField field;
            if (cfg.masks) {
                const MaskSet masks = load_masks(*cfg.masks);
                if (masks.k != prompts.k || masks.H != latent.H || masks.W != latent.W) {
                    throw ConfigError("masks: shape does not match the prompt bank and latent grid");
                }
                field = from_user_masks(masks);
            } else {
                field = uniform_field(prompts.k, latent.H, latent.W, cfg.learn_weights);
            }

            MixerParams mixer;
            if (cfg.mixer) {
                mixer = load_mixer(*cfg.mixer);
                if (mixer.k != prompts.k || mixer.d != prompts.d) {
                    throw ConfigError("mixer: shape does not match the prompt bank");
                }
            } else {
                Rng rng(cfg.seed);
                mixer = init_mixer(rng, prompts.k, prompts.d, cfg.hidden == 0 ? 2 * prompts.d : cfg.hidden);
            }

            RunSetup setup{.initial = latent,
                           .prompts = prompts,
                           .field = field,
                           .mixer = mixer,
                           .fused_override = std::nullopt,
                           .pyramid = build_pyramid(latent.H, latent.W, cfg.levels, cfg.level_weights),
                           .coeffs = cfg.coeffs,
                           .start = std::nullopt};
            const RunResult result = run(setup, cfg.solver);

            const fs::path dir = prepare_dir(output_dir(opts.out, cfg.output_dir));
            json trace = json::array();
            for (const auto& e : result.trace) {
                json entry = report_json(e.report);
                entry["step"] = e.step;
                trace.push_back(std::move(entry));
            }
            json report{{"config", cfg.echo},
                        {"steps_executed", result.steps_executed},
                        {"stopped_early", result.stopped_early},
                        {"normalization_error", normalization_error(weights(result.final_field), prompts.k)},
                        {"trace", std::move(trace)}};
            if (opts.timings) {
                report["timings_ms"] = {{"gradient", result.timings.gradient_ms},
                                        {"update", result.timings.update_ms},
                                        {"total", result.timings.total_ms}};
            }
            write_json(dir / "report.json", report);
            save_bank(result.final_latent, dir / "final_latent.mpsi");
            save_masks(MaskSet{prompts.k, latent.H, latent.W, weights(result.final_field)}, dir / "final_weights.mpsi");
            if (result.final_mixer) save_mixer(*result.final_mixer, dir / "final_mixer.mpsi");

            const double final_total = result.trace.empty() ? 0.0 : result.trace.back().report.total;
            out << "run: " << result.steps_executed << " steps" << (result.stopped_early ? " (plateau)" : "")
                << ", final loss " << std::setprecision(10) << final_total << "\n"
                << "outputs in " << dir.string() << "\n";
            return int{exit_ok};
        },
        err);
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            GradcheckConfig cfg;
            fs::path configured = "out";
            if (opts.config) {
                const json doc = read_json(*opts.config);
                Fields f(doc, "");
                cfg.seed = f.seed("seed", cfg.seed);
                cfg.cases = static_cast<std::size_t>(f.integer("cases", static_cast<std::int64_t>(cfg.cases), 1));
                cfg.d = static_cast<std::size_t>(f.integer("d", static_cast<std::int64_t>(cfg.d), 2));
                cfg.H = static_cast<std::size_t>(f.integer("H", static_cast<std::int64_t>(cfg.H), 1));
                cfg.W = static_cast<std::size_t>(f.integer("W", static_cast<std::int64_t>(cfg.W), 1));
                cfg.k = static_cast<std::size_t>(f.integer("k", static_cast<std::int64_t>(cfg.k), 1));
                cfg.levels = static_cast<std::size_t>(f.integer("levels", static_cast<std::int64_t>(cfg.levels), 1));
                cfg.h = f.positive("h", cfg.h);
                cfg.tolerance = f.positive("tolerance", cfg.tolerance);
                cfg.small = f.positive("small", cfg.small);
                cfg.small_tolerance = f.positive("small_tolerance", cfg.small_tolerance);
                if (auto c = f.optional_string("corrupt")) cfg.corrupt = *c;
                if (auto o = f.optional_string("output_dir")) configured = base_of(*opts.config) / *o;
                f.reject_unknown();
            }
            if (const char* env = std::getenv("MPSI_GRADCHECK_CORRUPT"); env != nullptr && *env != '\0') {
                cfg.corrupt = env;
            }

            const auto results = run_gradcheck(cfg);
            const fs::path dir = prepare_dir(output_dir(opts.out, configured));

            bool ok = true;
            json classes = json::array();
            for (const auto& r : results) {
                ok = ok && r.pass;
                out << std::left << std::setw(14) << r.name << " worst rel " << std::scientific << std::setprecision(3)
                    << r.worst_rel << "  worst abs (small) " << r.worst_abs_small << "  "
                    << (r.pass ? "ok" : "FAIL") << "\n";
                classes.push_back({{"class", r.name},
                                   {"worst_rel", r.worst_rel},
                                   {"worst_abs_small", r.worst_abs_small},
                                   {"components", r.components},
                                   {"pass", r.pass}});
            }
            out << std::defaultfloat;
            write_json(dir / "gradcheck.json", json{{"seed", cfg.seed},
                                                     {"cases", cfg.cases},
                                                     {"h", cfg.h},
                                                     {"tolerance", cfg.tolerance},
                                                     {"classes", classes},
                                                     {"pass", ok}});
            if (!ok) {
                for (const auto& r : results) {
                    if (!r.pass) err << "gradcheck failed for class " << r.name << "\n";
                }
                return int{exit_check_failed};
            }
            return int{exit_ok};
        },
        err);
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            bench::SuiteConfig cfg;
            fs::path configured = "out";
            std::size_t oh_H = 16, oh_W = 16, oh_d = 64;
            int oh_steps = 200;
            if (opts.config) {
                const json doc = read_json(*opts.config);
                Fields f(doc, "");
                cfg.tasks = static_cast<std::size_t>(f.integer("tasks", static_cast<std::int64_t>(cfg.tasks), 1));
                cfg.seed = f.seed("seed", cfg.seed);
                cfg.k = static_cast<std::size_t>(f.integer("k", static_cast<std::int64_t>(cfg.k), 1));
                cfg.angle_deg = f.non_negative("angle_deg", cfg.angle_deg);
                cfg.H = static_cast<std::size_t>(f.integer("H", static_cast<std::int64_t>(cfg.H), 1));
                cfg.W = static_cast<std::size_t>(f.integer("W", static_cast<std::int64_t>(cfg.W), 1));
                cfg.d = static_cast<std::size_t>(f.integer("d", static_cast<std::int64_t>(cfg.d), 2));
                cfg.levels = static_cast<std::size_t>(f.integer("levels", static_cast<std::int64_t>(cfg.levels), 1));
                cfg.steps = static_cast<int>(f.integer("steps", cfg.steps, 0));
                cfg.dt = f.positive("dt", cfg.dt);
                cfg.eta_w = f.non_negative("eta_w", cfg.eta_w);
                cfg.eta_theta = f.non_negative("eta_theta", cfg.eta_theta);
                cfg.learned_weights = f.boolean("learned_weights", cfg.learned_weights);
                Fields c = f.object("coeffs");
                cfg.coeffs.lambda_g = c.non_negative("lambda_g", cfg.coeffs.lambda_g);
                cfg.coeffs.lambda_c = c.non_negative("lambda_c", cfg.coeffs.lambda_c);
                cfg.coeffs.lambda_2 = c.non_negative("lambda_2", cfg.coeffs.lambda_2);
                cfg.coeffs.eps = c.non_negative("eps", cfg.coeffs.eps);
                c.reject_unknown();
                Fields o = f.object("overhead");
                oh_H = static_cast<std::size_t>(o.integer("H", static_cast<std::int64_t>(oh_H), 1));
                oh_W = static_cast<std::size_t>(o.integer("W", static_cast<std::int64_t>(oh_W), 1));
                oh_d = static_cast<std::size_t>(o.integer("d", static_cast<std::int64_t>(oh_d), 2));
                oh_steps = static_cast<int>(o.integer("steps", oh_steps, 1));
                o.reject_unknown();
                if (auto p = f.optional_string("output_dir")) configured = base_of(*opts.config) / *p;
                f.reject_unknown();
            }

            const bench::BenchReport report = bench::benchmark(cfg);
            const fs::path dir = prepare_dir(output_dir(opts.out, configured));
            write_text(dir / "bench.csv", bench::to_csv(report, opts.timings));
            write_text(dir / "bench_summary.json", bench::summary_json(report, cfg));

            out << std::fixed << std::setprecision(4) << "regional alignment  single " << report.single.mean_regional
                << "  linear " << report.linear.mean_regional << "  mixed " << report.mixed.mean_regional << "\n"
                << "mixed > linear on " << report.mixed_beats_linear * 100.0 << "% of tasks, linear >= single on "
                << report.linear_beats_single * 100.0 << "%\n";
            if (opts.overhead) {
                const bench::OverheadResult oh = bench::overhead_probe(oh_H, oh_W, oh_d, oh_steps);
                write_json(dir / "overhead.json",
                           json{{"H", oh_H}, {"W", oh_W}, {"d", oh_d}, {"steps", oh_steps},
                                {"ratio", oh.ratio}, {"single_ms", oh.single_ms}, {"mixed_ms", oh.mixed_ms}});
                out << "overhead ratio " << oh.ratio << " (" << oh.mixed_ms << " ms vs " << oh.single_ms << " ms)\n";
            }
            out << std::defaultfloat;
            return int{exit_ok};
        },
        err);
}

// ---------------------------------------------------------------------------
// mixtrain

int cmd_mixtrain(const MixtrainOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            const json doc = read_json(opts.config);
            Fields f(doc, "");
            const fs::path base = base_of(opts.config);
            fs::path configured = "out";

            PromptSet prompts;
            if (f.has("prompts") && f.has("synth")) throw ConfigError("prompts: give either prompts or synth, not both");
            if (auto p = f.optional_string("prompts")) {
                const fs::path path = fs::path(*p).is_absolute() ? fs::path(*p) : base / *p;
                std::vector<std::string> warnings;
                prompts = load_prompts(path, &warnings);
                for (const auto& w : warnings) err << "warning: " << w << "\n";
            } else {
                if (!f.has("synth")) throw ConfigError("prompts: required field is missing (or give a synth block)");
                Fields s = f.object("synth");
                const auto k = static_cast<std::size_t>(s.integer("k", 2, 1));
                const auto d = static_cast<std::size_t>(s.integer("d", 8, 2));
                const std::uint64_t seed = s.seed("seed", 0);
                Rng rng(seed);
                if (s.has("angle")) {
                    if (k != 2) throw ConfigError("synth.angle: exact angles need k = 2");
                    prompts = synth_prompt_pair(rng, d, s.non_negative("angle", 90.0));
                } else {
                    prompts = synth_prompts(rng, k, d, s.non_negative("min_angle", 30.0));
                }
                s.reject_unknown();
            }

            MixerTrainConfig tc;
            tc.epochs = static_cast<int>(f.integer("epochs", tc.epochs, 0));
            tc.lr = f.positive("lr", tc.lr);
            tc.tau = f.positive("tau", tc.tau);
            tc.batch = static_cast<std::size_t>(f.integer("batch", 1, 1));
            tc.seed = f.seed("seed", tc.seed);
            const auto hidden = static_cast<std::size_t>(f.integer("hidden", 0, 0));
            if (auto o = f.optional_string("output_dir")) configured = base / *o;
            f.reject_unknown();

            Rng rng(tc.seed);
            MixerParams init = init_mixer(rng, prompts.k, prompts.d, hidden == 0 ? 2 * prompts.d : hidden);
            const MixerTrainResult res = train_mixer(std::move(init), fixed_sampler(prompts), tc);

            Vec mean(prompts.d, 0.0);
            for (const auto& z : prompts.embeddings) {
                for (std::size_t j = 0; j < prompts.d; ++j) mean[j] += z[j] / static_cast<double>(prompts.k);
            }
            const double mixer_min = min_alignment(mix(res.params, prompts).z_mix, prompts);
            const double mean_min = min_alignment(normalize(mean, 1e-8), prompts);
            const MaxMinResult oracle = maxmin_oracle(prompts);

            const fs::path dir = prepare_dir(output_dir(opts.out, configured));
            save_mixer(res.params, dir / "mixer.mpsi");
            write_json(dir / "mixtrain.json", json{{"k", prompts.k},
                                                    {"d", prompts.d},
                                                    {"epochs_run", res.epochs_run},
                                                    {"initial_loss", res.initial_loss},
                                                    {"final_loss", res.final_loss},
                                                    {"min_alignment", mixer_min},
                                                    {"mean_min_alignment", mean_min},
                                                    {"maxmin_oracle", oracle.value}});
            out << std::fixed << std::setprecision(6) << "min alignment  mixer " << mixer_min << "  mean " << mean_min
                << "  max-min optimum " << oracle.value << "\n"
                << std::defaultfloat;
            return int{exit_ok};
        },
        err);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const SynthOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            Rng rng(opts.seed);
            const fs::path dir = output_dir(opts.out, "out");
            fs::path path;
            if (opts.kind == "prompts") {
                PromptSet prompts;
                if (opts.angle) {
                    if (opts.k != 2) throw UsageError("--angle requires --k 2");
                    prompts = synth_prompt_pair(rng, opts.d, *opts.angle);
                } else {
                    prompts = synth_prompts(rng, opts.k, opts.d, opts.min_angle);
                }
                path = prepare_dir(dir) / opts.name.value_or("prompts.mpsi");
                save_bank(prompts, path);
            } else if (opts.kind == "latent") {
                const LatentGrid grid = synth_latent(rng, opts.H, opts.W, opts.d, opts.scale);
                path = prepare_dir(dir) / opts.name.value_or("latent.mpsi");
                save_bank(grid, path);
            } else if (opts.kind == "masks") {
                path = prepare_dir(dir) / opts.name.value_or("masks.mpsi");
                save_masks(split_masks(opts.H, opts.W), path);
            } else {
                throw UsageError("--kind must be prompts, latent or masks (got '" + opts.kind + "')");
            }
            out << "wrote " << path.string() << "\n";
            return int{exit_ok};
        },
        err);
}

}  // namespace mpsi::cli
