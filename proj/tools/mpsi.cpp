#include <iostream>

#include <CLI11.hpp>

#include "mpsi/cli/commands.hpp"

int main(int argc, char** argv) {
    using namespace mpsi::cli;
    CLI::App app{"mpsi: multi-prompt latent stylization engine"};
    app.require_subcommand(1);

    RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "optimize a latent grid from a JSON config");
    run_cmd->add_option("config", run.config, "run config (JSON)")->required();
    run_cmd->add_option("--out", run.out, "output directory");
    run_cmd->add_flag("--timings", run.timings, "include phase timings in report.json");

    GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    gc_cmd->add_option("config", gc.config, "gradcheck config (JSON); defaults apply when omitted");
    gc_cmd->add_option("--out", gc.out, "output directory");

    BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "single vs linear vs mixed comparison suite");
    bench_cmd->add_option("config", bench.config, "suite config (JSON); defaults apply when omitted");
    bench_cmd->add_option("--out", bench.out, "output directory");
    bench_cmd->add_flag("--timings", bench.timings, "write wall-clock times into bench.csv");
    bench_cmd->add_flag("--overhead", bench.overhead, "also time mixed vs single pipelines (overhead.json)");

    MixtrainOptions mt;
    auto* mt_cmd = app.add_subcommand("mixtrain", "train a prompt mixer");
    mt_cmd->add_option("config", mt.config, "mixtrain config (JSON)")->required();
    mt_cmd->add_option("--out", mt.out, "output directory");

    SynthOptions sy;
    auto* sy_cmd = app.add_subcommand("synth", "write synthetic prompt banks, latents or masks");
    sy_cmd->add_option("--kind", sy.kind, "prompts | latent | masks")
        ->check(CLI::IsMember({"prompts", "latent", "masks"}));
    sy_cmd->add_option("--k", sy.k, "number of prompts");
    sy_cmd->add_option("--d", sy.d, "embedding dimension");
    sy_cmd->add_option("--min-angle", sy.min_angle, "minimum pairwise angle in degrees");
    sy_cmd->add_option("--angle", sy.angle, "exact angle of a prompt pair in degrees");
    sy_cmd->add_option("--H", sy.H, "grid rows");
    sy_cmd->add_option("--W", sy.W, "grid columns");
    sy_cmd->add_option("--scale", sy.scale, "latent scale");
    sy_cmd->add_option("--seed", sy.seed, "rng seed");
    sy_cmd->add_option("--out", sy.out, "output directory");
    sy_cmd->add_option("--name", sy.name, "file name inside the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_config_error;
    }

    if (*run_cmd) return cmd_run(run, std::cout, std::cerr);
    if (*gc_cmd) return cmd_gradcheck(gc, std::cout, std::cerr);
    if (*bench_cmd) return cmd_bench(bench, std::cout, std::cerr);
    if (*mt_cmd) return cmd_mixtrain(mt, std::cout, std::cerr);
    return cmd_synth(sy, std::cout, std::cerr);
}
