#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

namespace mpsi::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
    exit_ok = 0,
    exit_check_failed = 1,
    exit_config_error = 2,
    exit_diverged = 3,
};

/// MPSI_OUT beats --out, which beats the config's output_dir.
std::filesystem::path output_dir(const std::optional<std::filesystem::path>& flag,
                                 const std::filesystem::path& configured);

/// Runs `body`, mapping exceptions onto exit codes and printing them to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

struct RunOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    bool timings = false;
};
int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err);

struct GradcheckOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> out;
};
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err);

struct BenchOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> out;
    bool timings = false;
    bool overhead = false;
};
int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err);

struct MixtrainOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
};
int cmd_mixtrain(const MixtrainOptions& opts, std::ostream& out, std::ostream& err);

struct SynthOptions {
    std::string kind = "prompts";  // prompts | latent | masks
    std::size_t k = 2;
    std::size_t d = 64;
    double min_angle = 0.0;
    std::optional<double> angle;  // exact pair angle, k = 2 only
    std::size_t H = 8;
    std::size_t W = 8;
    double scale = 1.0;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> name;  // file name inside the output dir
};
int cmd_synth(const SynthOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace mpsi::cli
