#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsi/solver.hpp"
#include "mpsi/style_loss.hpp"

namespace mpsi::cli {

/// Parsed `run` configuration. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
    std::filesystem::path prompts;
    std::filesystem::path latent;
    std::optional<std::filesystem::path> source;
    std::optional<std::filesystem::path> masks;
    std::optional<std::filesystem::path> mixer;
    bool learn_weights = false;
    std::size_t hidden = 0;  // mixer width when no mixer file is given; 0 -> 2 d
    LossCoeffs coeffs{.lambda_g = 0.1, .lambda_c = 0.01, .lambda_2 = 0.1, .eps = 1e-3};
    SolverConfig solver;
    std::size_t levels = 1;
    std::optional<std::vector<double>> level_weights;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";

    /// The raw document, echoed into the report.
    nlohmann::json echo;
};

/// Validates `doc` field by field. Throws ConfigError whose message starts
/// with the offending field path (e.g. "solver.dt: must be > 0").
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Reads and parses a config file; unreadable or malformed JSON is a ConfigError.
nlohmann::json read_json(const std::filesystem::path& path);

/// Strict field reader used by every JSON-configured command.
class Fields {
public:
    Fields(const nlohmann::json& obj, std::string prefix);

    bool has(const std::string& key) const;
    double number(const std::string& key, double fallback);
    double positive(const std::string& key, double fallback);
    double non_negative(const std::string& key, double fallback);
    std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min_value);
    std::uint64_t seed(const std::string& key, std::uint64_t fallback);
    bool boolean(const std::string& key, bool fallback);
    std::string string(const std::string& key);
    std::optional<std::string> optional_string(const std::string& key);
    std::vector<double> numbers(const std::string& key);
    Fields object(const std::string& key);

    /// Throws ConfigError for keys that were never read.
    void reject_unknown() const;

    std::string path(const std::string& key) const;

private:
    const nlohmann::json& at(const std::string& key);

    const nlohmann::json& obj_;
    std::string prefix_;
    std::vector<std::string> seen_;
};

}  // namespace mpsi::cli
