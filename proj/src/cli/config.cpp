#include "mpsi/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mpsi/errors.hpp"

namespace mpsi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& empty_object() {
    static const json e = json::object();
    return e;
}

}  // namespace

Fields::Fields(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError((prefix_.empty() ? "config" : prefix_) + ": must be a JSON object");
}

std::string Fields::path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
}

bool Fields::has(const std::string& key) const {
    return obj_.contains(key) && !obj_.at(key).is_null();
}

const json& Fields::at(const std::string& key) {
    seen_.push_back(key);
    return obj_.at(key);
}

double Fields::number(const std::string& key, double fallback) {
    if (!has(key)) {
        seen_.push_back(key);
        return fallback;
    }
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path(key) + ": must be finite");
    return x;
}

double Fields::positive(const std::string& key, double fallback) {
    const double x = number(key, fallback);
    if (!(x > 0.0)) throw ConfigError(path(key) + ": must be > 0");
    return x;
}

double Fields::non_negative(const std::string& key, double fallback) {
    const double x = number(key, fallback);
    if (!(x >= 0.0)) throw ConfigError(path(key) + ": must be >= 0");
    return x;
}

std::int64_t Fields::integer(const std::string& key, std::int64_t fallback, std::int64_t min_value) {
    if (!has(key)) {
        seen_.push_back(key);
        return fallback;
    }
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < min_value) throw ConfigError(path(key) + ": must be >= " + std::to_string(min_value));
    return x;
}

std::uint64_t Fields::seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) {
        seen_.push_back(key);
        return fallback;
    }
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(path(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool Fields::boolean(const std::string& key, bool fallback) {
    if (!has(key)) {
        seen_.push_back(key);
        return fallback;
    }
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    return v.get<bool>();
}

std::string Fields::string(const std::string& key) {
    if (!has(key)) throw ConfigError(path(key) + ": required field is missing");
    const json& v = at(key);
    if (!v.is_string() || v.get<std::string>().empty()) throw ConfigError(path(key) + ": expected a non-empty string");
    return v.get<std::string>();
}

std::optional<std::string> Fields::optional_string(const std::string& key) {
    if (!has(key)) {
        seen_.push_back(key);
        return std::nullopt;
    }
    return string(key);
}

std::vector<double> Fields::numbers(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(path(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ConfigError(path(key) + "[" + std::to_string(i) + "]: expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

Fields Fields::object(const std::string& key) {
    if (!has(key)) {
        seen_.push_back(key);
        return Fields(empty_object(), path(key));
    }
    return Fields(at(key), path(key));
}

void Fields::reject_unknown() const {
    for (const auto& item : obj_.items()) {
        if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end()) {
            throw ConfigError(path(item.key()) + ": unknown field");
        }
    }
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON (" + e.what() + ")");
    }
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.echo = doc;
    Fields top(doc, "");
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

    cfg.prompts = resolve(top.string("prompts"));
    cfg.latent = resolve(top.string("latent"));
    if (auto s = top.optional_string("source")) cfg.source = resolve(*s);
    if (auto s = top.optional_string("masks")) cfg.masks = resolve(*s);
    if (auto s = top.optional_string("mixer")) cfg.mixer = resolve(*s);
    cfg.learn_weights = top.boolean("learn_weights", false);
    cfg.hidden = static_cast<std::size_t>(top.integer("hidden", 0, 0));
    cfg.seed = top.seed("seed", 0);
    if (auto s = top.optional_string("output_dir")) cfg.output_dir = resolve(*s);
    if (cfg.masks && cfg.learn_weights) {
        throw ConfigError("learn_weights: user masks are frozen; drop either masks or learn_weights");
    }

    Fields coeffs = top.object("coeffs");
    cfg.coeffs.lambda_g = coeffs.non_negative("lambda_g", cfg.coeffs.lambda_g);
    cfg.coeffs.lambda_c = coeffs.non_negative("lambda_c", cfg.coeffs.lambda_c);
    cfg.coeffs.lambda_2 = coeffs.non_negative("lambda_2", cfg.coeffs.lambda_2);
    cfg.coeffs.eps = coeffs.non_negative("eps", cfg.coeffs.eps);
    coeffs.reject_unknown();

    Fields solver = top.object("solver");
    cfg.solver.dt = solver.positive("dt", cfg.solver.dt);
    cfg.solver.steps = static_cast<int>(solver.integer("steps", cfg.solver.steps, 0));
    cfg.solver.eta_w = solver.non_negative("eta_w", cfg.solver.eta_w);
    cfg.solver.eta_theta = solver.non_negative("eta_theta", cfg.solver.eta_theta);
    cfg.solver.stop_tol = solver.non_negative("stop_tol", cfg.solver.stop_tol);
    cfg.solver.record_every = static_cast<int>(solver.integer("record_every", cfg.solver.record_every, 1));
    solver.reject_unknown();

    Fields pyramid = top.object("pyramid");
    cfg.levels = static_cast<std::size_t>(pyramid.integer("levels", 1, 1));
    if (pyramid.has("level_weights")) {
        auto lw = pyramid.numbers("level_weights");
        if (lw.size() != cfg.levels) throw ConfigError("pyramid.level_weights: need one weight per level");
        for (double v : lw) {
            if (!(v >= 0.0)) throw ConfigError("pyramid.level_weights: weights must be >= 0");
        }
        cfg.level_weights = std::move(lw);
    }
    pyramid.reject_unknown();

    top.reject_unknown();
    return cfg;
}

}  // namespace mpsi::cli
