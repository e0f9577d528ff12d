#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace mpsi {

/// Dense 64-bit vector. Embeddings, fused codes and per-cell deltas all live in one.
using Vec = std::vector<double>;

/// Row-major dense matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    bool operator==(const Mat&) const = default;
};

/// Seeded pseudorandom stream.
///
/// Bits come from std::mt19937_64, whose recurrence, constants and seeding
/// procedure are fixed by the C++ standard, so the raw stream is identical on
/// every conforming platform. Real-valued draws are derived here rather than
/// through <random> distributions (whose algorithms are implementation-defined):
///   uniform() = (bits >> 11) * 2^-53                  in [0, 1)
///   normal()  = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)     Box-Muller, one draw per call
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Vector of i.i.d. standard normal draws.
    Vec normal_vec(std::size_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

/// Returns W x + b. Throws ShapeError naming both shapes on mismatch.
Vec affine(const Mat& W, std::span<const double> b, std::span<const double> x);

/// Max-subtracted softmax; entries positive and summing to one.
Vec softmax(std::span<const double> logits);

/// Vector-Jacobian product of softmax: given w = softmax(z) and dL/dw, returns dL/dz.
Vec softmax_backward(std::span<const double> weights, std::span<const double> upstream);

/// x / max(|x|, eps).
Vec normalize(std::span<const double> x, double eps);

/// Vector-Jacobian product of normalize at x.
Vec normalize_backward(std::span<const double> x, double eps, std::span<const double> grad_out);

/// Regularized cosine distance 1 - <a, b_hat> / sqrt(|a|^2 + eps^2).
///
/// b_hat must be unit norm (checked to 1e-9). With eps > 0 the value is smooth
/// at a = 0, where the gradient is -b_hat / eps. eps == 0 with a == 0 throws
/// DegenerateError.
double eps_cosine(std::span<const double> a, std::span<const double> b_hat, double eps);

/// Gradient of eps_cosine with respect to a.
Vec eps_cosine_grad(std::span<const double> a, std::span<const double> b_hat, double eps);

/// Gradient of eps_cosine with respect to b_hat, treating b_hat as a free vector.
Vec eps_cosine_grad_dir(std::span<const double> a, std::span<const double> b_hat, double eps);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central finite differences (f(x + h e_j) - f(x - h e_j)) / 2h.
/// Throws EvaluationError naming the coordinate if f is non-finite.
Vec fd_grad(const ScalarFn& f, std::span<const double> x, double h);

/// Mixed relative/absolute gradient error: |a - n| / max(|a|, |n|), or the
/// plain absolute difference when both magnitudes are below `small`.
struct GradErr {
    double rel = 0.0;
    double abs = 0.0;
    bool small = false;
};
GradErr grad_error(double analytic, double numeric, double small = 1e-6);

}  // namespace mpsi
