#include "mpsi/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mpsi/errors.hpp"

namespace mpsi {

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec Rng::normal_vec(std::size_t n) {
    Vec v(n);
    for (auto& x : v) x = normal();
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) {
    return std::sqrt(dot(a, a));
}

bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vec affine(const Mat& W, std::span<const double> b, std::span<const double> x) {
    if (W.cols != x.size() || W.rows != b.size()) {
        std::ostringstream os;
        os << "affine: W is " << W.rows << "x" << W.cols << ", b has " << b.size()
           << " entries, x has " << x.size();
        throw ShapeError(os.str());
    }
    Vec out(W.rows);
    for (std::size_t r = 0; r < W.rows; ++r) out[r] = dot(W.row(r), x) + b[r];
    return out;
}

Vec softmax(std::span<const double> logits) {
    if (logits.empty()) throw ShapeError("softmax: empty input");
    const double m = *std::max_element(logits.begin(), logits.end());
    Vec w(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        w[i] = std::exp(logits[i] - m);
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

Vec softmax_backward(std::span<const double> weights, std::span<const double> upstream) {
    if (weights.size() != upstream.size()) throw ShapeError("softmax_backward: size mismatch");
    const double mean = dot(weights, upstream);
    Vec g(weights.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = weights[i] * (upstream[i] - mean);
    return g;
}

Vec normalize(std::span<const double> x, double eps) {
    const double n = std::max(norm(x), eps);
    Vec y(x.begin(), x.end());
    for (auto& v : y) v /= n;
    return y;
}

Vec normalize_backward(std::span<const double> x, double eps, std::span<const double> grad_out) {
    const double n = norm(x);
    Vec g(grad_out.begin(), grad_out.end());
    if (n < eps) {
        for (auto& v : g) v /= eps;
        return g;
    }
    // (I - y y^T) g / |x|
    double yg = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) yg += (x[i] / n) * grad_out[i];
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = (grad_out[i] - (x[i] / n) * yg) / n;
    return g;
}

namespace {

void check_unit(std::span<const double> b_hat, std::span<const double> a) {
    if (a.size() != b_hat.size()) throw ShapeError("eps_cosine: dimension mismatch");
    if (std::abs(norm(b_hat) - 1.0) > 1e-9) throw DegenerateError("eps_cosine: direction is not unit norm");
}

double eps_denominator(std::span<const double> a, double eps) {
    const double s = std::sqrt(dot(a, a) + eps * eps);
    if (s == 0.0) throw DegenerateError("eps_cosine: zero vector with eps = 0 has no direction");
    return s;
}

}  // namespace

double eps_cosine(std::span<const double> a, std::span<const double> b_hat, double eps) {
    check_unit(b_hat, a);
    const double s = eps_denominator(a, eps);
    return 1.0 - dot(a, b_hat) / s;
}

Vec eps_cosine_grad(std::span<const double> a, std::span<const double> b_hat, double eps) {
    check_unit(b_hat, a);
    const double s = eps_denominator(a, eps);
    const double ab = dot(a, b_hat);
    const double s3 = s * s * s;
    Vec g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = -b_hat[i] / s + ab * a[i] / s3;
    return g;
}

Vec eps_cosine_grad_dir(std::span<const double> a, std::span<const double> b_hat, double eps) {
    check_unit(b_hat, a);
    const double s = eps_denominator(a, eps);
    Vec g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = -a[i] / s;
    return g;
}

Vec fd_grad(const ScalarFn& f, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw EvaluationError("fd_grad: step must be positive");
    Vec probe(x.begin(), x.end());
    Vec g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double x0 = probe[j];
        probe[j] = x0 + h;
        const double fp = f(probe);
        probe[j] = x0 - h;
        const double fm = f(probe);
        probe[j] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw EvaluationError("fd_grad: non-finite function value at coordinate " + std::to_string(j));
        }
        g[j] = (fp - fm) / (2.0 * h);
    }
    return g;
}

GradErr grad_error(double analytic, double numeric, double small) {
    GradErr e;
    e.abs = std::abs(analytic - numeric);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    e.small = mag < small;
    e.rel = mag > 0.0 ? e.abs / mag : 0.0;
    return e;
}

}  // namespace mpsi
