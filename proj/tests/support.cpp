#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>

#include <unistd.h>

namespace mpsi::testing {

Vec naive_matvec(const Mat& W, const Vec& b, const Vec& x) {
    Vec y(W.rows);
    for (std::size_t r = 0; r < W.rows; ++r) {
        long double acc = 0.0L;
        for (std::size_t c = 0; c < W.cols; ++c) acc += static_cast<long double>(W.values[r * W.cols + c]) * x[c];
        y[r] = static_cast<double>(acc + b[r]);
    }
    return y;
}

Vec naive_mix(const MixerParams& p, const PromptSet& prompts) {
    const std::size_t k = prompts.k, d = prompts.d;
    Vec concat;
    for (const auto& z : prompts.embeddings) concat.insert(concat.end(), z.begin(), z.end());
    Vec hidden(p.hidden);
    for (std::size_t h = 0; h < p.hidden; ++h) {
        double s = p.b1[h];
        for (std::size_t c = 0; c < k * d; ++c) s += p.W1.values[h * k * d + c] * concat[c];
        hidden[h] = std::tanh(s);
    }
    Vec y(d);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < k; ++i) mean += prompts.embeddings[i][j];
        double r = p.b2[j];
        for (std::size_t h = 0; h < p.hidden; ++h) r += p.W2.values[j * p.hidden + h] * hidden[h];
        y[j] = mean / static_cast<double>(k) + r;
    }
    double n2 = 0.0;
    for (double v : y) n2 += v * v;
    const double n = std::max(std::sqrt(n2), 1e-8);
    for (auto& v : y) v /= n;
    return y;
}

std::vector<double> naive_weights(const BlendField& field) {
    const std::size_t P = field.H * field.W;
    std::vector<double> w(field.k * P);
    for (std::size_t p = 0; p < P; ++p) {
        double z = 0.0;
        for (std::size_t i = 0; i < field.k; ++i) z += std::exp(field.logits[i * P + p]);
        for (std::size_t i = 0; i < field.k; ++i) w[i * P + p] = std::exp(field.logits[i * P + p]) / z;
    }
    return w;
}

namespace {

struct CellAcc {
    Vec dz;
    Vec w;
    double count = 0.0;
};

Vec unit_or_diff(const Vec& z, const std::optional<Vec>& source) {
    Vec v = z;
    if (source) {
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= (*source)[j];
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (auto& x : v) x /= n;
    }
    return v;
}

double ell(const Vec& a, const Vec& b, double eps) {
    double ab = 0.0, aa = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        ab += a[j] * b[j];
        aa += a[j] * a[j];
    }
    return 1.0 - ab / std::sqrt(aa + eps * eps);
}

}  // namespace

double brute_force_total(const LossInputs& in) {
    const auto& cur = in.current;
    const std::size_t H = cur.H, W = cur.W, d = cur.d, k = in.field.k, P = H * W;
    const std::vector<double> w = naive_weights(in.field);

    double total = 0.0;
    for (std::size_t l = 0; l < in.pyramid.levels.size(); ++l) {
        const std::size_t s = std::size_t{1} << l;
        std::map<std::pair<std::size_t, std::size_t>, CellAcc> cells;
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t c = 0; c < W; ++c) {
                auto& acc = cells[{r / s, c / s}];
                if (acc.dz.empty()) {
                    acc.dz.assign(d, 0.0);
                    acc.w.assign(k, 0.0);
                }
                const std::size_t p = r * W + c;
                for (std::size_t j = 0; j < d; ++j) acc.dz[j] += cur.values[p * d + j] - in.initial.values[p * d + j];
                for (std::size_t i = 0; i < k; ++i) acc.w[i] += w[i * P + p];
                acc.count += 1.0;
            }
        }
        std::size_t cells_w = 0;
        for (const auto& [key, acc] : cells) cells_w = std::max(cells_w, key.second + 1);
        double level_sum = 0.0;
        for (const auto& [key, acc] : cells) {
            const double m = in.pyramid.levels[l].mask[key.first * cells_w + key.second];
            Vec a = acc.dz;
            for (auto& v : a) v /= acc.count;
            for (std::size_t i = 0; i < k; ++i) {
                level_sum += m * (acc.w[i] / acc.count) * ell(a, in.dirs.styles[i], in.coeffs.eps);
            }
        }
        total += in.pyramid.levels[l].weight * level_sum / static_cast<double>(cells.size());
    }

    if (in.coeffs.lambda_g > 0.0) {
        Vec mean(d, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t j = 0; j < d; ++j) mean[j] += (cur.values[p * d + j] - in.initial.values[p * d + j]);
        }
        for (auto& v : mean) v /= static_cast<double>(P);
        const Vec fused = in.mixer ? unit_or_diff(naive_mix(in.mixer->params, in.mixer->prompts), in.mixer->prompts.source)
                                   : *in.dirs.fused;
        total += in.coeffs.lambda_g * ell(mean, fused, in.coeffs.eps);
    }

    double content = 0.0, smooth = 0.0;
    for (std::size_t n = 0; n < cur.values.size(); ++n) {
        const double dz = cur.values[n] - in.initial.values[n];
        content += dz * dz;
        if (in.history) {
            const double acc = cur.values[n] - 2.0 * in.history->previous[n] +
                               (in.history->previous[n] - in.history->prev_delta[n]);
            smooth += acc * acc;
        }
    }
    total += in.coeffs.lambda_c * content / static_cast<double>(P);
    if (in.history) total += in.coeffs.lambda_2 * smooth / static_cast<double>(P);
    return total;
}

namespace {

// Solves A x = b for a small dense system; false when (near) singular.
bool solve(std::vector<std::vector<double>> A, std::vector<double> b, std::vector<double>& x) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
        }
        if (std::abs(A[piv][col]) < 1e-13) return false;
        std::swap(A[piv], A[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = A[r][col] / A[col][col];
            for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    x.resize(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
    return true;
}

}  // namespace

HullOptimum hull_maxmin(const PromptSet& prompts) {
    const std::size_t k = prompts.k, d = prompts.d;
    HullOptimum best;
    best.value = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < k; ++i) {
            if (mask & (1u << i)) idx.push_back(i);
        }
        const std::size_t m = idx.size();
        // Minimise |sum a_i z_i|^2 subject to sum a_i = 1:  [G 1; 1^T 0] [a; mu] = [0; 1].
        std::vector<std::vector<double>> A(m + 1, std::vector<double>(m + 1, 0.0));
        std::vector<double> rhs(m + 1, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) {
                double g = 0.0;
                for (std::size_t j = 0; j < d; ++j) g += prompts.embeddings[idx[a]][j] * prompts.embeddings[idx[b]][j];
                A[a][b] = g;
            }
            A[a][m] = 1.0;
            A[m][a] = 1.0;
        }
        rhs[m] = 1.0;
        std::vector<double> sol;
        if (!solve(A, rhs, sol)) continue;
        if (std::any_of(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(m), [](double v) { return v < -1e-12; })) {
            continue;
        }
        Vec c(d, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t j = 0; j < d; ++j) c[j] += sol[a] * prompts.embeddings[idx[a]][j];
        }
        double n = 0.0;
        for (double v : c) n += v * v;
        n = std::sqrt(n);
        if (n < best.value) {
            best.value = n;
            best.direction = c;
            for (auto& v : best.direction) v /= n;
        }
    }
    return best;
}

LossInputs LossCase::inputs() const {
    return LossInputs{.current = current,
                      .initial = initial,
                      .dirs = dirs,
                      .field = field,
                      .pyramid = pyramid,
                      .coeffs = coeffs,
                      .history = history ? &*history : nullptr,
                      .mixer = binding ? &*binding : nullptr};
}

void fill_case(LossCase& c, std::uint64_t seed, const CaseShape& shape, bool use_mixer) {
    Rng rng(seed);
    c.prompts = synth_prompts(rng, shape.k, shape.d, shape.k > 1 ? 20.0 : 0.0);
    if (rng.uniform() < 0.5) {
        Vec src = rng.normal_vec(shape.d);
        c.prompts.source = normalize(src, 1e-12);
    }
    c.dirs = directions_from(c.prompts);
    c.initial = synth_latent(rng, shape.H, shape.W, shape.d, 1.0);
    c.current = c.initial;
    for (auto& v : c.current.values) v += 0.5 * rng.normal();

    c.field = uniform_field(shape.k, shape.H, shape.W, true);
    for (auto& v : c.field.logits) v = 3.0 * rng.normal();

    std::vector<double> lw(shape.levels);
    for (auto& v : lw) v = rng.uniform(0.1, 2.0);
    c.pyramid = build_pyramid(shape.H, shape.W, shape.levels, lw);
    for (auto& level : c.pyramid.levels) {
        for (auto& m : level.mask) m = rng.uniform() < 0.15 ? 0.0 : rng.uniform();
    }

    c.coeffs = LossCoeffs{.lambda_g = rng.uniform() < 0.7 ? rng.uniform(0.05, 1.0) : 0.0,
                          .lambda_c = rng.uniform(0.0, 0.2),
                          .lambda_2 = rng.uniform(0.0, 0.5),
                          .eps = rng.uniform() < 0.5 ? 1e-3 : rng.uniform(0.01, 0.5)};

    if (rng.uniform() < 0.7) {
        TrajectoryHistory h;
        h.previous = c.current.values;
        h.prev_delta.resize(h.previous.size());
        for (std::size_t n = 0; n < h.previous.size(); ++n) {
            h.previous[n] -= 0.2 * rng.normal();
            h.prev_delta[n] = 0.2 * rng.normal();
        }
        c.history = std::move(h);
    }

    if (use_mixer) {
        c.mixer = init_mixer(rng, shape.k, shape.d, 2 * shape.d);
        for (auto& v : c.mixer->W2.values) v = 0.2 * rng.normal();
        for (auto& v : c.mixer->b2) v = 0.2 * rng.normal();
        c.binding.emplace(MixerBinding{*c.mixer, c.prompts});
    } else {
        c.dirs.fused = normalize(rng.normal_vec(shape.d), 1e-12);
    }
}

CaseShape random_shape(std::uint64_t seed) {
    Rng rng(seed ^ 0xC0FFEEULL);
    CaseShape s;
    s.H = 1 + rng.next_u64() % 8;
    s.W = 1 + rng.next_u64() % 8;
    s.d = 2 + rng.next_u64() % 15;
    s.k = 1 + rng.next_u64() % 4;
    std::size_t max_levels = 1;
    while (max_levels < 3 && (std::size_t{1} << max_levels) <= std::max(s.H, s.W)) ++max_levels;
    s.levels = 1 + rng.next_u64() % max_levels;
    return s;
}

PromptSet asymmetric_tuple(std::uint64_t seed) {
    Rng rng(seed);
    return synth_prompts(rng, 3, 8, 30.0);
}

PromptSet orthogonal_triple() {
    PromptSet p;
    p.k = 3;
    p.d = 3;
    p.embeddings = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    p.labels = {"a", "b", "c"};
    return p;
}

std::filesystem::path scratch_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("mpsi_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mpsi::testing
