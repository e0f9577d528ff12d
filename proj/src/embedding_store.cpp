#include "mpsi/embedding_store.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mpsi/errors.hpp"
#include "mpsi/mpsi1_codec.hpp"

namespace mpsi {

void PromptSet::validate() const {
    if (k < 1) throw DataError("prompt set: k must be >= 1");
    if (embeddings.size() != k || labels.size() != k) throw ShapeError("prompt set: expected k embeddings and labels");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < k; ++i) {
        if (embeddings[i].size() != d) throw ShapeError("prompt set: embedding " + std::to_string(i) + " has wrong dim");
        if (!all_finite(embeddings[i])) throw DataError("prompt set: embedding " + std::to_string(i) + " not finite");
        if (std::abs(norm(embeddings[i]) - 1.0) > 1e-9) {
            throw DataError("prompt set: embedding " + std::to_string(i) + " is not unit norm");
        }
        if (!seen.insert(labels[i]).second) throw DataError("prompt set: duplicate label '" + labels[i] + "'");
    }
    if (source) {
        if (source->size() != d) throw ShapeError("prompt set: source embedding has wrong dim");
        if (std::abs(norm(*source) - 1.0) > 1e-9) throw DataError("prompt set: source embedding is not unit norm");
    }
}

namespace {

// Load re-normalizes prompt embeddings, so store values v with
// f32(v / |v|) == v; otherwise a load/save cycle could flip low bits.
bool settle(Vec& v) {
    for (int iter = 0; iter < 16; ++iter) {
        const Vec u = normalize(v, 1e-300);
        bool same = true;
        for (std::size_t j = 0; j < u.size(); ++j) {
            const double r = static_cast<float>(u[j]);
            same = same && r == v[j];
            v[j] = r;
        }
        if (same) return true;
    }
    return false;
}

Vec f32_fixed_point(const Vec& e) {
    Vec base(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) base[j] = static_cast<float>(e[j]);
    Vec v = base;
    if (settle(v)) return v;
    // The iteration can cycle; nudging the largest entry by a few ulps breaks it.
    std::size_t big = 0;
    for (std::size_t j = 1; j < base.size(); ++j) {
        if (std::abs(base[j]) > std::abs(base[big])) big = j;
    }
    for (int n : {1, -1, 2, -2, 3, -3, 4, -4}) {
        v = base;
        auto x = static_cast<float>(v[big]);
        const float toward = n > 0 ? std::numeric_limits<float>::infinity() : -std::numeric_limits<float>::infinity();
        for (int s = 0; s < std::abs(n); ++s) x = std::nextafter(x, toward);
        v[big] = x;
        if (settle(v)) return v;
    }
    return base;
}

}  // namespace

std::vector<std::uint8_t> encode_bank(const PromptSet& prompts) {
    prompts.validate();
    codec::Writer w(PayloadKind::prompt_bank);
    w.u32(static_cast<std::uint32_t>(prompts.k));
    w.u32(static_cast<std::uint32_t>(prompts.d));
    for (const auto& e : prompts.embeddings) w.f32s(f32_fixed_point(e));
    for (const auto& label : prompts.labels) w.str(label);
    return w.take();
}

std::vector<std::uint8_t> encode_bank(const LatentGrid& grid) {
    if (grid.values.size() != grid.H * grid.W * grid.d) throw ShapeError("latent grid: value count mismatch");
    if (!all_finite(grid.values)) throw DataError("latent grid: non-finite value");
    codec::Writer w(PayloadKind::latent_grid);
    w.u32(static_cast<std::uint32_t>(grid.H));
    w.u32(static_cast<std::uint32_t>(grid.W));
    w.u32(static_cast<std::uint32_t>(grid.d));
    w.f32s(grid.values);
    return w.take();
}

std::vector<std::uint8_t> encode_masks(const MaskSet& masks) {
    if (masks.values.size() != masks.k * masks.H * masks.W) throw ShapeError("masks: value count mismatch");
    codec::Writer w(PayloadKind::masks);
    w.u32(static_cast<std::uint32_t>(masks.k));
    w.u32(static_cast<std::uint32_t>(masks.H));
    w.u32(static_cast<std::uint32_t>(masks.W));
    w.f32s(masks.values);
    return w.take();
}

namespace {

PromptSet decode_prompts(codec::Reader& r, std::vector<std::string>* warnings) {
    PromptSet ps;
    ps.k = r.u32();
    ps.d = r.u32();
    if (ps.k < 1 || ps.d < 1) throw FormatError("MPSI1 prompt bank: k and d must be positive");
    r.require_floats(static_cast<std::uint64_t>(ps.k) * ps.d);
    ps.embeddings.reserve(ps.k);
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.k; ++i) {
        Vec e = r.f32s(ps.d);
        const double n = norm(e);
        if (n == 0.0) throw DataError("MPSI1 prompt bank: embedding " + std::to_string(i) + " is the zero vector");
        worst = std::max(worst, std::abs(n - 1.0));
        ps.embeddings.push_back(normalize(e, 1e-300));
    }
    for (std::size_t i = 0; i < ps.k; ++i) ps.labels.push_back(r.str());
    r.finish();
    if (worst > 1e-3) {
        std::ostringstream os;
        os << "prompt bank norms deviate from 1 by up to " << worst << "; re-normalized";
        if (warnings) {
            warnings->push_back(os.str());
        } else {
            std::clog << "warning: " << os.str() << '\n';
        }
    }
    ps.validate();
    return ps;
}

LatentGrid decode_latent(codec::Reader& r) {
    LatentGrid g;
    g.H = r.u32();
    g.W = r.u32();
    g.d = r.u32();
    r.require_floats(static_cast<std::uint64_t>(g.H) * g.W * g.d);
    g.values = r.f32s(g.H * g.W * g.d);
    r.finish();
    return g;
}

}  // namespace

BankPayload decode_bank(std::span<const std::uint8_t> bytes, std::vector<std::string>* warnings) {
    codec::Reader r(bytes, codec::Reader::any_kind);
    switch (static_cast<PayloadKind>(r.kind())) {
        case PayloadKind::prompt_bank:
            return decode_prompts(r, warnings);
        case PayloadKind::latent_grid:
            return decode_latent(r);
        default:
            throw FormatError("MPSI1: kind " + std::to_string(r.kind()) + " is not a prompt bank or latent grid");
    }
}

MaskSet decode_masks(std::span<const std::uint8_t> bytes) {
    codec::Reader r(bytes, PayloadKind::masks);
    MaskSet m;
    m.k = r.u32();
    m.H = r.u32();
    m.W = r.u32();
    r.require_floats(static_cast<std::uint64_t>(m.k) * m.H * m.W);
    const std::size_t start = r.offset();
    m.values = r.f32s(m.k * m.H * m.W);
    r.finish();
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (m.values[i] < 0.0 || m.values[i] > 1.0) {
            throw DataError("MPSI1 masks: value outside [0, 1] at byte offset " + std::to_string(start + 4 * i));
        }
    }
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

BankPayload load_bank(const std::filesystem::path& path, std::vector<std::string>* warnings) {
    return decode_bank(read_file(path), warnings);
}

void save_bank(const BankPayload& payload, const std::filesystem::path& path) {
    const auto bytes = std::visit([](const auto& p) { return encode_bank(p); }, payload);
    write_file(path, bytes);
}

PromptSet load_prompts(const std::filesystem::path& path, std::vector<std::string>* warnings) {
    auto payload = load_bank(path, warnings);
    if (!std::holds_alternative<PromptSet>(payload)) throw FormatError(path.string() + ": not a prompt bank");
    return std::get<PromptSet>(std::move(payload));
}

LatentGrid load_latent(const std::filesystem::path& path) {
    auto payload = load_bank(path);
    if (!std::holds_alternative<LatentGrid>(payload)) throw FormatError(path.string() + ": not a latent grid");
    return std::get<LatentGrid>(std::move(payload));
}

MaskSet load_masks(const std::filesystem::path& path) {
    return decode_masks(read_file(path));
}

void save_masks(const MaskSet& masks, const std::filesystem::path& path) {
    write_file(path, encode_masks(masks));
}

namespace {

Vec random_unit(Rng& rng, std::size_t d) {
    for (;;) {
        Vec v = rng.normal_vec(d);
        if (norm(v) > 1e-12) return normalize(v, 1e-300);
    }
}

std::vector<std::string> default_labels(std::size_t k) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < k; ++i) labels.push_back("style" + std::to_string(i));
    return labels;
}

}  // namespace

PromptSet synth_prompts(Rng& rng, std::size_t k, std::size_t d, double min_angle_deg) {
    if (k < 1 || d < 2) throw std::invalid_argument("synth_prompts: need k >= 1 and d >= 2");
    if (min_angle_deg < 0.0 || min_angle_deg > 120.0) {
        throw std::invalid_argument("synth_prompts: min_angle_deg must lie in [0, 120]");
    }
    const double max_dot = std::cos(min_angle_deg * std::numbers::pi / 180.0);
    constexpr int budget = 10000;

    PromptSet ps;
    ps.k = k;
    ps.d = d;
    int attempts = 0;
    while (ps.embeddings.size() < k) {
        if (attempts++ >= budget) {
            throw InfeasibleError("synth_prompts: could not place " + std::to_string(k) + " vectors at >= " +
                                  std::to_string(min_angle_deg) + " deg in d=" + std::to_string(d));
        }
        Vec cand = random_unit(rng, d);
        bool ok = true;
        for (const auto& e : ps.embeddings) {
            if (dot(cand, e) > max_dot) {
                ok = false;
                break;
            }
        }
        if (ok) ps.embeddings.push_back(std::move(cand));
    }
    ps.labels = default_labels(k);
    return ps;
}

PromptSet synth_prompt_pair(Rng& rng, std::size_t d, double angle_deg) {
    if (d < 2) throw std::invalid_argument("synth_prompt_pair: need d >= 2");
    const Vec e1 = random_unit(rng, d);
    Vec e2;
    for (;;) {
        Vec g = rng.normal_vec(d);
        const double proj = dot(g, e1);
        for (std::size_t j = 0; j < d; ++j) g[j] -= proj * e1[j];
        if (norm(g) > 1e-8) {
            e2 = normalize(g, 1e-300);
            break;
        }
    }
    const double phi = angle_deg * std::numbers::pi / 180.0;
    Vec z2(d);
    for (std::size_t j = 0; j < d; ++j) z2[j] = std::cos(phi) * e1[j] + std::sin(phi) * e2[j];

    PromptSet ps;
    ps.k = 2;
    ps.d = d;
    ps.embeddings = {e1, normalize(z2, 1e-300)};
    ps.labels = default_labels(2);
    return ps;
}

LatentGrid synth_latent(Rng& rng, std::size_t H, std::size_t W, std::size_t d, double scale) {
    if (H < 1 || W < 1 || d < 1) throw std::invalid_argument("synth_latent: grid dims must be positive");
    if (scale < 0.0) throw std::invalid_argument("synth_latent: scale must be >= 0");
    LatentGrid g(H, W, d);
    for (auto& v : g.values) v = scale * rng.normal() + 0.0;  // + 0.0 folds -0 to +0
    return g;
}

MaskSet split_masks(std::size_t H, std::size_t W) {
    MaskSet m{2, H, W, std::vector<double>(2 * H * W, 0.0)};
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            const std::size_t style = c < W / 2 ? 0 : 1;
            m.values[style * H * W + r * W + c] = 1.0;
        }
    }
    return m;
}

}  // namespace mpsi
