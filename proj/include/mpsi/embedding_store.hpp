#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mpsi/numerics.hpp"

namespace mpsi {

/// k unit-norm style embeddings with unique labels, plus an optional neutral
/// source embedding used to turn prompts into edit directions.
struct PromptSet {
    std::size_t k = 0;
    std::size_t d = 0;
    std::vector<Vec> embeddings;
    std::vector<std::string> labels;
    std::optional<Vec> source;

    /// Throws DataError / ShapeError when an invariant does not hold.
    void validate() const;

    bool operator==(const PromptSet&) const = default;
};

/// H x W grid of d-dimensional cells, row-major, cell-contiguous.
struct LatentGrid {
    std::size_t H = 0;
    std::size_t W = 0;
    std::size_t d = 0;
    std::vector<double> values;

    LatentGrid() = default;
    LatentGrid(std::size_t h, std::size_t w, std::size_t dim) : H(h), W(w), d(dim), values(h * w * dim, 0.0) {}

    std::size_t positions() const { return H * W; }
    std::span<double> cell(std::size_t p) { return {values.data() + p * d, d}; }
    std::span<const double> cell(std::size_t p) const { return {values.data() + p * d, d}; }
    bool same_shape(const LatentGrid& o) const { return H == o.H && W == o.W && d == o.d; }

    bool operator==(const LatentGrid&) const = default;
};

/// k per-style masks over an H x W grid, style-major then row-major, values in [0, 1].
struct MaskSet {
    std::size_t k = 0;
    std::size_t H = 0;
    std::size_t W = 0;
    std::vector<double> values;

    double at(std::size_t style, std::size_t p) const { return values[style * H * W + p]; }

    bool operator==(const MaskSet&) const = default;
};

enum class PayloadKind : std::uint8_t {
    prompt_bank = 0x01,
    latent_grid = 0x02,
    mixer_params = 0x03,
    masks = 0x04,
};

using BankPayload = std::variant<PromptSet, LatentGrid>;

// MPSI1 layout: "MPSI", version 0x01, kind byte, two zero bytes, then
// little-endian u32 header fields, f32 payload, and (prompt banks only)
// u32-length-prefixed UTF-8 labels.

std::vector<std::uint8_t> encode_bank(const PromptSet& prompts);
std::vector<std::uint8_t> encode_bank(const LatentGrid& grid);
std::vector<std::uint8_t> encode_masks(const MaskSet& masks);

/// Parses a prompt bank or latent grid. Prompt embeddings are rescaled to unit
/// norm; a message is appended to `warnings` (or written to std::clog when
/// null) if any stored norm is off by more than 1e-3.
BankPayload decode_bank(std::span<const std::uint8_t> bytes, std::vector<std::string>* warnings = nullptr);
MaskSet decode_masks(std::span<const std::uint8_t> bytes);

BankPayload load_bank(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void save_bank(const BankPayload& payload, const std::filesystem::path& path);
PromptSet load_prompts(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
LatentGrid load_latent(const std::filesystem::path& path);
MaskSet load_masks(const std::filesystem::path& path);
void save_masks(const MaskSet& masks, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// k unit vectors whose pairwise angles are all >= min_angle_deg, drawn by
/// sequential rejection (at most 10^4 draws). Throws InfeasibleError when the
/// budget runs out.
PromptSet synth_prompts(Rng& rng, std::size_t k, std::size_t d, double min_angle_deg);

/// Two unit vectors at exactly angle_deg, spanning a random plane.
PromptSet synth_prompt_pair(Rng& rng, std::size_t d, double angle_deg);

/// Grid of i.i.d. standard normal cells times `scale`.
LatentGrid synth_latent(Rng& rng, std::size_t H, std::size_t W, std::size_t d, double scale);

/// Hard left/right masks for two styles: columns < W/2 belong to style 0.
MaskSet split_masks(std::size_t H, std::size_t W);

}  // namespace mpsi
