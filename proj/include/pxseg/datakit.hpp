#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pxseg/model.hpp"
#include "pxseg/tensor.hpp"

namespace pxseg {

// Synthetic dataset recipe. class_fractions are the target voxel fractions of
// the foreground classes 1..n_classes-1 (background takes the remainder).
// JSON mirror uses the same snake_case names; unknown keys rejected.
struct SynthConfig {
    int n_volumes = 1;
    int slices_per_volume = 8;
    int height = 64;
    int width = 64;
    int n_classes = 4;
    std::vector<double> class_fractions = {0.05, 0.03, 0.02};
    int modality_count = 3;
    double noise_sigma = 0.05;
    bool bias_field = false;
    bool nested = true; // concentric class regions (highest label innermost)
    std::uint64_t seed = 0x5EED;

    void validate() const;
    static SynthConfig from_json_text(const std::string& text);
    static SynthConfig from_json_file(const std::string& path);
    std::string to_json_text() const;
};

// In-memory mirror of one PXVOL file: image [C,D,H,W] f32, labels and
// validity [D,H,W] u8.
struct Volume {
    int channels = 0;
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<float> image;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> valid;

    static Volume make(int channels, int depth, int height, int width);
    std::int64_t slice_voxels() const { return static_cast<std::int64_t>(height) * width; }
};

// One seeded volume. Per-slice seeds derive from (config.seed, volume_index,
// slice_index); the draw order inside a slice is fixed (structure field
// bumps, then per modality: bias bumps, then row-major noise).
Volume generate_volume(const SynthConfig& config, int volume_index);

// Writes vol_000.pxvol .. under out_dir (created if missing); returns paths.
std::vector<std::string> generate_synthetic(const SynthConfig& config,
                                            const std::string& out_dir);

// Per-channel z-score over valid voxels (population std); invalid voxels are
// set to 0. Throws DataError on a constant channel, naming the channel.
Tensor normalize(const Tensor& image, std::span<const std::uint8_t> valid);

void save_volume(const std::string& path, const Volume& volume);
Volume load_volume(const std::string& path);

// Slice z of a volume as a training sample: normalized [C,H,W] image, labels
// as ints, validity copied.
LabeledSlice volume_slice(const Volume& volume, int z);

} // namespace pxseg
