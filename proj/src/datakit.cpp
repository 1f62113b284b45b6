#include "pxseg/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "pxseg/errors.hpp"
#include "pxseg/rng.hpp"

namespace pxseg {

namespace {

using nlohmann::json;

constexpr std::uint64_t kVolumeSalt = 0x766f6cull; // "vol"

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known) throw DataError("unknown key '" + item.key() + "' in " + where);
    }
}

// A smooth nonnegative field: sum of seeded Gaussian bumps. Centers land in
// the central half of the slice so the structures sit inside the valid mask.
struct Bump {
    double row, col, sigma, amplitude;
};

std::vector<Bump> draw_bumps(Rng& rng, int n, int height, int width, double sigma_lo,
                             double sigma_hi, double amp_lo, double amp_hi) {
    std::vector<Bump> bumps(static_cast<std::size_t>(n));
    for (Bump& b : bumps) {
        b.row = rng.next_uniform(0.25 * height, 0.75 * height);
        b.col = rng.next_uniform(0.25 * width, 0.75 * width);
        b.sigma = rng.next_uniform(sigma_lo, sigma_hi);
        b.amplitude = rng.next_uniform(amp_lo, amp_hi);
    }
    return bumps;
}

double field_at(const std::vector<Bump>& bumps, int r, int c) {
    double v = 0.0;
    for (const Bump& b : bumps) {
        const double dr = r - b.row;
        const double dc = c - b.col;
        v += b.amplitude * std::exp(-(dr * dr + dc * dc) / (2.0 * b.sigma * b.sigma));
    }
    return v;
}

// Sorted-field assignment gives every class exactly its target voxel count:
// the top pixels of a smooth field form nested super-level sets.
void assign_top_pixels(const std::vector<double>& field, const std::vector<int>& pool,
                       std::int64_t count, std::uint8_t label, std::vector<std::uint8_t>& out) {
    std::vector<int> order(pool);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (field[static_cast<std::size_t>(a)] != field[static_cast<std::size_t>(b)])
            return field[static_cast<std::size_t>(a)] > field[static_cast<std::size_t>(b)];
        return a < b;
    });
    for (std::int64_t i = 0; i < count; ++i)
        out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = label;
}

// ---- PXVOL byte-level helpers (explicit little-endian) ----

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::size_t read_bytes(std::istream& is, void* out, std::size_t n) {
    is.read(static_cast<char*>(out), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount());
}

std::uint32_t decode_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void SynthConfig::validate() const {
    if (n_volumes < 1) throw DataError("n_volumes must be positive");
    if (slices_per_volume < 1) throw DataError("slices_per_volume must be positive");
    if (height < 4 || width < 4) throw DataError("height and width must be at least 4");
    if (n_classes < 1) throw DataError("n_classes must be positive");
    if (static_cast<int>(class_fractions.size()) != n_classes - 1)
        throw DataError("class_fractions must have n_classes-1 entries, got " +
                        std::to_string(class_fractions.size()) + " for n_classes " +
                        std::to_string(n_classes));
    double total = 0.0;
    for (double f : class_fractions) {
        if (f < 0.0) throw DataError("class_fractions entries must be nonnegative");
        total += f;
    }
    if (total > 1.0)
        throw DataError("class_fractions sum to " + std::to_string(total) +
                        " > 1, leaving no background");
    if (modality_count < 1) throw DataError("modality_count must be positive");
    if (noise_sigma < 0.0) throw DataError("noise_sigma must be nonnegative");
}

SynthConfig SynthConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("synth config JSON parse error: ") + e.what());
    }
    if (!j.is_object()) throw DataError("synth config JSON root must be an object");
    reject_unknown_keys(j,
                        {"n_volumes", "slices_per_volume", "height", "width", "n_classes",
                         "class_fractions", "modality_count", "noise_sigma", "bias_field",
                         "nested", "seed"},
                        "synth config");
    SynthConfig cfg;
    try {
        if (j.contains("n_volumes")) cfg.n_volumes = j["n_volumes"].get<int>();
        if (j.contains("slices_per_volume"))
            cfg.slices_per_volume = j["slices_per_volume"].get<int>();
        if (j.contains("height")) cfg.height = j["height"].get<int>();
        if (j.contains("width")) cfg.width = j["width"].get<int>();
        if (j.contains("n_classes")) cfg.n_classes = j["n_classes"].get<int>();
        if (j.contains("class_fractions"))
            cfg.class_fractions = j["class_fractions"].get<std::vector<double>>();
        if (j.contains("modality_count")) cfg.modality_count = j["modality_count"].get<int>();
        if (j.contains("noise_sigma")) cfg.noise_sigma = j["noise_sigma"].get<double>();
        if (j.contains("bias_field")) cfg.bias_field = j["bias_field"].get<bool>();
        if (j.contains("nested")) cfg.nested = j["nested"].get<bool>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("synth config JSON field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

SynthConfig SynthConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open synth config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_json_text(buf.str());
}

std::string SynthConfig::to_json_text() const {
    json j;
    j["n_volumes"] = n_volumes;
    j["slices_per_volume"] = slices_per_volume;
    j["height"] = height;
    j["width"] = width;
    j["n_classes"] = n_classes;
    j["class_fractions"] = class_fractions;
    j["modality_count"] = modality_count;
    j["noise_sigma"] = noise_sigma;
    j["bias_field"] = bias_field;
    j["nested"] = nested;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

Volume Volume::make(int channels, int depth, int height, int width) {
    if (channels < 1 || depth < 1 || height < 1 || width < 1)
        throw ShapeError("volume dimensions must be positive");
    Volume v;
    v.channels = channels;
    v.depth = depth;
    v.height = height;
    v.width = width;
    const std::size_t spatial =
        static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
        static_cast<std::size_t>(width);
    v.image.assign(static_cast<std::size_t>(channels) * spatial, 0.0f);
    v.labels.assign(spatial, 0);
    v.valid.assign(spatial, 0);
    return v;
}

Volume generate_volume(const SynthConfig& config, int volume_index) {
    config.validate();
    const int h = config.height, w = config.width;
    const int n_px = h * w;
    Volume vol = Volume::make(config.modality_count, config.slices_per_volume, h, w);

    // Elliptical validity region, fixed per config (anatomy-style footprint).
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double ry = 0.47 * h, rx = 0.47 * w;
    std::vector<std::uint8_t> valid_px(static_cast<std::size_t>(n_px), 0);
    std::vector<int> valid_list;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double dy = (r - cy) / ry, dx = (c - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) {
                valid_px[static_cast<std::size_t>(r * w + c)] = 1;
                valid_list.push_back(r * w + c);
            }
        }
    const std::int64_t n_valid = static_cast<std::int64_t>(valid_list.size());

    // Class intensity means, distinct per modality via a cyclic shift.
    const int k = config.n_classes;
    const auto class_mean = [&](int modality, int label) {
        return static_cast<double>(((label + modality) % k) + 1) / (k + 1);
    };

    const std::uint64_t volume_seed =
        derive_seed(derive_seed(config.seed, kVolumeSalt), static_cast<std::uint64_t>(volume_index));

    for (int z = 0; z < config.slices_per_volume; ++z) {
        Rng rng(derive_seed(volume_seed, static_cast<std::uint64_t>(z)));
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(n_px), 0);

        // Exact per-class voxel counts; trim the largest target if rounding
        // overshoots the valid area.
        std::vector<std::int64_t> targets(static_cast<std::size_t>(k), 0);
        for (int c = 1; c < k; ++c)
            targets[static_cast<std::size_t>(c)] = static_cast<std::int64_t>(
                std::llround(config.class_fractions[static_cast<std::size_t>(c - 1)] *
                             static_cast<double>(n_valid)));
        while (std::accumulate(targets.begin(), targets.end(), std::int64_t{0}) > n_valid) {
            auto it = std::max_element(targets.begin(), targets.end());
            --*it;
        }

        if (config.nested) {
            // One shared field; descending super-level sets nest, so the
            // highest label claims the innermost core.
            const int n_bumps = 2 + static_cast<int>(rng.next_below(2));
            const auto bumps = draw_bumps(rng, n_bumps, h, w, h / 8.0, h / 4.0, 0.5, 1.5);
            std::vector<double> field(static_cast<std::size_t>(n_px), 0.0);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    field[static_cast<std::size_t>(r * w + c)] = field_at(bumps, r, c);
            std::vector<int> order(valid_list);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                if (field[static_cast<std::size_t>(a)] != field[static_cast<std::size_t>(b)])
                    return field[static_cast<std::size_t>(a)] > field[static_cast<std::size_t>(b)];
                return a < b;
            });
            std::size_t cursor = 0;
            for (int c = k - 1; c >= 1; --c)
                for (std::int64_t i = 0; i < targets[static_cast<std::size_t>(c)]; ++i)
                    labels[static_cast<std::size_t>(order[cursor++])] =
                        static_cast<std::uint8_t>(c);
        } else {
            // Independent blob per class, carved from still-unassigned valid
            // pixels in descending label order.
            for (int c = k - 1; c >= 1; --c) {
                const int n_bumps = 2 + static_cast<int>(rng.next_below(2));
                const auto bumps = draw_bumps(rng, n_bumps, h, w, h / 8.0, h / 4.0, 0.5, 1.5);
                std::vector<double> field(static_cast<std::size_t>(n_px), 0.0);
                for (int r = 0; r < h; ++r)
                    for (int cc = 0; cc < w; ++cc)
                        field[static_cast<std::size_t>(r * w + cc)] = field_at(bumps, r, cc);
                std::vector<int> pool;
                for (int idx : valid_list)
                    if (labels[static_cast<std::size_t>(idx)] == 0) pool.push_back(idx);
                assign_top_pixels(field, pool, targets[static_cast<std::size_t>(c)],
                                  static_cast<std::uint8_t>(c), labels);
            }
        }

        // Intensities: class mean, optional smooth multiplicative bias
        // (mean-1 over the valid area), then additive noise.
        const std::size_t slice_base = static_cast<std::size_t>(z) * n_px;
        for (int m = 0; m < config.modality_count; ++m) {
            std::vector<double> gain(static_cast<std::size_t>(n_px), 1.0);
            if (config.bias_field) {
                const int n_bumps = 2 + static_cast<int>(rng.next_below(3));
                const auto bumps =
                    draw_bumps(rng, n_bumps, h, w, h / 2.0, static_cast<double>(h), 0.2, 0.6);
                double sum = 0.0;
                for (int idx : valid_list) {
                    const double g = 1.0 + field_at(bumps, idx / w, idx % w);
                    gain[static_cast<std::size_t>(idx)] = g;
                    sum += g;
                }
                const double mean = sum / static_cast<double>(n_valid);
                for (int idx : valid_list) gain[static_cast<std::size_t>(idx)] /= mean;
            }
            const std::size_t chan_base =
                (static_cast<std::size_t>(m) * config.slices_per_volume + z) *
                static_cast<std::size_t>(n_px);
            for (int idx = 0; idx < n_px; ++idx) {
                if (!valid_px[static_cast<std::size_t>(idx)]) continue;
                const double mean = class_mean(m, labels[static_cast<std::size_t>(idx)]);
                const double value = mean * gain[static_cast<std::size_t>(idx)] +
                                     config.noise_sigma * rng.next_normal();
                vol.image[chan_base + static_cast<std::size_t>(idx)] =
                    static_cast<float>(value);
            }
        }

        for (int idx = 0; idx < n_px; ++idx) {
            vol.labels[slice_base + static_cast<std::size_t>(idx)] =
                labels[static_cast<std::size_t>(idx)];
            vol.valid[slice_base + static_cast<std::size_t>(idx)] =
                valid_px[static_cast<std::size_t>(idx)];
        }
    }
    return vol;
}

std::vector<std::string> generate_synthetic(const SynthConfig& config,
                                            const std::string& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> paths;
    for (int v = 0; v < config.n_volumes; ++v) {
        char name[32];
        std::snprintf(name, sizeof(name), "vol_%03d.pxvol", v);
        const std::string path = (std::filesystem::path(out_dir) / name).string();
        save_volume(path, generate_volume(config, v));
        paths.push_back(path);
    }
    return paths;
}

Tensor normalize(const Tensor& image, std::span<const std::uint8_t> valid) {
    if (image.rank() != 3)
        throw ShapeError("normalize expects [C,H,W], got rank " + std::to_string(image.rank()));
    const int channels = image.dim(0);
    const std::int64_t n_px = static_cast<std::int64_t>(image.dim(1)) * image.dim(2);
    if (!valid.empty() && static_cast<std::int64_t>(valid.size()) != n_px)
        throw ShapeError("validity mask has " + std::to_string(valid.size()) +
                         " entries, image plane has " + std::to_string(n_px));
    const auto src = image.data();
    Tensor out = Tensor::zeros(image.shape());
    auto dst = out.data_mut();
    for (int c = 0; c < channels; ++c) {
        const std::int64_t base = static_cast<std::int64_t>(c) * n_px;
        std::int64_t n = 0;
        double sum = 0.0;
        for (std::int64_t i = 0; i < n_px; ++i) {
            if (!valid.empty() && !valid[static_cast<std::size_t>(i)]) continue;
            sum += src[static_cast<std::size_t>(base + i)];
            ++n;
        }
        if (n < 2)
            throw DataError("channel " + std::to_string(c) + " has fewer than 2 valid voxels");
        const double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::int64_t i = 0; i < n_px; ++i) {
            if (!valid.empty() && !valid[static_cast<std::size_t>(i)]) continue;
            const double d = src[static_cast<std::size_t>(base + i)] - mean;
            sq += d * d;
        }
        const double stddev = std::sqrt(sq / static_cast<double>(n));
        if (stddev < 1e-12)
            throw DataError("channel " + std::to_string(c) +
                            " has zero variance (constant intensities)");
        for (std::int64_t i = 0; i < n_px; ++i) {
            if (!valid.empty() && !valid[static_cast<std::size_t>(i)]) continue;
            dst[static_cast<std::size_t>(base + i)] =
                (src[static_cast<std::size_t>(base + i)] - mean) / stddev;
        }
    }
    return out;
}

void save_volume(const std::string& path, const Volume& volume) {
    const std::size_t spatial = static_cast<std::size_t>(volume.depth) *
                                static_cast<std::size_t>(volume.height) *
                                static_cast<std::size_t>(volume.width);
    if (volume.image.size() != static_cast<std::size_t>(volume.channels) * spatial ||
        volume.labels.size() != spatial || volume.valid.size() != spatial)
        throw ShapeError("volume payload sizes do not match its dimensions");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open volume for writing: " + path);
    os.write("PXVOL1\0", 7);
    put_u32(os, static_cast<std::uint32_t>(volume.channels));
    put_u32(os, static_cast<std::uint32_t>(volume.depth));
    put_u32(os, static_cast<std::uint32_t>(volume.height));
    put_u32(os, static_cast<std::uint32_t>(volume.width));

    std::vector<unsigned char> buf(volume.image.size() * 4);
    for (std::size_t i = 0; i < volume.image.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &volume.image[i], 4);
        for (int kb = 0; kb < 4; ++kb)
            buf[i * 4 + kb] = static_cast<unsigned char>((u >> (8 * kb)) & 0xFFu);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    os.write(reinterpret_cast<const char*>(volume.labels.data()),
             static_cast<std::streamsize>(volume.labels.size()));
    os.write(reinterpret_cast<const char*>(volume.valid.data()),
             static_cast<std::streamsize>(volume.valid.size()));
    os.flush();
    if (!os) throw DataError("volume write failed: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open volume: " + path);

    char magic[7];
    if (read_bytes(is, magic, 7) != 7) throw DataError("volume truncated before magic: " + path);
    if (std::memcmp(magic, "PXVOL", 5) != 0 || magic[6] != '\0')
        throw DataError("bad volume magic in " + path);
    if (magic[5] != '1')
        throw DataError(std::string("unsupported volume version '") + magic[5] + "' in " + path);

    unsigned char dims[16];
    if (read_bytes(is, dims, 16) != 16) throw DataError("volume truncated in dims: " + path);
    const std::uint32_t c = decode_u32(dims), d = decode_u32(dims + 4),
                        h = decode_u32(dims + 8), w = decode_u32(dims + 12);
    if (c == 0 || d == 0 || h == 0 || w == 0)
        throw DataError("volume dims must be positive in " + path);
    const std::uint64_t spatial = static_cast<std::uint64_t>(d) * h * w;
    if (static_cast<std::uint64_t>(c) * spatial > (1ull << 28))
        throw DataError("volume dims implausibly large in " + path);

    Volume vol = Volume::make(static_cast<int>(c), static_cast<int>(d), static_cast<int>(h),
                              static_cast<int>(w));

    std::vector<unsigned char> buf(vol.image.size() * 4);
    if (read_bytes(is, buf.data(), buf.size()) != buf.size())
        throw DataError("volume truncated in image payload: " + path);
    for (std::size_t i = 0; i < vol.image.size(); ++i) {
        std::uint32_t u = 0;
        for (int kb = 0; kb < 4; ++kb)
            u |= static_cast<std::uint32_t>(buf[i * 4 + kb]) << (8 * kb);
        std::memcpy(&vol.image[i], &u, 4);
    }
    if (read_bytes(is, vol.labels.data(), vol.labels.size()) != vol.labels.size())
        throw DataError("volume truncated in label payload: " + path);
    if (read_bytes(is, vol.valid.data(), vol.valid.size()) != vol.valid.size())
        throw DataError("volume truncated in validity payload: " + path);
    char extra;
    if (read_bytes(is, &extra, 1) != 0)
        throw DataError("volume has trailing bytes beyond its dims: " + path);
    return vol;
}

LabeledSlice volume_slice(const Volume& volume, int z) {
    if (z < 0 || z >= volume.depth)
        throw ShapeError("slice index " + std::to_string(z) + " outside volume depth " +
                         std::to_string(volume.depth));
    const std::int64_t n_px = volume.slice_voxels();
    const std::size_t slice_base = static_cast<std::size_t>(z) * static_cast<std::size_t>(n_px);

    std::vector<double> raw(static_cast<std::size_t>(volume.channels) *
                            static_cast<std::size_t>(n_px));
    for (int m = 0; m < volume.channels; ++m) {
        const std::size_t src_base =
            (static_cast<std::size_t>(m) * volume.depth + static_cast<std::size_t>(z)) *
            static_cast<std::size_t>(n_px);
        for (std::int64_t i = 0; i < n_px; ++i)
            raw[static_cast<std::size_t>(m) * n_px + static_cast<std::size_t>(i)] =
                static_cast<double>(volume.image[src_base + static_cast<std::size_t>(i)]);
    }

    LabeledSlice slice;
    slice.valid.assign(volume.valid.begin() + static_cast<std::ptrdiff_t>(slice_base),
                       volume.valid.begin() + static_cast<std::ptrdiff_t>(slice_base + n_px));
    const Tensor raw_image =
        Tensor::from_data({volume.channels, volume.height, volume.width}, std::move(raw));
    slice.image = normalize(raw_image, slice.valid);
    slice.mask.resize(static_cast<std::size_t>(n_px));
    for (std::int64_t i = 0; i < n_px; ++i)
        slice.mask[static_cast<std::size_t>(i)] =
            static_cast<int>(volume.labels[slice_base + static_cast<std::size_t>(i)]);
    return slice;
}

} // namespace pxseg
