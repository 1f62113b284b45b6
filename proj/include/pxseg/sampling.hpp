#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace pxseg {

// A label mask view: labels[h*w] row-major, valid may be empty (all valid).
struct LabelView {
    int height = 0;
    int width = 0;
    std::span<const int> labels;
    std::span<const std::uint8_t> valid; // empty => every pixel eligible
};

enum class SampleStrategy { uniform, class_balanced };

// What to do when a class has fewer pixels than its quota: resample the
// scarce class with replacement (keeps per-class counts equal), or hand the
// deficit to random pixels of the other classes (ablation mode).
enum class SkewFallback { with_replacement, redistribute };

struct SamplePlan {
    int n_total = 256;
    SampleStrategy strategy = SampleStrategy::class_balanced;
    std::uint64_t seed = 0;
    std::optional<int> ignore_label;
    SkewFallback skew_fallback = SkewFallback::with_replacement;
};

struct PixelBatch {
    std::vector<std::pair<int, int>> coords;
    std::vector<int> labels;
    std::map<int, int> per_class_counts;
};

// Ascending (label, pixel count) over eligible pixels.
std::vector<std::pair<int, std::int64_t>> class_presence(const LabelView& mask,
                                                         std::optional<int> ignore_label);

// N pixels drawn uniformly over eligible pixels: without replacement when
// enough are available, with replacement otherwise.
PixelBatch sample_uniform(const LabelView& mask, const SamplePlan& plan);

// floor(N/K) pixels per present class, one extra for the first N mod K
// classes in ascending label order; scarce classes fall back per the plan.
PixelBatch sample_class_balanced(const LabelView& mask, const SamplePlan& plan);

// Dispatch on plan.strategy.
PixelBatch sample_pixels(const LabelView& mask, const SamplePlan& plan);

} // namespace pxseg
