#include "pxseg/sampling.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "pxseg/errors.hpp"
#include "pxseg/rng.hpp"

namespace pxseg {

namespace {

bool eligible(const LabelView& mask, std::int64_t i, std::optional<int> ignore_label) {
    if (!mask.valid.empty() && mask.valid[static_cast<std::size_t>(i)] == 0) return false;
    if (ignore_label && mask.labels[static_cast<std::size_t>(i)] == *ignore_label) return false;
    return true;
}

std::pair<int, int> coord_of(const LabelView& mask, std::int64_t i) {
    return {static_cast<int>(i / mask.width), static_cast<int>(i % mask.width)};
}

// First k of a seeded partial Fisher-Yates shuffle.
std::vector<std::int64_t> draw_without_replacement(std::vector<std::int64_t>& pool,
                                                   std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k)};
}

std::vector<std::int64_t> draw_with_replacement(const std::vector<std::int64_t>& pool,
                                                std::size_t k, Rng& rng) {
    std::vector<std::int64_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(pool[static_cast<std::size_t>(rng.next_below(pool.size()))]);
    return out;
}

void append_batch(PixelBatch& batch, const LabelView& mask, const std::vector<std::int64_t>& idx) {
    for (std::int64_t i : idx) {
        batch.coords.push_back(coord_of(mask, i));
        const int label = mask.labels[static_cast<std::size_t>(i)];
        batch.labels.push_back(label);
        ++batch.per_class_counts[label];
    }
}

} // namespace

std::vector<std::pair<int, std::int64_t>> class_presence(const LabelView& mask,
                                                         std::optional<int> ignore_label) {
    std::map<int, std::int64_t> counts;
    const std::int64_t n = static_cast<std::int64_t>(mask.height) * mask.width;
    for (std::int64_t i = 0; i < n; ++i)
        if (eligible(mask, i, ignore_label)) ++counts[mask.labels[static_cast<std::size_t>(i)]];
    return {counts.begin(), counts.end()};
}

PixelBatch sample_uniform(const LabelView& mask, const SamplePlan& plan) {
    if (plan.n_total <= 0) throw DataError("sample_uniform: n_total must be positive");
    std::vector<std::int64_t> pool;
    const std::int64_t n = static_cast<std::int64_t>(mask.height) * mask.width;
    for (std::int64_t i = 0; i < n; ++i)
        if (eligible(mask, i, plan.ignore_label)) pool.push_back(i);
    if (pool.empty()) throw DataError("sample_uniform: no eligible pixels");

    Rng rng(plan.seed);
    const auto want = static_cast<std::size_t>(plan.n_total);
    const std::vector<std::int64_t> chosen = (pool.size() >= want)
                                                 ? draw_without_replacement(pool, want, rng)
                                                 : draw_with_replacement(pool, want, rng);
    PixelBatch batch;
    batch.coords.reserve(want);
    batch.labels.reserve(want);
    append_batch(batch, mask, chosen);
    return batch;
}

PixelBatch sample_class_balanced(const LabelView& mask, const SamplePlan& plan) {
    if (plan.n_total <= 0) throw DataError("sample_class_balanced: n_total must be positive");
    const std::int64_t n = static_cast<std::int64_t>(mask.height) * mask.width;
    std::map<int, std::vector<std::int64_t>> by_class; // ascending labels
    for (std::int64_t i = 0; i < n; ++i)
        if (eligible(mask, i, plan.ignore_label))
            by_class[mask.labels[static_cast<std::size_t>(i)]].push_back(i);
    if (by_class.empty()) throw DataError("sample_class_balanced: no eligible pixels");

    const int k = static_cast<int>(by_class.size());
    const int quota = plan.n_total / k;
    const int remainder = plan.n_total % k;

    Rng rng(plan.seed);
    PixelBatch batch;
    batch.coords.reserve(static_cast<std::size_t>(plan.n_total));
    batch.labels.reserve(static_cast<std::size_t>(plan.n_total));

    std::vector<std::int64_t> leftovers; // unsampled pixels, for redistribute mode
    std::size_t deficit = 0;
    int class_index = 0;
    for (auto& [label, pixels] : by_class) {
        const auto want =
            static_cast<std::size_t>(quota + (class_index < remainder ? 1 : 0));
        ++class_index;
        if (pixels.size() >= want) {
            const auto chosen = draw_without_replacement(pixels, want, rng);
            append_batch(batch, mask, chosen);
            leftovers.insert(leftovers.end(),
                             pixels.begin() + static_cast<std::ptrdiff_t>(want), pixels.end());
        } else if (plan.skew_fallback == SkewFallback::with_replacement) {
            // keep the per-class balance by resampling the scarce class
            append_batch(batch, mask, pixels);
            append_batch(batch, mask, draw_with_replacement(pixels, want - pixels.size(), rng));
        } else {
            append_batch(batch, mask, pixels);
            deficit += want - pixels.size();
        }
    }

    if (deficit > 0) {
        if (leftovers.empty())
            for (const auto& [label, pixels] : by_class)
                leftovers.insert(leftovers.end(), pixels.begin(), pixels.end());
        const auto chosen = (leftovers.size() >= deficit)
                                ? draw_without_replacement(leftovers, deficit, rng)
                                : draw_with_replacement(leftovers, deficit, rng);
        append_batch(batch, mask, chosen);
    }
    return batch;
}

PixelBatch sample_pixels(const LabelView& mask, const SamplePlan& plan) {
    return plan.strategy == SampleStrategy::uniform ? sample_uniform(mask, plan)
                                                    : sample_class_balanced(mask, plan);
}

} // namespace pxseg
