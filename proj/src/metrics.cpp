#include "pxseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "pxseg/errors.hpp"

namespace pxseg {

namespace {

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

void check_same_shape(const BinaryMask& a, const BinaryMask& b) {
    if (a.dims != b.dims)
        throw ShapeError("mask shape mismatch: pred rank " + std::to_string(a.dims.size()) +
                         " vs gt rank " + std::to_string(b.dims.size()) +
                         " or differing extents");
}

// Spacing-scaled physical coordinates of the voxels used for distances.
std::vector<std::array<double, 3>> distance_points(const BinaryMask& mask, DistanceBasis basis) {
    std::vector<std::array<int, 3>> voxels;
    if (basis == DistanceBasis::surface) {
        voxels = surface_voxels(mask);
    } else {
        const int depth = mask.rank() == 3 ? mask.dims[0] : 1;
        const int height = mask.dims[mask.rank() == 3 ? 1 : 0];
        const int width = mask.dims[mask.rank() == 3 ? 2 : 1];
        for (int z = 0; z < depth; ++z)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    if (mask.grid[(static_cast<std::int64_t>(z) * height + y) * width + x])
                        voxels.push_back({z, y, x});
    }
    double sz = 1.0, sy = 1.0, sx = 1.0;
    if (mask.rank() == 3) {
        sz = mask.spacing[0];
        sy = mask.spacing[1];
        sx = mask.spacing[2];
    } else {
        sy = mask.spacing[0];
        sx = mask.spacing[1];
    }
    std::vector<std::array<double, 3>> points(voxels.size());
    for (std::size_t i = 0; i < voxels.size(); ++i)
        points[i] = {voxels[i][0] * sz, voxels[i][1] * sy, voxels[i][2] * sx};
    return points;
}

std::vector<double> directed_point_distances(const std::vector<std::array<double, 3>>& from,
                                             const std::vector<std::array<double, 3>>& to) {
    std::vector<double> out(from.size(), 0.0);
    const std::int64_t n = static_cast<std::int64_t>(from.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            const double dz = from[i][0] - q[0];
            const double dy = from[i][1] - q[1];
            const double dx = from[i][2] - q[2];
            const double d2 = dz * dz + dy * dy + dx * dx;
            if (d2 < best) best = d2;
        }
        out[i] = std::sqrt(best);
    }
    return out;
}

// Nearest-rank percentile: the ceil(p*n)-th order statistic (1-based).
double nearest_rank_percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const std::size_t rank =
        static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

void append_flag(std::string& out, const char* token) {
    if (!out.empty()) out += ';';
    out += token;
}

std::string format_metric(double value) {
    if (std::isnan(value)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

} // namespace

BinaryMask BinaryMask::make(std::vector<int> dims, std::vector<double> spacing) {
    if (dims.size() != 2 && dims.size() != 3)
        throw ShapeError("BinaryMask requires rank 2 or 3, got rank " +
                         std::to_string(dims.size()));
    std::int64_t n = 1;
    for (int d : dims) {
        if (d <= 0) throw ShapeError("BinaryMask extents must be positive");
        n *= d;
    }
    if (spacing.empty()) spacing.assign(dims.size(), 1.0);
    if (spacing.size() != dims.size())
        throw ShapeError("spacing must have one entry per axis, got " +
                         std::to_string(spacing.size()) + " for rank " +
                         std::to_string(dims.size()));
    for (double s : spacing)
        if (!(s > 0.0)) throw DataError("spacing entries must be positive");
    BinaryMask mask;
    mask.dims = std::move(dims);
    mask.spacing = std::move(spacing);
    mask.grid.assign(static_cast<std::size_t>(n), 0);
    return mask;
}

std::int64_t BinaryMask::numel() const {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

std::int64_t BinaryMask::foreground_count() const {
    std::int64_t n = 0;
    for (std::uint8_t v : grid) n += v ? 1 : 0;
    return n;
}

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_shape(pred, gt);
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.grid.size(); ++i) {
        const bool p = pred.grid[i] != 0;
        const bool g = gt.grid[i] != 0;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    const ConfusionCounts c = confusion_counts(pred, gt);
    const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double sensitivity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fn;
    if (denom == 0) return nan_value();
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double specificity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tn + c.fp;
    if (denom == 0) return nan_value();
    return static_cast<double>(c.tn) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fp;
    if (denom == 0) return nan_value();
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::vector<std::array<int, 3>> surface_voxels(const BinaryMask& mask) {
    const bool volumetric = mask.rank() == 3;
    const int depth = volumetric ? mask.dims[0] : 1;
    const int height = mask.dims[volumetric ? 1 : 0];
    const int width = mask.dims[volumetric ? 2 : 1];
    const auto at = [&](int z, int y, int x) -> bool {
        return mask.grid[(static_cast<std::int64_t>(z) * height + y) * width + x] != 0;
    };
    // Treat out-of-grid as background: voxels on the array border are surface.
    const auto exposed = [&](int z, int y, int x) -> bool {
        if (y == 0 || y + 1 == height || !at(z, y - 1, x) || !at(z, y + 1, x)) return true;
        if (x == 0 || x + 1 == width || !at(z, y, x - 1) || !at(z, y, x + 1)) return true;
        if (volumetric &&
            (z == 0 || z + 1 == depth || !at(z - 1, y, x) || !at(z + 1, y, x)))
            return true;
        return false;
    };
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < depth; ++z)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (at(z, y, x) && exposed(z, y, x)) out.push_back({z, y, x});
    return out;
}

std::vector<double> directed_distances(const BinaryMask& a, const BinaryMask& b,
                                       DistanceBasis basis) {
    check_same_shape(a, b);
    const auto from = distance_points(a, basis);
    const auto to = distance_points(b, basis);
    if (from.empty() || to.empty()) return {};
    return directed_point_distances(from, to);
}

bool hausdorff95(const BinaryMask& pred, const BinaryMask& gt, double& out,
                 DistanceBasis basis) {
    check_same_shape(pred, gt);
    if (pred.foreground_count() == 0 || gt.foreground_count() == 0) return false;
    const auto forward = directed_distances(pred, gt, basis);
    const auto backward = directed_distances(gt, pred, basis);
    out = std::max(nearest_rank_percentile(forward, 0.95),
                   nearest_rank_percentile(backward, 0.95));
    return true;
}

bool average_surface_distance(const BinaryMask& pred, const BinaryMask& gt, double& out,
                              DistanceBasis basis) {
    check_same_shape(pred, gt);
    if (pred.foreground_count() == 0 || gt.foreground_count() == 0) return false;
    const auto forward = directed_distances(pred, gt, basis);
    const auto backward = directed_distances(gt, pred, basis);
    double sum = 0.0;
    for (double d : forward) sum += d;
    for (double d : backward) sum += d;
    out = sum / static_cast<double>(forward.size() + backward.size());
    return true;
}

BinaryMask compose_region(std::span<const int> label_map, const std::vector<int>& dims,
                          const RegionSpec& spec, std::vector<double> spacing) {
    if (spec.labels.empty()) throw DataError("region '" + spec.name + "' has no labels");
    BinaryMask mask = BinaryMask::make(dims, std::move(spacing));
    if (static_cast<std::int64_t>(label_map.size()) != mask.numel())
        throw ShapeError("label map has " + std::to_string(label_map.size()) +
                         " voxels but dims imply " + std::to_string(mask.numel()));
    for (std::size_t i = 0; i < label_map.size(); ++i)
        mask.grid[i] = spec.labels.count(label_map[i]) ? 1 : 0;
    return mask;
}

std::string metric_flags_to_string(unsigned flags) {
    std::string out;
    if (flags & kDiceBothEmpty) append_flag(out, "dice_both_empty");
    if (flags & kSensitivityUndefined) append_flag(out, "sensitivity_undefined");
    if (flags & kSpecificityUndefined) append_flag(out, "specificity_undefined");
    if (flags & kPrecisionUndefined) append_flag(out, "precision_undefined");
    if (flags & kRecallUndefined) append_flag(out, "recall_undefined");
    if (flags & kHd95Undefined) append_flag(out, "hd95_undefined");
    if (flags & kAsdUndefined) append_flag(out, "asd_undefined");
    return out;
}

MetricsReport evaluate(std::span<const int> pred_labels, std::span<const int> gt_labels,
                       const std::vector<int>& dims, const std::vector<RegionSpec>& specs,
                       const EvaluateOptions& options) {
    if (pred_labels.size() != gt_labels.size())
        throw ShapeError("prediction has " + std::to_string(pred_labels.size()) +
                         " voxels but ground truth has " + std::to_string(gt_labels.size()));
    MetricsReport report;
    report.regions.reserve(specs.size());
    for (const RegionSpec& spec : specs) {
        const BinaryMask pred = compose_region(pred_labels, dims, spec, options.spacing);
        const BinaryMask gt = compose_region(gt_labels, dims, spec, options.spacing);
        const ConfusionCounts c = confusion_counts(pred, gt);

        RegionMetrics m;
        m.region = spec.name;
        m.dice = dice(pred, gt);
        if (2 * c.tp + c.fp + c.fn == 0) m.flags |= kDiceBothEmpty;
        m.sensitivity = sensitivity(c);
        if (std::isnan(m.sensitivity)) m.flags |= kSensitivityUndefined;
        m.specificity = specificity(c);
        if (std::isnan(m.specificity)) m.flags |= kSpecificityUndefined;
        m.precision = precision(c);
        if (std::isnan(m.precision)) m.flags |= kPrecisionUndefined;
        m.recall = m.sensitivity;
        if (std::isnan(m.recall)) m.flags |= kRecallUndefined;
        if (!hausdorff95(pred, gt, m.hd95, options.basis)) {
            m.hd95 = nan_value();
            m.flags |= kHd95Undefined;
        }
        if (!average_surface_distance(pred, gt, m.asd, options.basis)) {
            m.asd = nan_value();
            m.flags |= kAsdUndefined;
        }
        report.regions.push_back(std::move(m));
    }
    return report;
}

void write_metrics_csv_header(std::ostream& os) {
    os << "case,region,dice,sensitivity,specificity,precision,recall,hd95,asd,flags\n";
}

void write_metrics_csv_rows(std::ostream& os, const MetricsReport& report) {
    for (const RegionMetrics& m : report.regions) {
        os << report.case_id << ',' << m.region << ',' << format_metric(m.dice) << ','
           << format_metric(m.sensitivity) << ',' << format_metric(m.specificity) << ','
           << format_metric(m.precision) << ',' << format_metric(m.recall) << ','
           << format_metric(m.hd95) << ',' << format_metric(m.asd) << ','
           << metric_flags_to_string(m.flags) << '\n';
    }
}

} // namespace pxseg
