#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pxseg {

// Binary foreground grid, 2D [H,W] or 3D [D,H,W], with per-axis spacing.
struct BinaryMask {
    std::vector<int> dims;
    std::vector<std::uint8_t> grid;
    std::vector<double> spacing; // one entry per axis, defaults to 1.0

    static BinaryMask make(std::vector<int> dims, std::vector<double> spacing = {});
    int rank() const { return static_cast<int>(dims.size()); }
    std::int64_t numel() const;
    std::int64_t foreground_count() const;
};

// A named union of label values, evaluated as one binary region. Regions may
// overlap (composite tumor regions nest by design).
struct RegionSpec {
    std::string name;
    std::set<int> labels;
};

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

// 2TP/(2TP+FP+FN); both-empty is defined as 1.0 (callers flag it).
double dice(const BinaryMask& pred, const BinaryMask& gt);
double sensitivity(const ConfusionCounts& c); // TP/(TP+FN), NaN if undefined
double specificity(const ConfusionCounts& c); // TN/(TN+FP)
double precision(const ConfusionCounts& c);   // TP/(TP+FP)

// Foreground voxels with a face-adjacent background-or-border neighbour
// (4-connectivity in 2D, 6 in 3D). Coordinates are (z,y,x); z is 0 in 2D.
std::vector<std::array<int, 3>> surface_voxels(const BinaryMask& mask);

enum class DistanceBasis { surface, all_voxels };

// Directed min distances a->b (spacing-scaled Euclidean), one per source
// voxel, in source scan order.
std::vector<double> directed_distances(const BinaryMask& a, const BinaryMask& b,
                                       DistanceBasis basis = DistanceBasis::surface);

// max over both directions of the nearest-rank 95th percentile of the
// directed distances. Returns false when either mask is empty.
bool hausdorff95(const BinaryMask& pred, const BinaryMask& gt, double& out,
                 DistanceBasis basis = DistanceBasis::surface);

// Mean of the pooled directed distances from both directions.
bool average_surface_distance(const BinaryMask& pred, const BinaryMask& gt, double& out,
                              DistanceBasis basis = DistanceBasis::surface);

BinaryMask compose_region(std::span<const int> label_map, const std::vector<int>& dims,
                          const RegionSpec& spec, std::vector<double> spacing = {});

// Flags marking metric cells whose denominator was empty.
enum MetricFlag : unsigned {
    kDiceBothEmpty = 1u << 0,
    kSensitivityUndefined = 1u << 1,
    kSpecificityUndefined = 1u << 2,
    kPrecisionUndefined = 1u << 3,
    kRecallUndefined = 1u << 4,
    kHd95Undefined = 1u << 5,
    kAsdUndefined = 1u << 6,
};

std::string metric_flags_to_string(unsigned flags);

struct RegionMetrics {
    std::string region;
    double dice = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
    unsigned flags = 0;
};

struct MetricsReport {
    std::string case_id;
    std::vector<RegionMetrics> regions;
};

struct EvaluateOptions {
    std::vector<double> spacing; // empty => 1.0 per axis
    DistanceBasis basis = DistanceBasis::surface;
};

MetricsReport evaluate(std::span<const int> pred_labels, std::span<const int> gt_labels,
                       const std::vector<int>& dims, const std::vector<RegionSpec>& specs,
                       const EvaluateOptions& options = {});

// CSV: case,region,dice,sensitivity,specificity,precision,recall,hd95,asd,flags
void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv_rows(std::ostream& os, const MetricsReport& report);

} // namespace pxseg
