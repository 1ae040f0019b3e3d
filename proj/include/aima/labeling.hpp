#pragma once

#include <cmath>
#include <vector>

#include "aima/geometry.hpp"

namespace aima {

/// Normalized patch-wise target distribution for one ground-truth box.
/// values[i] > 0 exactly for the patches overlapping the box, with overlap
/// weighted by IoU and distance to the box center by an axis-aligned Gaussian.
struct GroundingLabel {
    std::vector<double> values;  // length grid.size(), sums to 1
    PatchGrid grid;
    double alpha = 0.8;

    int size() const { return int(values.size()); }
};

namespace detail {
constexpr double kSigmaFloorPx = 0.5;
// keeps far-but-overlapping patches strictly positive when the Gaussian
// underflows to 0 in double arithmetic
constexpr double kGaussFloor = 1e-290;

/// Point boxes are widened to 1x1 px before the Gaussian is evaluated.
inline BBox label_bbox(const PatchGrid& grid, const BBox& bbox) {
    BBox b = bbox.canonical(grid.image_w, grid.image_h);
    require(b.x2 > b.x1 || b.x1 < grid.image_w, ErrorClass::domain, "bbox outside image");
    if (b.width() < 1.0) {
        double cx = std::clamp(b.center().x, 0.5, grid.image_w - 0.5);
        b.x1 = cx - 0.5;
        b.x2 = cx + 0.5;
    }
    if (b.height() < 1.0) {
        double cy = std::clamp(b.center().y, 0.5, grid.image_h - 0.5);
        b.y1 = cy - 0.5;
        b.y2 = cy + 0.5;
    }
    return b;
}
}  // namespace detail

/// Unnormalized center-distance weight: exp(-1/2 [(dx/sx)^2 + (dy/sy)^2]) with
/// sx = alpha*width, sy = alpha*height (floored at 0.5 px). The Gaussian's
/// normalization constant is dropped; the label is renormalized anyway.
inline double gaussian_weight(Point patch_center, const BBox& bbox, double alpha) {
    Point mu = bbox.center();
    double sx = std::max(alpha * bbox.width(), detail::kSigmaFloorPx);
    double sy = std::max(alpha * bbox.height(), detail::kSigmaFloorPx);
    double dx = (patch_center.x - mu.x) / sx;
    double dy = (patch_center.y - mu.y) / sy;
    return std::exp(-0.5 * (dx * dx + dy * dy));
}

/// IoU * Gaussian per patch, renormalized to sum 1.
inline GroundingLabel patch_labels(const PatchGrid& grid, const BBox& bbox, double alpha = 0.8) {
    BBox b = detail::label_bbox(grid, bbox);
    require(b.area() > 0.0, ErrorClass::domain, "bbox does not intersect the image");

    GroundingLabel label;
    label.grid = grid;
    label.alpha = alpha;
    label.values.assign(std::size_t(grid.size()), 0.0);

    double total = 0.0;
    for (int i = 0; i < grid.size(); ++i) {
        double ov = iou(grid, i, b);
        if (ov <= 0.0) continue;
        double g = std::max(gaussian_weight(patch_center(grid, i), b, alpha), detail::kGaussFloor);
        label.values[std::size_t(i)] = ov * g;
        total += ov * g;
    }
    require(total > 0.0, ErrorClass::domain, "bbox does not overlap any patch");
    for (double& v : label.values) v /= total;
    return label;
}

/// Uniform weight over every overlapping patch; the ablation baseline for the
/// weighted labels above.
inline GroundingLabel flat_patch_labels(const PatchGrid& grid, const BBox& bbox) {
    BBox b = detail::label_bbox(grid, bbox);
    require(b.area() > 0.0, ErrorClass::domain, "bbox does not intersect the image");

    GroundingLabel label;
    label.grid = grid;
    label.alpha = 0.0;
    label.values.assign(std::size_t(grid.size()), 0.0);
    int positive = 0;
    for (int i = 0; i < grid.size(); ++i) {
        if (iou(grid, i, b) > 0.0) {
            label.values[std::size_t(i)] = 1.0;
            ++positive;
        }
    }
    require(positive > 0, ErrorClass::domain, "bbox does not overlap any patch");
    for (double& v : label.values) v /= positive;
    return label;
}

}  // namespace aima
