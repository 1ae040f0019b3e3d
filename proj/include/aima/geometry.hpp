#pragma once

#include <algorithm>
#include <cmath>

#include "aima/common.hpp"

namespace aima {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Axis-aligned box in pixels, half-open on x2/y2: a point (x,y) is inside iff
/// x1 <= x < x2 and y1 <= y < y2.
struct BBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    Point center() const { return {(x1 + x2) / 2.0, (y1 + y2) / 2.0}; }

    bool contains(Point p) const { return p.x >= x1 && p.x < x2 && p.y >= y1 && p.y < y2; }

    /// Orders the corners and clips to [0,w) x [0,h).
    BBox canonical(double image_w, double image_h) const {
        BBox b{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
        b.x1 = std::clamp(b.x1, 0.0, image_w);
        b.x2 = std::clamp(b.x2, 0.0, image_w);
        b.y1 = std::clamp(b.y1, 0.0, image_h);
        b.y2 = std::clamp(b.y2, 0.0, image_h);
        return b;
    }
};

inline double rect_intersection_area(const BBox& a, const BBox& b) {
    double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

inline double rect_iou(const BBox& a, const BBox& b) {
    double inter = rect_intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

/// Row-major grid of square patches over an image. Border patches are clipped
/// rectangles when the image size is not a multiple of patch_px.
struct PatchGrid {
    int image_w = 0;
    int image_h = 0;
    int patch_px = 0;
    int cols = 0;
    int rows = 0;

    static PatchGrid make(int image_w, int image_h, int patch_px) {
        require(image_w > 0 && image_h > 0 && patch_px > 0, ErrorClass::domain,
                "patch grid dimensions must be positive");
        PatchGrid g;
        g.image_w = image_w;
        g.image_h = image_h;
        g.patch_px = patch_px;
        g.cols = (image_w + patch_px - 1) / patch_px;
        g.rows = (image_h + patch_px - 1) / patch_px;
        return g;
    }

    int size() const { return cols * rows; }
    int index(int row, int col) const { return row * cols + col; }
    int row_of(int index) const { return index / cols; }
    int col_of(int index) const { return index % cols; }

    bool in_image(Point p) const {
        return p.x >= 0.0 && p.x < double(image_w) && p.y >= 0.0 && p.y < double(image_h);
    }

    /// Clipped pixel rectangle of a patch.
    BBox patch_rect(int index) const {
        require(index >= 0 && index < size(), ErrorClass::domain, "patch index out of range");
        int c = col_of(index), r = row_of(index);
        BBox b;
        b.x1 = double(c) * patch_px;
        b.y1 = double(r) * patch_px;
        b.x2 = std::min(double(c + 1) * patch_px, double(image_w));
        b.y2 = std::min(double(r + 1) * patch_px, double(image_h));
        return b;
    }
};

inline int patch_index_of(const PatchGrid& grid, Point p) {
    require(grid.in_image(p), ErrorClass::domain, "point outside image bounds");
    int c = int(std::floor(p.x / grid.patch_px));
    int r = int(std::floor(p.y / grid.patch_px));
    return grid.index(r, c);
}

inline Point patch_center(const PatchGrid& grid, int index) {
    return grid.patch_rect(index).center();
}

inline double iou(const PatchGrid& grid, int index, const BBox& bbox) {
    return rect_iou(grid.patch_rect(index), bbox);
}

/// Grows a box by k patches on every side, clamped to the image.
inline BBox expand_bbox(const PatchGrid& grid, const BBox& bbox, int k) {
    require(k >= 0, ErrorClass::domain, "expansion count must be non-negative");
    double m = double(k) * grid.patch_px;
    BBox b{bbox.x1 - m, bbox.y1 - m, bbox.x2 + m, bbox.y2 + m};
    return b.canonical(grid.image_w, grid.image_h);
}

/// Square region of the global frame selected for a second, zoomed-in pass.
struct CropRegion {
    int origin_x = 0;
    int origin_y = 0;
    int size_px = 0;
    double zoom = 1.0;
};

/// Square crop of side crop_px centered on `center`. Near borders the region is
/// translated (not shrunk) to stay inside the image; a crop larger than the
/// image degenerates to the largest inscribed square.
inline CropRegion plan_crop(const PatchGrid& grid, Point center, int crop_px, double zoom) {
    require(crop_px > 0, ErrorClass::domain, "crop size must be positive");
    require(zoom >= 1.0, ErrorClass::domain, "zoom must be >= 1");
    require(grid.in_image(center), ErrorClass::domain, "crop center outside image");
    CropRegion r;
    r.size_px = std::min(crop_px, std::min(grid.image_w, grid.image_h));
    int half = r.size_px / 2;
    r.origin_x = std::clamp(int(std::lround(center.x)) - half, 0, grid.image_w - r.size_px);
    r.origin_y = std::clamp(int(std::lround(center.y)) - half, 0, grid.image_h - r.size_px);
    r.zoom = zoom;
    return r;
}

/// Maps a point in the zoomed crop frame (a size_px*zoom square) back to the
/// global frame.
inline Point map_to_global(Point local, const CropRegion& region) {
    double frame = double(region.size_px) * region.zoom;
    require(local.x >= 0.0 && local.x < frame && local.y >= 0.0 && local.y < frame,
            ErrorClass::domain, "local point outside zoomed crop frame");
    return {region.origin_x + local.x / region.zoom, region.origin_y + local.y / region.zoom};
}

}  // namespace aima
