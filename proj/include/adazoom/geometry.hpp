#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace adazoom {

/// Axis-aligned rectangle in image pixels, (x, y) top-left corner.
struct Box {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    double short_edge() const { return std::min(w, h); }

    bool contains_point(double px, double py) const {
        return px >= x && px <= x2() && py >= y && py <= y2();
    }

    /// Intersection with the image rectangle [0,W]x[0,H]; result may be empty.
    Box clipped_to(double img_w, double img_h) const {
        const double nx1 = std::clamp(x, 0.0, img_w);
        const double ny1 = std::clamp(y, 0.0, img_h);
        const double nx2 = std::clamp(x2(), 0.0, img_w);
        const double ny2 = std::clamp(y2(), 0.0, img_h);
        return {nx1, ny1, std::max(0.0, nx2 - nx1), std::max(0.0, ny2 - ny1)};
    }

    bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Fraction of `box` area that lies inside `region`.
inline double containment_fraction(const Box& box, const Box& region) {
    const double a = box.area();
    return a > 0.0 ? intersection_area(box, region) / a : 0.0;
}

/// Grid resolution of the state / probability maps (h rows, w cols).
struct GridDims {
    int h = 32;
    int w = 32;

    int cells() const { return h * w; }
    bool operator==(const GridDims&) const = default;
};

/// Inclusive cell range on the state grid; the image-space footprint of a
/// focus region after mapping.
struct GridRect {
    int i0 = 0;
    int j0 = 0;
    int i1 = 0;
    int j1 = 0;

    bool contains(int i, int j) const { return i >= i0 && i <= i1 && j >= j0 && j <= j1; }
    int cell_count() const { return (i1 - i0 + 1) * (j1 - j0 + 1); }
    bool operator==(const GridRect&) const = default;
};

inline double unbounded() { return std::numeric_limits<double>::infinity(); }

/// Desired object side-length range attached to one region-scale candidate.
struct ScaleRange {
    double lo = 0;
    double hi = unbounded();

    bool contains(double s) const { return s >= lo && s <= hi; }
    bool operator==(const ScaleRange&) const = default;
};

/// Candidate region scales / aspect ratios and their desired object ranges.
struct ZoomSpec {
    std::vector<double> areas = {240.0 * 240.0, 350.0 * 350.0, 420.0 * 420.0};
    std::vector<double> ratios = {0.7, 1.0, 1.5};  // width / height
    std::vector<ScaleRange> ranges = {{0.0, 40.0}, {30.0, 60.0}, {50.0, unbounded()}};
    double target_short_edge = 800.0;

    int num_scales() const { return static_cast<int>(areas.size()); }
    int num_ratios() const { return static_cast<int>(ratios.size()); }
    bool operator==(const ZoomSpec&) const = default;

    void validate() const {
        if (areas.empty() || ratios.empty())
            throw std::invalid_argument("ZoomSpec: scale and ratio candidates must be nonempty");
        if (ranges.size() != areas.size())
            throw std::invalid_argument("ZoomSpec: one desired scale range per area candidate");
        for (double a : areas)
            if (!(a > 0)) throw std::invalid_argument("ZoomSpec: nonpositive area candidate");
        for (double r : ratios)
            if (!(r > 0)) throw std::invalid_argument("ZoomSpec: nonpositive ratio candidate");
        for (const ScaleRange& r : ranges)
            if (r.lo < 0 || !(r.hi >= r.lo))
                throw std::invalid_argument("ZoomSpec: scale range bounds out of order");
        if (!(target_short_edge > 0))
            throw std::invalid_argument("ZoomSpec: target short edge must be positive");
    }
};

/// A realized focus region. scale_index / ratio_index record which candidates
/// produced it; -1 for regions that did not come from an action (tiles).
struct Region {
    Box box;
    int scale_index = -1;
    int ratio_index = -1;
};

/// Image-space center of grid cell (i, j).
inline double cell_center_x(int j, GridDims grid, double img_w) {
    return (j + 0.5) * img_w / grid.w;
}
inline double cell_center_y(int i, GridDims grid, double img_h) {
    return (i + 0.5) * img_h / grid.h;
}

/// Builds the region selected by an action. The region is centered on the
/// fixation cell's image point with width sqrt(area*r) and height
/// sqrt(area/r), then translated (not shrunk) to lie inside the image; a
/// dimension larger than the image is clipped to the image.
inline Region realize_region(int cell_i, int cell_j, int scale_index, int ratio_index,
                             GridDims grid, double img_w, double img_h, const ZoomSpec& zoom) {
    const double area = zoom.areas.at(static_cast<std::size_t>(scale_index));
    const double ratio = zoom.ratios.at(static_cast<std::size_t>(ratio_index));
    double w = std::sqrt(area * ratio);
    double h = std::sqrt(area / ratio);

    double x = cell_center_x(cell_j, grid, img_w) - 0.5 * w;
    double y = cell_center_y(cell_i, grid, img_h) - 0.5 * h;
    if (w > img_w) {
        w = img_w;
        x = 0.0;
    } else {
        x = std::clamp(x, 0.0, img_w - w);
    }
    if (h > img_h) {
        h = img_h;
        y = 0.0;
    } else {
        y = std::clamp(y, 0.0, img_h - h);
    }
    return {{x, y, w, h}, scale_index, ratio_index};
}

/// Maps a region to the grid cells whose centers fall inside it. Always
/// nonempty: the cell containing the region center is included even when no
/// cell center does.
inline GridRect map_region_to_grid(const Box& region, GridDims grid, double img_w, double img_h) {
    const double cell_w = img_w / grid.w;
    const double cell_h = img_h / grid.h;

    // Cell center (k + 0.5) * cell inside [lo, hi].
    auto first_center = [](double lo, double cell) {
        return static_cast<int>(std::ceil(lo / cell - 0.5));
    };
    auto last_center = [](double hi, double cell) {
        return static_cast<int>(std::floor(hi / cell - 0.5));
    };

    GridRect z;
    z.i0 = std::max(0, first_center(region.y, cell_h));
    z.i1 = std::min(grid.h - 1, last_center(region.y2(), cell_h));
    z.j0 = std::max(0, first_center(region.x, cell_w));
    z.j1 = std::min(grid.w - 1, last_center(region.x2(), cell_w));

    if (z.i0 > z.i1 || z.j0 > z.j1) {
        const int ci = std::clamp(static_cast<int>(region.cy() / cell_h), 0, grid.h - 1);
        const int cj = std::clamp(static_cast<int>(region.cx() / cell_w), 0, grid.w - 1);
        z = {ci, cj, ci, cj};
    }
    return z;
}

/// m x n tiling with a fixed pixel overlap between adjacent tiles. Tile width
/// solves n*w - (n-1)*ov = W; the last row/column is placed flush with the
/// image edge to absorb rounding.
inline std::vector<Region> uniform_partition(double img_w, double img_h, int rows, int cols,
                                             double overlap) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("uniform_partition: rows, cols >= 1");
    if (overlap < 0) throw std::invalid_argument("uniform_partition: negative overlap");
    const double tile_w = (img_w + (cols - 1) * overlap) / cols;
    const double tile_h = (img_h + (rows - 1) * overlap) / rows;
    if (!(tile_w > 0) || !(tile_h > 0))
        throw std::invalid_argument("uniform_partition: empty tiles");
    if ((cols > 1 && tile_w < overlap) || (rows > 1 && tile_h < overlap))
        throw std::invalid_argument("uniform_partition: tile smaller than overlap");

    std::vector<Region> tiles;
    tiles.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        const double y = (r == rows - 1) ? img_h - tile_h : r * (tile_h - overlap);
        for (int c = 0; c < cols; ++c) {
            const double x = (c == cols - 1) ? img_w - tile_w : c * (tile_w - overlap);
            tiles.push_back({{x, y, tile_w, tile_h}, -1, -1});
        }
    }
    return tiles;
}

/// A simulated (or parsed) detection in image coordinates.
struct Detection {
    Box box;
    double confidence = 0;
    int category = 0;
    int id = 0;
    std::optional<int> matched_gt;
};

/// Greedy category-wise non-maximum suppression. Candidates are visited in
/// descending confidence (ties: lower id first); survivors suppress any
/// same-category box with IoU > threshold. Output sorted the same way.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.id < b.id;
    });
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.category == d.category && iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

}  // namespace adazoom
