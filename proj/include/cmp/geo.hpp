#pragma once

#include <cstdint>
#include <span>

#include "cmp/grid_codec.hpp"
#include "cmp/tensor.hpp"

namespace cmp {

// Rigid 2D transform from ego to global coordinates.
struct Pose2 {
    double m[2][2] = {{1.0, 0.0}, {0.0, 1.0}};
    double t[2] = {0.0, 0.0};

    static Pose2 identity() { return {}; }
    static Pose2 from_angle(double radians, Vec2 translation);

    Pose2 inverse() const;
    Vec2 apply(Vec2 p) const {
        return {m[0][0] * p.x + m[0][1] * p.y + t[0], m[1][0] * p.x + m[1][1] * p.y + t[1]};
    }

    // MᵀM = I and det(M) = +1, both within 1e-9.
    void validate() const;
};

// Ego-centric query grid: h x w cells covering `extent` meters per axis,
// centered on the ego origin. Axis order is (forward, left).
struct GridSpec {
    std::size_t h = 128;
    std::size_t w = 128;
    double extent = 102.4;  // meters

    void validate() const;
};

// Cell-center coordinates: cell (i,j) sits at
// (((i+0.5)/h - 0.5) * extent, ((j+0.5)/w - 0.5) * extent).
Tensor make_ego_grid(const GridSpec& spec);

// Per-point M*x + t. Validates the pose.
Tensor apply_pose(const Tensor& grid /*[h,w,2]*/, const Pose2& pose);

// BEV augmentation of query coordinates, applied before apply_pose so prior
// features transform consistently with the augmented scene. Order: flips,
// rotation, scale.
struct BevAugment {
    bool flip_x = false;
    bool flip_y = false;
    double rotate_angle = 0.0;  // radians
    double scale = 1.0;
};

Tensor bev_augment(const Tensor& grid, const BevAugment& aug);

// Replaces non-overlapping square patches (patch x patch cells, truncated at
// the borders) covering ~ratio of the map with the mask token. Deterministic
// given the seed; unmasked cells are untouched.
Tensor random_patch_mask(const Tensor& features /*[h,w,c]*/, double ratio,
                         std::span<const double> mask_token, std::uint64_t seed,
                         std::size_t patch = 8);

// Patch selection only, for callers that need the mask itself (h*w bools,
// row-major). Same sampling as random_patch_mask.
std::vector<std::uint8_t> patch_mask_cells(std::size_t h, std::size_t w, double ratio,
                                           std::uint64_t seed, std::size_t patch = 8);

}  // namespace cmp
