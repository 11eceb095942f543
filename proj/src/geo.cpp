#include "cmp/geo.hpp"

#include <cmath>

namespace cmp {

Pose2 Pose2::from_angle(double radians, Vec2 translation) {
    Pose2 p;
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    p.m[0][0] = c;
    p.m[0][1] = -s;
    p.m[1][0] = s;
    p.m[1][1] = c;
    p.t[0] = translation.x;
    p.t[1] = translation.y;
    return p;
}

Pose2 Pose2::inverse() const {
    Pose2 inv;
    // Orthonormal, so the inverse rotation is the transpose.
    inv.m[0][0] = m[0][0];
    inv.m[0][1] = m[1][0];
    inv.m[1][0] = m[0][1];
    inv.m[1][1] = m[1][1];
    inv.t[0] = -(inv.m[0][0] * t[0] + inv.m[0][1] * t[1]);
    inv.t[1] = -(inv.m[1][0] * t[0] + inv.m[1][1] * t[1]);
    return inv;
}

void Pose2::validate() const {
    const double tol = 1e-9;
    const double g00 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    const double g11 = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    const double g01 = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if (std::abs(g00 - 1.0) > tol || std::abs(g11 - 1.0) > tol || std::abs(g01) > tol)
        throw ConfigError("pose: rotation is not orthonormal");
    if (std::abs(det - 1.0) > tol) throw ConfigError("pose: rotation must have det +1");
}

void GridSpec::validate() const {
    if (h < 1 || w < 1) throw ConfigError("grid spec: h and w must be >= 1");
    if (!(extent > 0.0)) throw ConfigError("grid spec: extent must be > 0");
}

Tensor make_ego_grid(const GridSpec& spec) {
    spec.validate();
    Tensor g({spec.h, spec.w, 2});
    for (std::size_t i = 0; i < spec.h; ++i) {
        const double fwd = ((static_cast<double>(i) + 0.5) / static_cast<double>(spec.h) - 0.5) *
                           spec.extent;
        for (std::size_t j = 0; j < spec.w; ++j) {
            const double left =
                ((static_cast<double>(j) + 0.5) / static_cast<double>(spec.w) - 0.5) * spec.extent;
            g.at(i, j, 0) = fwd;
            g.at(i, j, 1) = left;
        }
    }
    return g;
}

Tensor apply_pose(const Tensor& grid, const Pose2& pose) {
    require_shape(grid.shape.size() == 3 && grid.shape[2] == 2, "apply_pose grid must be [h,w,2]");
    pose.validate();
    Tensor out(grid.shape);
    const std::size_t n = grid.numel() / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 p{grid.data[2 * i], grid.data[2 * i + 1]};
        const Vec2 q = pose.apply(p);
        out.data[2 * i] = q.x;
        out.data[2 * i + 1] = q.y;
    }
    return out;
}

Tensor bev_augment(const Tensor& grid, const BevAugment& aug) {
    require_shape(grid.shape.size() == 3 && grid.shape[2] == 2, "bev_augment grid must be [h,w,2]");
    if (!(aug.scale > 0.0)) throw ConfigError("bev_augment: scale must be > 0");
    const double c = std::cos(aug.rotate_angle);
    const double s = std::sin(aug.rotate_angle);
    Tensor out(grid.shape);
    const std::size_t n = grid.numel() / 2;
    for (std::size_t i = 0; i < n; ++i) {
        double x = grid.data[2 * i];
        double y = grid.data[2 * i + 1];
        if (aug.flip_x) x = -x;
        if (aug.flip_y) y = -y;
        const double rx = c * x - s * y;
        const double ry = s * x + c * y;
        out.data[2 * i] = aug.scale * rx;
        out.data[2 * i + 1] = aug.scale * ry;
    }
    return out;
}

std::vector<std::uint8_t> patch_mask_cells(std::size_t h, std::size_t w, double ratio,
                                           std::uint64_t seed, std::size_t patch) {
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("patch mask: ratio must be in [0,1]");
    if (patch < 1) throw ConfigError("patch mask: patch size must be >= 1");

    const std::size_t ph = (h + patch - 1) / patch;
    const std::size_t pw = (w + patch - 1) / patch;
    const std::size_t n_tiles = ph * pw;
    const std::size_t n_masked =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_tiles)));

    std::vector<std::uint32_t> order(n_tiles);
    for (std::size_t i = 0; i < n_tiles; ++i) order[i] = static_cast<std::uint32_t>(i);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::uint8_t> mask(h * w, 0);
    for (std::size_t idx = 0; idx < n_masked; ++idx) {
        const std::size_t tile = order[idx];
        const std::size_t ti = (tile / pw) * patch;
        const std::size_t tj = (tile % pw) * patch;
        for (std::size_t i = ti; i < std::min(ti + patch, h); ++i)
            for (std::size_t j = tj; j < std::min(tj + patch, w); ++j) mask[i * w + j] = 1;
    }
    return mask;
}

Tensor random_patch_mask(const Tensor& features, double ratio, std::span<const double> mask_token,
                         std::uint64_t seed, std::size_t patch) {
    require_shape(features.shape.size() == 3, "random_patch_mask features must be [h,w,c]");
    const std::size_t h = features.shape[0], w = features.shape[1], c = features.shape[2];
    if (mask_token.size() != c)
        throw ShapeError("random_patch_mask: mask token width must equal feature channels");

    const auto mask = patch_mask_cells(h, w, ratio, seed, patch);
    Tensor out = features;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!mask[i]) continue;
        double* dst = out.data.data() + i * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] = mask_token[k];
    }
    return out;
}

}  // namespace cmp
