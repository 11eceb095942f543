#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmp/grid_codec.hpp"

namespace cmp {

// Discretized semantic map: one class index per cell. Cell (ix, iy) covers
// world x in [ix, ix+1) * meters_per_cell and likewise for y; the map's world
// rectangle starts at the origin.
//
// "CMPR" file layout, little-endian:
//   magic "CMPR" | u32 width | u32 height | u16 classes | f64 meters_per_cell
//   row-major u8 class indices (height rows of width)
struct RasterMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint16_t classes = 0;
    double meters_per_cell = 1.0;
    std::vector<std::uint8_t> data;

    static RasterMap create(std::uint32_t width, std::uint32_t height, std::uint16_t classes,
                            double meters_per_cell);

    std::uint8_t& at(std::uint32_t ix, std::uint32_t iy) { return data[std::size_t(iy) * width + ix]; }
    std::uint8_t at(std::uint32_t ix, std::uint32_t iy) const {
        return data[std::size_t(iy) * width + ix];
    }

    std::size_t cell_count() const { return data.size(); }
    Vec2 cell_center(std::uint32_t ix, std::uint32_t iy) const {
        return {(ix + 0.5) * meters_per_cell, (iy + 0.5) * meters_per_cell};
    }
    Rect world_rect() const {
        return {0.0, 0.0, width * meters_per_cell, height * meters_per_cell};
    }

    void validate() const;
};

void save_raster(const RasterMap& map, std::ostream& sink);
RasterMap load_raster(std::istream& source);
void save_raster_file(const RasterMap& map, const std::string& path);
RasterMap load_raster_file(const std::string& path);

}  // namespace cmp
