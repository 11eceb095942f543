#include "cmp/raster.hpp"

#include <cstring>
#include <fstream>

#include "cmp/serial.hpp"

namespace cmp {

namespace {
constexpr char kMagic[4] = {'C', 'M', 'P', 'R'};
}

RasterMap RasterMap::create(std::uint32_t width, std::uint32_t height, std::uint16_t classes,
                            double meters_per_cell) {
    if (width == 0 || height == 0) throw ConfigError("raster: extents must be >= 1");
    if (classes == 0) throw ConfigError("raster: needs at least one class");
    if (!(meters_per_cell > 0.0)) throw ConfigError("raster: meters_per_cell must be > 0");
    RasterMap m;
    m.width = width;
    m.height = height;
    m.classes = classes;
    m.meters_per_cell = meters_per_cell;
    m.data.assign(std::size_t(width) * height, 0);
    return m;
}

void RasterMap::validate() const {
    if (width == 0 || height == 0 || classes == 0)
        throw ConfigError("raster: invalid extents or class count");
    if (!(meters_per_cell > 0.0)) throw ConfigError("raster: meters_per_cell must be > 0");
    if (data.size() != std::size_t(width) * height)
        throw ConfigError("raster: data length mismatch");
    for (std::uint8_t v : data)
        if (v >= classes) throw ConfigError("raster: class index out of range");
}

void save_raster(const RasterMap& map, std::ostream& sink) {
    map.validate();
    sink.write(kMagic, 4);
    write_u32(sink, map.width);
    write_u32(sink, map.height);
    write_u16(sink, map.classes);
    write_f64(sink, map.meters_per_cell);
    sink.write(reinterpret_cast<const char*>(map.data.data()),
               static_cast<std::streamsize>(map.data.size()));
    if (!sink) throw FormatError("save_raster: sink write failed");
}

RasterMap load_raster(std::istream& source) {
    char magic[4] = {};
    source.read(magic, 4);
    if (!source || std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagicError("load_raster: bad magic, not a CMPR map");
    RasterMap m;
    m.width = read_u32(source, "raster width");
    m.height = read_u32(source, "raster height");
    m.classes = read_u16(source, "raster classes");
    m.meters_per_cell = read_f64(source, "raster cell size");
    if (m.width == 0 || m.height == 0 || m.classes == 0 || !(m.meters_per_cell > 0.0))
        throw FormatError("load_raster: invalid header fields");
    m.data.resize(std::size_t(m.width) * m.height);
    source.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size()));
    if (!source) throw TruncatedError("load_raster: truncated cell data");
    m.validate();
    return m;
}

void save_raster_file(const RasterMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_raster: cannot open " + path);
    save_raster(map, out);
}

RasterMap load_raster_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_raster: cannot open " + path);
    return load_raster(in);
}

}  // namespace cmp
