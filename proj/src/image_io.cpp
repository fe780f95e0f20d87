// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/image_io.h>

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace ph2 {

namespace {

using nlohmann::json;

std::filesystem::path
sidecar(const std::filesystem::path &path) {
    return std::filesystem::path(path.string() + ".json");
}

std::string
readText(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct PointProperty {
    std::string name;
    std::string type;
};

std::size_t
plySize(const std::string &type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") {
        return 1;
    }
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") {
        return 2;
    }
    if (type == "int" || type == "uint" || type == "float" || type == "int32" ||
        type == "uint32" || type == "float32") {
        return 4;
    }
    if (type == "double" || type == "float64") {
        return 8;
    }
    fail(ErrorKind::InvalidInput, "unsupported PLY property type " + type);
}

double
plyValue(const char *p, const std::string &type) {
    auto load = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    if (type == "char" || type == "int8") return load(std::int8_t{});
    if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
    if (type == "short" || type == "int16") return load(std::int16_t{});
    if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
    if (type == "int" || type == "int32") return load(std::int32_t{});
    if (type == "uint" || type == "uint32") return load(std::uint32_t{});
    if (type == "float" || type == "float32") return load(float{});
    return load(double{});
}

SparsePoints
readPly(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
        fail(ErrorKind::InvalidInput, path.string() + " is not a PLY file");
    }
    std::string format;
    std::size_t count = 0;
    std::vector<PointProperty> props;
    bool inVertex = false, sawVertex = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line == "end_header") {
            break;
        }
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            ls >> format;
        } else if (word == "element") {
            std::string name;
            std::size_t n = 0;
            ls >> name >> n;
            if (sawVertex && !inVertex) {
                continue;
            }
            inVertex = name == "vertex";
            if (inVertex) {
                count = n;
                sawVertex = true;
            } else if (!sawVertex) {
                fail(ErrorKind::InvalidInput, path.string() + ": vertex must be the first element");
            }
        } else if (word == "property" && inVertex) {
            PointProperty p;
            ls >> p.type;
            if (p.type == "list") {
                fail(ErrorKind::InvalidInput, path.string() + ": list property on vertices");
            }
            ls >> p.name;
            props.push_back(p);
        }
    }
    auto find = [&](const char *name) {
        for (std::size_t i = 0; i < props.size(); ++i) {
            if (props[i].name == name) {
                return static_cast<int>(i);
            }
        }
        return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    if (ix < 0 || iy < 0 || iz < 0) {
        fail(ErrorKind::InvalidInput, path.string() + ": vertex needs x, y and z");
    }
    const bool color = ir >= 0 && ig >= 0 && ib >= 0;
    SparsePoints out;
    out.positions.reserve(count);
    std::vector<double> values(props.size());
    std::size_t stride = 0;
    std::vector<std::size_t> offset;
    for (const auto &p : props) {
        offset.push_back(stride);
        stride += plySize(p.type);
    }
    std::vector<char> row(stride);
    for (std::size_t i = 0; i < count; ++i) {
        if (format == "ascii") {
            for (auto &v : values) {
                if (!(in >> v)) {
                    fail(ErrorKind::IoError, "truncated PLY body in " + path.string());
                }
            }
        } else if (format == "binary_little_endian") {
            if (!in.read(row.data(), static_cast<std::streamsize>(stride))) {
                fail(ErrorKind::IoError, "truncated PLY body in " + path.string());
            }
            for (std::size_t k = 0; k < props.size(); ++k) {
                values[k] = plyValue(row.data() + offset[k], props[k].type);
            }
        } else {
            fail(ErrorKind::InvalidInput, path.string() + ": unsupported PLY format " + format);
        }
        out.positions.emplace_back(values[ix], values[iy], values[iz]);
        if (color) {
            const double s = props[ir].type.find("char") != std::string::npos ||
                                     props[ir].type.find("int8") != std::string::npos
                                 ? 1.0 / 255.0
                                 : 1.0;
            out.colors.emplace_back(values[ir] * s, values[ig] * s, values[ib] * s);
        }
    }
    return out;
}

SparsePoints
readTriplets(const std::filesystem::path &path) {
    std::istringstream in(readText(path));
    SparsePoints out;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        std::vector<double> v;
        double x;
        while (ls >> x) {
            v.push_back(x);
        }
        if (!ls.eof()) {
            fail(ErrorKind::InvalidInput,
                 path.string() + ":" + std::to_string(lineNo) + ": not a number");
        }
        if (v.empty()) {
            continue;
        }
        if (v.size() != 3 && v.size() != 6) {
            fail(ErrorKind::InvalidInput,
                 path.string() + ":" + std::to_string(lineNo) + ": expected 3 or 6 values");
        }
        out.positions.emplace_back(v[0], v[1], v[2]);
        if (v.size() == 6) {
            out.colors.emplace_back(v[3], v[4], v[5]);
        }
    }
    if (!out.colors.empty() && out.colors.size() != out.positions.size()) {
        fail(ErrorKind::InvalidInput, path.string() + ": colors given for only some points");
    }
    return out;
}

} // namespace

namespace {

// libpng reports errors by longjmp to the setjmp in the calling frame. The
// handles own no C++ state across that jump, and this guard releases them on
// every path.
struct PngHandles {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE *file = nullptr;
    bool writing = false;

    ~PngHandles() {
        if (png) {
            if (writing) {
                png_destroy_write_struct(&png, &info);
            } else {
                png_destroy_read_struct(&png, &info, nullptr);
            }
        }
        if (file) {
            std::fclose(file);
        }
    }
};

int
colorTypeFor(int channels) {
    switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
    default: fail(ErrorKind::InvalidInput, "PNG images need 1 to 4 channels");
    }
}

} // namespace

// The low-level interface is used so stored sample values pass through
// unchanged: no gamma conversion and no alpha premultiplication.
Image
readPng(const std::filesystem::path &path) {
    PngHandles h;
    h.file = std::fopen(path.c_str(), "rb");
    if (!h.file) {
        fail(ErrorKind::IoError, "cannot open PNG " + path.string());
    }
    png_byte signature[8] = {};
    if (std::fread(signature, 1, 8, h.file) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        fail(ErrorKind::IoError, "not a PNG file: " + path.string());
    }
    h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    h.info = h.png ? png_create_info_struct(h.png) : nullptr;
    if (!h.info) {
        fail(ErrorKind::ResourceError, "cannot allocate PNG decoder");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int channels = 0, depth = 0;
    if (setjmp(png_jmpbuf(h.png))) {
        fail(ErrorKind::IoError, "cannot decode PNG " + path.string());
    }
    png_init_io(h.png, h.file);
    png_set_sig_bytes(h.png, 8);
    png_read_info(h.png, h.info);
    const int colorType = png_get_color_type(h.png, h.info);
    if (colorType == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(h.png);
    }
    if (colorType == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(h.png, h.info) < 8) {
        png_set_expand_gray_1_2_4_to_8(h.png);
    }
    if (png_get_valid(h.png, h.info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(h.png);
    }
    if (png_get_bit_depth(h.png, h.info) == 16 && std::endian::native == std::endian::little) {
        png_set_swap(h.png);
    }
    png_read_update_info(h.png, h.info);
    width = png_get_image_width(h.png, h.info);
    height = png_get_image_height(h.png, h.info);
    channels = png_get_channels(h.png, h.info);
    depth = png_get_bit_depth(h.png, h.info);
    const std::size_t rowBytes = png_get_rowbytes(h.png, h.info);
    pixels.resize(rowBytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        rows[y] = pixels.data() + y * rowBytes;
    }
    png_read_image(h.png, rows.data());
    png_read_end(h.png, nullptr);

    Image image(static_cast<int>(width), static_cast<int>(height), channels);
    if (depth == 16) {
        for (std::size_t i = 0; i < image.data.size(); ++i) {
            std::uint16_t v;
            std::memcpy(&v, pixels.data() + 2 * i, 2);
            image.data[i] = v / 65535.0;
        }
    } else {
        for (std::size_t i = 0; i < image.data.size(); ++i) {
            image.data[i] = pixels[i] / 255.0;
        }
    }
    return image;
}

void
writePng(const Image &image, const std::filesystem::path &path, bool sixteenBit) {
    const int colorType = colorTypeFor(image.channels);
    auto quantize = [](double v, double top) {
        return std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * top);
    };
    const std::size_t bytes = sixteenBit ? 2 : 1;
    std::vector<std::uint8_t> pixels(image.data.size() * bytes);
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        if (sixteenBit) {
            const auto v = static_cast<std::uint16_t>(quantize(image.data[i], 65535.0));
            std::memcpy(pixels.data() + 2 * i, &v, 2);
        } else {
            pixels[i] = static_cast<std::uint8_t>(quantize(image.data[i], 255.0));
        }
    }
    const std::size_t rowBytes = static_cast<std::size_t>(image.width) * image.channels * bytes;
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) {
        rows[y] = pixels.data() + y * rowBytes;
    }

    PngHandles h;
    h.writing = true;
    h.file = std::fopen(path.c_str(), "wb");
    if (!h.file) {
        fail(ErrorKind::IoError, "cannot write PNG " + path.string());
    }
    h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    h.info = h.png ? png_create_info_struct(h.png) : nullptr;
    if (!h.info) {
        fail(ErrorKind::ResourceError, "cannot allocate PNG encoder");
    }
    if (setjmp(png_jmpbuf(h.png))) {
        fail(ErrorKind::IoError, "cannot write PNG " + path.string());
    }
    png_init_io(h.png, h.file);
    png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), sixteenBit ? 16 : 8, colorType,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(h.png, h.info);
    if (sixteenBit && std::endian::native == std::endian::little) {
        png_set_swap(h.png);
    }
    png_write_image(h.png, rows.data());
    png_write_end(h.png, nullptr);
}

void
writeRawFloat(const Image &image, const std::filesystem::path &path) {
    std::vector<float> planar(image.data.size());
    const std::size_t px = image.pixels();
    for (std::size_t i = 0; i < px; ++i) {
        for (int c = 0; c < image.channels; ++c) {
            planar[c * px + i] = static_cast<float>(image.data[i * image.channels + c]);
        }
    }
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char *>(planar.data()),
              static_cast<std::streamsize>(planar.size() * sizeof(float)));
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path.string());
    }
    const json meta = {{"width", image.width},
                       {"height", image.height},
                       {"channels", image.channels},
                       {"dtype", "float32"},
                       {"layout", "planar"}};
    std::ofstream side(sidecar(path));
    side << meta.dump(2) << '\n';
    if (!side) {
        fail(ErrorKind::IoError, "cannot write " + sidecar(path).string());
    }
}

Image
readRawFloat(const std::filesystem::path &path) {
    json meta;
    try {
        meta = json::parse(readText(sidecar(path)));
    } catch (const json::exception &e) {
        fail(ErrorKind::InvalidInput, sidecar(path).string() + ": " + e.what());
    }
    const int w = meta.value("width", 0), h = meta.value("height", 0), c = meta.value("channels", 0);
    if (w <= 0 || h <= 0 || c <= 0 || meta.value("dtype", "") != "float32") {
        fail(ErrorKind::InvalidInput, sidecar(path).string() + ": bad raw image description");
    }
    Image image(w, h, c);
    std::vector<float> planar(image.data.size());
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    if (!in.read(reinterpret_cast<char *>(planar.data()),
                 static_cast<std::streamsize>(planar.size() * sizeof(float)))) {
        fail(ErrorKind::IoError, path.string() + " is shorter than its description");
    }
    const std::size_t px = image.pixels();
    for (std::size_t i = 0; i < px; ++i) {
        for (int k = 0; k < c; ++k) {
            image.data[i * c + k] = planar[k * px + i];
        }
    }
    return image;
}

DepthMap
depthFromImage(const Image &image) {
    if (image.channels != 1) {
        fail(ErrorKind::InvalidInput, "depth images have one channel");
    }
    DepthMap d(image.width, image.height);
    for (std::size_t i = 0; i < d.pixels(); ++i) {
        const double v = image.data[i];
        d.valid[i] = std::isfinite(v) && v > 0.0 ? 1 : 0;
        d.depth[i] = d.valid[i] ? v : 0.0;
    }
    return d;
}

Image
depthToImage(const DepthMap &depth) {
    Image image(depth.width, depth.height, 1);
    for (std::size_t i = 0; i < depth.pixels(); ++i) {
        image.data[i] = depth.valid[i] ? depth.depth[i] : std::numeric_limits<double>::quiet_NaN();
    }
    return image;
}

void
writeDepth(const DepthMap &depth, const std::filesystem::path &path) {
    writeRawFloat(depthToImage(depth), path);
}

DepthMap
readDepth(const std::filesystem::path &path) {
    return depthFromImage(readRawFloat(path));
}

SparsePoints
readPoints(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        fail(ErrorKind::IoError, "point file " + path.string() + " does not exist");
    }
    return path.extension() == ".ply" ? readPly(path) : readTriplets(path);
}

void
writePointsPly(const SparsePoints &points, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    }
    const bool color = points.colors.size() == points.positions.size() && !points.colors.empty();
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (color) {
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    out << "end_header\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        out.write(reinterpret_cast<const char *>(points.positions[i].data()), 3 * sizeof(double));
        if (color) {
            for (int c = 0; c < 3; ++c) {
                const auto v = static_cast<std::uint8_t>(
                    std::lround(std::clamp(points.colors[i][c], 0.0, 1.0) * 255.0));
                out.put(static_cast<char>(v));
            }
        }
    }
    if (!out) {
        fail(ErrorKind::IoError, "failed writing " + path.string());
    }
}

} // namespace ph2
