// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ph2/common.h>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ph2 {

/// Interleaved multi-channel image of doubles.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t
    pixels() const {
        return static_cast<std::size_t>(width) * height;
    }
    double &
    at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double
    at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool
    sameShape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Single-channel depth with a validity mask.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h)
        : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
          valid(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t
    pixels() const {
        return static_cast<std::size_t>(width) * height;
    }
    std::size_t
    index(int x, int y) const {
        return static_cast<std::size_t>(y) * width + x;
    }
    std::size_t validCount() const;
};

inline std::size_t
DepthMap::validCount() const {
    std::size_t n = 0;
    for (auto v : valid) {
        n += v ? 1 : 0;
    }
    return n;
}

} // namespace ph2
