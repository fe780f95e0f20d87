// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ph2/common.h>

#include <cstdint>

namespace ph2 {

/// Spreads the low 21 bits of v so that they occupy every third bit.
inline std::uint64_t
spreadBits21(std::uint64_t v) {
    v &= 0x1fffffULL;
    v = (v | (v << 32)) & 0x1f00000000ffffULL;
    v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
    v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
    v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
    v = (v | (v << 2)) & 0x1249249249249249ULL;
    return v;
}

/// Z-order key of a non-negative lattice coordinate (x in the lowest bit).
inline std::uint64_t
mortonCode(std::uint64_t x, std::uint64_t y, std::uint64_t z) {
    return spreadBits21(x) | (spreadBits21(y) << 1) | (spreadBits21(z) << 2);
}

/// Morton key of a grid cell relative to the level's minimum corner.
inline std::uint64_t
mortonCode(const Vec3i &grid, const Vec3i &origin) {
    const Vec3i rel = grid - origin;
    return mortonCode(static_cast<std::uint64_t>(rel.x()), static_cast<std::uint64_t>(rel.y()),
                      static_cast<std::uint64_t>(rel.z()));
}

} // namespace ph2
