// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Triangle meshes, their export formats and point-cloud accuracy metrics.
#pragma once

#include <ph2/common.h>

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace ph2 {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    /// Throws ContractViolation on out-of-range indices or non-finite vertices.
    void validate() const;
};

/// Binary little-endian PLY, float32 vertices and int32 faces.
void writeMeshPly(const TriangleMesh &mesh, const std::filesystem::path &path);
TriangleMesh readMeshPly(const std::filesystem::path &path);
void writeMeshObj(const TriangleMesh &mesh, const std::filesystem::path &path);

/// Area-weighted surface samples (deterministic under the seed).
std::vector<Vec3> sampleSurface(const TriangleMesh &mesh, std::size_t count, std::uint64_t seed);

struct CloudMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Precision: fraction of `predicted` within `threshold` of `reference`;
/// recall the converse. Distances equal to the threshold count as hits.
/// Throws InvalidInput on an empty cloud or a non-positive threshold.
CloudMetrics evalPointCloud(std::span<const Vec3> predicted, std::span<const Vec3> reference,
                            double threshold);

/// Fraction of `query` points with a neighbour in `target` within `radius`.
double fractionWithin(std::span<const Vec3> query, std::span<const Vec3> target, double radius);

/// Largest nearest-neighbour distance from `query` to `target`.
double directedHausdorff(std::span<const Vec3> query, std::span<const Vec3> target);

} // namespace ph2
