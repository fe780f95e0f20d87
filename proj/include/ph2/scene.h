// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// LoD voxel hierarchy built from sparse points. Each level k quantizes the
// points to a lattice of spacing delta / 2^k; every occupied lattice cell
// becomes a voxel carrying its own learnable embedding, scale and offsets.
#pragma once

#include <ph2/camera.h>
#include <ph2/common.h>

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace ph2 {

inline constexpr int kEmbeddingDim = 32;
using Embedding = Eigen::Matrix<double, kEmbeddingDim, 1>;
using Offsets = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct SparsePoints {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors; // empty, or one RGB in [0, 1] per position

    std::size_t
    size() const {
        return positions.size();
    }
};

struct VoxelRecord {
    int level = 0;
    Vec3i grid = Vec3i::Zero();
    Vec3 center = Vec3::Zero(); // grid * cellSize(level), exactly
    Embedding embedding = Embedding::Zero();
    Vec3 scale = Vec3::Ones();
    Offsets offsets;
    int owner = 0;
};

/// Identifies a voxel by level and its position in the level's canonical order.
struct VoxelRef {
    int level = 0;
    std::uint32_t index = 0;

    std::uint64_t
    key() const {
        return (static_cast<std::uint64_t>(level) << 32) | index;
    }
    friend bool operator==(const VoxelRef &, const VoxelRef &) = default;
};

struct LodConfig {
    double referenceDistance = 1.0;
    double bias = 0.0;
    double frustumMargin = 0.1;
};

/// Round half away from zero, so cell ties resolve identically everywhere.
double roundHalfAway(double x);
Vec3i quantize(const Vec3 &p, double cellSize);

class SceneModel {
  public:
    SceneModel() = default;
    SceneModel(int levels, double baseVoxelSize, int offsetsPerVoxel);

    int
    levels() const {
        return static_cast<int>(mLevels.size());
    }
    double
    baseVoxelSize() const {
        return mBaseVoxelSize;
    }
    int
    offsetsPerVoxel() const {
        return mOffsetsPerVoxel;
    }
    /// delta / 2^k
    double cellSize(int level) const;

    const std::vector<VoxelRecord> &
    level(int k) const {
        return mLevels.at(k);
    }
    std::vector<VoxelRecord> &
    level(int k) {
        return mLevels.at(k);
    }
    const VoxelRecord &
    voxel(VoxelRef ref) const {
        return mLevels.at(ref.level).at(ref.index);
    }
    VoxelRecord &
    voxel(VoxelRef ref) {
        return mLevels.at(ref.level).at(ref.index);
    }

    std::optional<std::uint32_t> find(int level, const Vec3i &grid) const;
    /// Appends at the end of the level's canonical order. Throws InvalidInput
    /// if the cell already exists or the record violates its invariants.
    std::uint32_t append(VoxelRecord record);

    std::size_t totalVoxels() const;

    /// Replaces a level's voxels wholesale (used by build and snapshot load).
    void setLevel(int k, std::vector<VoxelRecord> voxels);

    LodConfig lod;

  private:
    struct GridHash {
        std::size_t operator()(const Vec3i &g) const noexcept;
    };

    int mOffsetsPerVoxel = 0;
    double mBaseVoxelSize = 1.0;
    std::vector<std::vector<VoxelRecord>> mLevels;
    std::vector<std::unordered_map<Vec3i, std::uint32_t, GridHash>> mIndex;
};

struct BuildOptions {
    double voxelSize = 1.0;
    int levels = 3;
    int offsetsPerVoxel = 5;
    std::uint64_t seed = 0;
    double lodBias = 0.0;
    /// When unset, the median camera-to-point distance over `views` is used,
    /// falling back to the point cloud's bounding-box diagonal.
    std::optional<double> lodReferenceDistance;
    std::span<const CameraView> views;
};

/// Quantizes the points at every level, deduplicates cells, orders each level
/// canonically (Morton order of grid coordinates) and seeds the learnable state.
SceneModel buildHierarchy(const SparsePoints &points, const BuildOptions &options);

/// Seeds a voxel's embedding, scale and offsets the way buildHierarchy does.
void initializeVoxel(VoxelRecord &voxel, double cellSize, int offsetsPerVoxel, Rng &rng);

double medianViewDistance(const SparsePoints &points, std::span<const CameraView> views);

/// clamp(floor(log2(referenceDistance / distance) + bias), 0, K - 1)
int predictedLevel(double distance, const SceneModel &scene);

/// Whether the voxel should be decoded for this view: it must sit at the
/// predicted level for its camera distance and project inside the frustum
/// grown by the configured margin.
bool selectLod(const VoxelRecord &voxel, const CameraView &view, const SceneModel &scene);

/// All voxels active for the view, level-major in canonical order.
std::vector<VoxelRef> activeVoxels(const SceneModel &scene, const CameraView &view);

} // namespace ph2
