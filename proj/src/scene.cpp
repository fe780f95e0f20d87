// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/morton.h>
#include <ph2/scene.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace ph2 {

double
roundHalfAway(double x) {
    return std::round(x); // std::round already rounds halfway cases away from zero
}

Vec3i
quantize(const Vec3 &p, double cellSize) {
    return {static_cast<int>(roundHalfAway(p.x() / cellSize)),
            static_cast<int>(roundHalfAway(p.y() / cellSize)),
            static_cast<int>(roundHalfAway(p.z() / cellSize))};
}

std::size_t
SceneModel::GridHash::operator()(const Vec3i &g) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(g.x());
    h = h * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint32_t>(g.y());
    h = h * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint32_t>(g.z());
    return static_cast<std::size_t>(h ^ (h >> 29));
}

SceneModel::SceneModel(int levels, double baseVoxelSize, int offsetsPerVoxel)
    : mOffsetsPerVoxel(offsetsPerVoxel), mBaseVoxelSize(baseVoxelSize), mLevels(levels),
      mIndex(levels) {
    if (levels < 1) {
        fail(ErrorKind::InvalidInput, "level count must be >= 1");
    }
    if (!(baseVoxelSize > 0.0) || !std::isfinite(baseVoxelSize)) {
        fail(ErrorKind::InvalidInput, "voxel size must be positive");
    }
    if (offsetsPerVoxel < 1) {
        fail(ErrorKind::InvalidInput, "offsets per voxel must be >= 1");
    }
}

double
SceneModel::cellSize(int level) const {
    return std::ldexp(mBaseVoxelSize, -level);
}

std::optional<std::uint32_t>
SceneModel::find(int level, const Vec3i &grid) const {
    const auto &index = mIndex.at(level);
    if (auto it = index.find(grid); it != index.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::uint32_t
SceneModel::append(VoxelRecord record) {
    const int k = record.level;
    if (k < 0 || k >= levels()) {
        fail(ErrorKind::InvalidInput, "voxel level out of range");
    }
    if (find(k, record.grid)) {
        fail(ErrorKind::InvalidInput, "duplicate voxel cell");
    }
    if (record.offsets.rows() != mOffsetsPerVoxel || !(record.scale.array() > 0.0).all()) {
        fail(ErrorKind::InvalidInput, "voxel state does not match the scene layout");
    }
    record.center = record.grid.cast<double>() * cellSize(k);
    const auto index = static_cast<std::uint32_t>(mLevels[k].size());
    mIndex[k].emplace(record.grid, index);
    mLevels[k].push_back(std::move(record));
    return index;
}

std::size_t
SceneModel::totalVoxels() const {
    std::size_t total = 0;
    for (const auto &lvl : mLevels) {
        total += lvl.size();
    }
    return total;
}

void
SceneModel::setLevel(int k, std::vector<VoxelRecord> voxels) {
    mLevels.at(k).clear();
    mIndex.at(k).clear();
    for (auto &v : voxels) {
        v.level = k;
        append(std::move(v));
    }
}

void
initializeVoxel(VoxelRecord &voxel, double cellSize, int offsetsPerVoxel, Rng &rng) {
    for (int i = 0; i < kEmbeddingDim; ++i) {
        voxel.embedding[i] = rng.uniform(-0.01, 0.01);
    }
    voxel.scale = Vec3::Constant(cellSize);
    voxel.offsets.resize(offsetsPerVoxel, 3);
    for (int j = 0; j < offsetsPerVoxel; ++j) {
        for (int a = 0; a < 3; ++a) {
            voxel.offsets(j, a) = rng.uniform(-0.5, 0.5);
        }
    }
}

double
medianViewDistance(const SparsePoints &points, std::span<const CameraView> views) {
    std::vector<double> distances;
    distances.reserve(points.size() * views.size());
    for (const auto &view : views) {
        const Vec3 c = view.center();
        for (const auto &p : points.positions) {
            distances.push_back((p - c).norm());
        }
    }
    if (distances.empty()) {
        return 0.0;
    }
    auto mid = distances.begin() + static_cast<std::ptrdiff_t>(distances.size() / 2);
    std::nth_element(distances.begin(), mid, distances.end());
    return *mid;
}

SceneModel
buildHierarchy(const SparsePoints &points, const BuildOptions &options) {
    if (points.positions.empty()) {
        fail(ErrorKind::InvalidInput, "sparse point set is empty");
    }
    if (!(options.voxelSize > 0.0)) {
        fail(ErrorKind::InvalidInput, "voxel size must be positive");
    }
    for (const auto &p : points.positions) {
        if (!p.allFinite()) {
            fail(ErrorKind::InvalidInput, "sparse point has non-finite coordinates");
        }
    }

    SceneModel scene(options.levels, options.voxelSize, options.offsetsPerVoxel);
    Rng rng(options.seed);

    for (int k = 0; k < options.levels; ++k) {
        const double cell = scene.cellSize(k);
        std::vector<Vec3i> cells;
        cells.reserve(points.size());
        for (const auto &p : points.positions) {
            cells.push_back(quantize(p, cell));
        }
        Vec3i origin = cells.front();
        for (const auto &c : cells) {
            origin = origin.cwiseMin(c);
        }
        std::vector<std::pair<std::uint64_t, Vec3i>> keyed;
        keyed.reserve(cells.size());
        for (const auto &c : cells) {
            keyed.emplace_back(mortonCode(c, origin), c);
        }
        std::sort(keyed.begin(), keyed.end(),
                  [](const auto &a, const auto &b) { return a.first < b.first; });
        keyed.erase(std::unique(keyed.begin(), keyed.end(),
                                [](const auto &a, const auto &b) { return a.first == b.first; }),
                    keyed.end());

        std::vector<VoxelRecord> voxels;
        voxels.reserve(keyed.size());
        for (const auto &[code, grid] : keyed) {
            VoxelRecord v;
            v.level = k;
            v.grid = grid;
            initializeVoxel(v, cell, options.offsetsPerVoxel, rng);
            voxels.push_back(std::move(v));
        }
        scene.setLevel(k, std::move(voxels));
    }

    scene.lod.bias = options.lodBias;
    if (options.lodReferenceDistance) {
        scene.lod.referenceDistance = *options.lodReferenceDistance;
    } else if (!options.views.empty()) {
        scene.lod.referenceDistance = medianViewDistance(points, options.views);
    } else {
        Vec3 lo = points.positions.front(), hi = lo;
        for (const auto &p : points.positions) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        scene.lod.referenceDistance = std::max((hi - lo).norm(), options.voxelSize);
    }
    return scene;
}

int
predictedLevel(double distance, const SceneModel &scene) {
    const int top = scene.levels() - 1;
    if (!(distance > 0.0)) {
        return top;
    }
    const double raw = std::floor(std::log2(scene.lod.referenceDistance / distance) + scene.lod.bias);
    if (raw <= 0.0) {
        return 0;
    }
    if (raw >= top) {
        return top;
    }
    return static_cast<int>(raw);
}

bool
selectLod(const VoxelRecord &voxel, const CameraView &view, const SceneModel &scene) {
    const Vec3 pCam = worldToCamera(voxel.center, view);
    if (!(pCam.z() > 1e-8)) {
        return false;
    }
    const double u = view.fx * pCam.x() / pCam.z() + view.cx;
    const double v = view.fy * pCam.y() / pCam.z() + view.cy;
    const double mx = scene.lod.frustumMargin * view.width;
    const double my = scene.lod.frustumMargin * view.height;
    if (u < -mx || u > view.width + mx || v < -my || v > view.height + my) {
        return false;
    }
    return predictedLevel(pCam.norm(), scene) == voxel.level;
}

std::vector<VoxelRef>
activeVoxels(const SceneModel &scene, const CameraView &view) {
    std::vector<VoxelRef> refs;
    for (int k = 0; k < scene.levels(); ++k) {
        const auto &lvl = scene.level(k);
        for (std::uint32_t i = 0; i < lvl.size(); ++i) {
            if (selectLod(lvl[i], view, scene)) {
                refs.push_back({k, i});
            }
        }
    }
    return refs;
}

} // namespace ph2
