// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/tsdf.h>
#include <ph2/worker_pool.h>

#include "mc_tables.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace ph2 {

namespace {

std::size_t
cellCount(const Vec3i &dims) {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
}

} // namespace

TsdfVolume::TsdfVolume(const Vec3 &origin, const Vec3i &dims, const TsdfOptions &options)
    : mOrigin(origin), mDims(dims), mVoxel(options.voxelSize), mTruncation(options.truncation),
      mWorkers(std::max(1, options.workers)) {
    if (!(mVoxel > 0.0) || !(mTruncation >= mVoxel)) {
        fail(ErrorKind::InvalidInput, "TSDF truncation must be at least the voxel size");
    }
    if (dims.minCoeff() < 2) {
        fail(ErrorKind::InvalidInput, "TSDF grid needs at least two samples per axis");
    }
    // Checked in floating point first so huge dims cannot overflow.
    const double requested = static_cast<double>(dims.x()) * dims.y() * dims.z();
    if (requested > static_cast<double>(options.maxVoxels)) {
        fail(ErrorKind::ResourceError, "TSDF grid of " + std::to_string(requested) +
                                           " samples exceeds the budget of " +
                                           std::to_string(options.maxVoxels));
    }
    mTsdf.assign(cellCount(dims), 1.0);
    mWeight.assign(cellCount(dims), 0.0);
}

TsdfVolume
TsdfVolume::fromBounds(const Vec3 &lo, const Vec3 &hi, const TsdfOptions &options) {
    if (!(hi.array() >= lo.array()).all() || !lo.allFinite() || !hi.allFinite()) {
        fail(ErrorKind::InvalidInput, "TSDF bounds are empty or not finite");
    }
    TsdfOptions opts = options;
    auto dimsFor = [&](const TsdfOptions &o) {
        const Vec3 extent = (hi - lo).array() + 2.0 * o.truncation;
        return Vec3(((extent / o.voxelSize).array().ceil() + 1.0).matrix());
    };
    Vec3 d = dimsFor(opts);
    if (opts.coarsen) {
        while (d.prod() > static_cast<double>(opts.maxVoxels)) {
            opts.voxelSize *= 1.25;
            opts.truncation *= 1.25;
            d = dimsFor(opts);
        }
    }
    if (d.maxCoeff() > 1e9) {
        fail(ErrorKind::ResourceError, "TSDF bounds are too large for the voxel size");
    }
    const Vec3 origin = lo.array() - opts.truncation;
    return TsdfVolume(origin, d.cast<int>(), opts);
}

void
TsdfVolume::set(int i, int j, int k, double tsdf, double weight) {
    const std::size_t id = index(i, j, k);
    mTsdf[id] = std::clamp(tsdf, -1.0, 1.0);
    mWeight[id] = std::max(0.0, weight);
}

void
TsdfVolume::integrate(const DepthMap &depth, const CameraView &view) {
    if (depth.width != view.width || depth.height != view.height) {
        fail(ErrorKind::InvalidInput, "depth map resolution differs from the view");
    }
    view.validate();
    // Each worker owns a contiguous slab of z layers.
    const WorkerPool pool(mWorkers);
    const int m = pool.size();
    pool.run([&](int w) {
        const int k0 = static_cast<int>(static_cast<long>(mDims.z()) * w / m);
        const int k1 = static_cast<int>(static_cast<long>(mDims.z()) * (w + 1) / m);
        integrateSlab(depth, view, k0, k1);
    });
}

void
TsdfVolume::integrateSlab(const DepthMap &depth, const CameraView &view, int k0, int k1) {
    for (int k = k0; k < k1; ++k) {
        for (int j = 0; j < mDims.y(); ++j) {
            for (int i = 0; i < mDims.x(); ++i) {
                const Vec3 pc = worldToCamera(position(i, j, k), view);
                if (!(pc.z() > 1e-8)) {
                    continue;
                }
                const double u = view.fx * pc.x() / pc.z() + view.cx;
                const double v = view.fy * pc.y() / pc.z() + view.cy;
                const long px = std::lround(u);
                const long py = std::lround(v);
                if (px < 0 || py < 0 || px >= depth.width || py >= depth.height) {
                    continue;
                }
                const std::size_t pix = depth.index(static_cast<int>(px), static_cast<int>(py));
                if (!depth.valid[pix]) {
                    continue;
                }
                const double sdf = depth.depth[pix] - pc.z();
                if (sdf < -mTruncation) {
                    continue;
                }
                const double value = std::min(1.0, sdf / mTruncation);
                const std::size_t id = index(i, j, k);
                const double w = mWeight[id];
                mTsdf[id] = (mTsdf[id] * w + value) / (w + 1.0);
                mWeight[id] = w + 1.0;
            }
        }
    }
}

TriangleMesh
TsdfVolume::extractMesh() const {
    TriangleMesh mesh;
    // Welds vertices shared by neighbouring cells: key = sample index * 3 + axis.
    std::unordered_map<std::size_t, int> edgeVertex;
    double f[8];
    for (int k = 0; k + 1 < mDims.z(); ++k) {
        for (int j = 0; j + 1 < mDims.y(); ++j) {
            for (int i = 0; i + 1 < mDims.x(); ++i) {
                int cube = 0;
                bool observed = true;
                for (int c = 0; c < 8 && observed; ++c) {
                    const auto &o = mc::kCornerOffset[c];
                    const std::size_t id = index(i + o[0], j + o[1], k + o[2]);
                    observed = mWeight[id] > 0.0;
                    f[c] = mTsdf[id];
                    if (f[c] < 0.0) {
                        cube |= 1 << c;
                    }
                }
                if (!observed || mc::kEdgeTable[cube] == 0) {
                    continue;
                }
                int vid[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(mc::kEdgeTable[cube] & (1 << e))) {
                        continue;
                    }
                    const int a = mc::kEdgeCorners[e][0];
                    const int b = mc::kEdgeCorners[e][1];
                    const auto &oa = mc::kCornerOffset[a];
                    const auto &ob = mc::kCornerOffset[b];
                    int axis = 0;
                    while (oa[axis] == ob[axis]) {
                        ++axis;
                    }
                    const int lowCorner = oa[axis] < ob[axis] ? a : b;
                    const auto &ol = mc::kCornerOffset[lowCorner];
                    const std::size_t key = index(i + ol[0], j + ol[1], k + ol[2]) * 3 + axis;
                    auto [it, inserted] = edgeVertex.try_emplace(key, 0);
                    if (inserted) {
                        const double t = f[a] / (f[a] - f[b]);
                        const Vec3 pa = position(i + oa[0], j + oa[1], k + oa[2]);
                        const Vec3 pb = position(i + ob[0], j + ob[1], k + ob[2]);
                        it->second = static_cast<int>(mesh.vertices.size());
                        mesh.vertices.push_back(pa + t * (pb - pa));
                    }
                    vid[e] = it->second;
                }
                const int *tri = mc::kTriTable[cube];
                for (int t = 0; tri[t] != -1; t += 3) {
                    mesh.triangles.push_back({vid[tri[t]], vid[tri[t + 2]], vid[tri[t + 1]]});
                }
            }
        }
    }
    if (mesh.triangles.empty()) {
        fail(ErrorKind::EmptyMesh, "the volume has no observed zero crossing");
    }
    return mesh;
}

} // namespace ph2
