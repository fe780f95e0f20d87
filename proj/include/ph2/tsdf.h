// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Projective TSDF fusion of depth maps on a dense axis-aligned grid, and
// marching-cubes extraction of its zero level set.
#pragma once

#include <ph2/camera.h>
#include <ph2/image.h>
#include <ph2/mesh.h>

#include <cstddef>
#include <vector>

namespace ph2 {

inline constexpr double kDefaultTsdfVoxel = 0.01;
inline constexpr double kDefaultTsdfTruncation = 0.04;
inline constexpr std::size_t kDefaultTsdfVoxelBudget = std::size_t{1} << 26;

struct TsdfOptions {
    double voxelSize = kDefaultTsdfVoxel;
    double truncation = kDefaultTsdfTruncation;
    std::size_t maxVoxels = kDefaultTsdfVoxelBudget;
    /// When the bounds need more than maxVoxels samples, grow the voxel (and
    /// the truncation with it) instead of failing.
    bool coarsen = true;
    int workers = 1;
};

/// Grid samples sit at origin + (i, j, k) * voxelSize. tsdf is stored
/// normalized by the truncation, so it stays in [-1, 1].
class TsdfVolume {
  public:
    /// Throws InvalidInput when truncation < voxel size or a dimension is
    /// not positive, ResourceError when dims exceed the budget.
    TsdfVolume(const Vec3 &origin, const Vec3i &dims, const TsdfOptions &options = {});

    /// Covers [lo, hi] padded by one truncation band.
    static TsdfVolume fromBounds(const Vec3 &lo, const Vec3 &hi, const TsdfOptions &options = {});

    /// Projective update with the nearest-pixel depth. Samples in front of the
    /// surface get min(1, sdf / trunc); samples deeper than one truncation
    /// behind it, outside the image, or over invalid pixels are untouched.
    void integrate(const DepthMap &depth, const CameraView &view);

    /// Marching cubes at iso 0 over cells whose eight samples were all
    /// observed. Throws EmptyMesh when no cell crosses zero.
    TriangleMesh extractMesh() const;

    double
    voxelSize() const {
        return mVoxel;
    }
    double
    truncation() const {
        return mTruncation;
    }
    const Vec3 &
    origin() const {
        return mOrigin;
    }
    const Vec3i &
    dims() const {
        return mDims;
    }
    std::size_t
    size() const {
        return mTsdf.size();
    }
    std::size_t
    index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * mDims.y() + j) * mDims.x() + i;
    }
    Vec3
    position(int i, int j, int k) const {
        return mOrigin + mVoxel * Vec3(i, j, k);
    }
    double
    tsdf(int i, int j, int k) const {
        return mTsdf[index(i, j, k)];
    }
    double
    weight(int i, int j, int k) const {
        return mWeight[index(i, j, k)];
    }
    const std::vector<double> &
    tsdfValues() const {
        return mTsdf;
    }
    const std::vector<double> &
    weights() const {
        return mWeight;
    }
    /// Direct write, for analytic volumes. The value is clamped to [-1, 1].
    void set(int i, int j, int k, double tsdf, double weight);

  private:
    void integrateSlab(const DepthMap &depth, const CameraView &view, int k0, int k1);

    Vec3 mOrigin;
    Vec3i mDims;
    double mVoxel;
    double mTruncation;
    int mWorkers;
    std::vector<double> mTsdf;
    std::vector<double> mWeight;
};

} // namespace ph2
