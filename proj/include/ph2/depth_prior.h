// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Monocular depth priors: affine alignment to sparse points, multi-view
// round-trip consistency and the filtered ("enhanced") depth used for
// depth supervision.
#pragma once

#include <ph2/camera.h>
#include <ph2/image.h>
#include <ph2/scene.h>

#include <limits>
#include <span>
#include <vector>

namespace ph2 {

struct AffineFit {
    double scale = 1.0;
    double shift = 0.0;
    std::size_t inliers = 0;
};

/// Least squares y ~ scale * x + shift, then one refit after dropping
/// residuals further than 3 MADs from the median (when `robust`). The
/// residuals are taken against the plain fit or, when it has a smaller
/// median residual, a least-median-of-squares line from seeded pairs.
/// Throws InsufficientData below two samples and DegenerateFit when x is
/// constant.
AffineFit fitAffine(std::span<const double> x, std::span<const double> y, bool robust = true);

inline constexpr std::size_t kMinFitPoints = 8;

/// Aligns raw mono depth to the camera-frame z of the sparse points visible
/// in the view. Throws InsufficientData with fewer than 8 usable points and
/// DegenerateFit for constant depth or a non-positive scale.
AffineFit fitScaleShift(const DepthMap &mono, const CameraView &view, const SparsePoints &points);

DepthMap applyAffine(const DepthMap &mono, const AffineFit &fit);

/// Bilinear sample at (u, v); falls back to the nearest pixel when a tap is
/// invalid. Returns NaN outside the image or on an invalid nearest pixel.
double sampleDepth(const DepthMap &map, double u, double v);

/// Round-trip re-projection error a -> b -> a in pixels; +inf where the
/// round trip leaves view b or hits invalid depth.
std::vector<double> reprojectionError(const DepthMap &a, const CameraView &viewA, const DepthMap &b,
                                      const CameraView &viewB);

/// k nearest cameras by center distance whose viewing directions agree
/// (dot >= minDot), nearest first.
std::vector<std::size_t> nearbyViews(std::span<const CameraView> views, std::size_t target,
                                     std::size_t k = 2, double minDot = 0.5);

inline constexpr double kDefaultTauD = 1.0;

struct EnhancedDepth {
    DepthMap depth;           // aligned depth; valid = consistent
    std::vector<double> error; // min round-trip error over neighbors

    double coverage() const;
};

struct NeighborDepth {
    const DepthMap *depth = nullptr;
    const CameraView *view = nullptr;
};

EnhancedDepth enhanceDepth(const DepthMap &aligned, const CameraView &view,
                           std::span<const NeighborDepth> neighbors, double tauD = kDefaultTauD);

} // namespace ph2
