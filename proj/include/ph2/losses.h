// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Batch training objectives and image metrics. Each loss returns its value
// and adds weight * dLoss/dTarget into the caller's gradient buffers.
#pragma once

#include <ph2/camera.h>
#include <ph2/image.h>
#include <ph2/renderer.h>

#include <cstdint>
#include <span>
#include <vector>

namespace ph2 {

struct LossValue {
    double value = 0.0;
    bool warning = false; // nothing contributed (all masked or degenerate)
};

/// Mean absolute RGB error per view, averaged over the batch.
LossValue lossRgb(std::span<const RenderTargets> renders, std::span<const Image> targets,
                  std::span<RenderGrads> grads, double weight = 1.0);

/// Mean absolute depth error over pixels valid in both the prior and the
/// render, averaged over the batch.
LossValue lossDepth(std::span<const RenderTargets> renders, std::span<const DepthMap> priors,
                    std::span<RenderGrads> grads, double weight = 1.0);

/// Homography induced by the plane n.X + d = 0 (source camera frame) from
/// source pixels to destination pixels, scaled so H(2, 2) = 1.
/// Throws DegeneratePlane when |d| < 1e-6.
Mat3 computeHomography(const CameraView &source, const CameraView &destination, const Vec3 &normal,
                       double distance);

/// Same, for a plane given in world coordinates.
Mat3 homographyFromWorldPlane(const CameraView &source, const CameraView &destination,
                              const Vec3 &worldNormal, double worldDistance);

inline constexpr int kNccPatchRadius = 3; // 7x7 patches
inline constexpr int kNccPatchesPerPair = 64;
inline constexpr double kNccStdGuard = 1e-6;

double luminance(double r, double g, double b);

/// Normalized cross correlation of two equally sized sample sets; NaN when
/// either standard deviation is below the guard.
double ncc(std::span<const double> a, std::span<const double> b);

struct GeoOptions {
    int patchesPerPair = kNccPatchesPerPair;
    std::uint64_t seed = 0;
    double minAlpha = 0.9;
    double minIncidence = 1e-3;
};

/// Multi-view geometric loss over pairs (2i, 2i+1). The second view of each
/// pair supplies patches and receives gradients (colors, and normal/depth at
/// each patch center through the homography); the first is a stop-gradient
/// reference. Throws InvalidInput for an odd batch.
LossValue lossGeo(std::span<const RenderTargets> renders, std::span<const CameraView> views,
                  std::span<RenderGrads> grads, double weight, const GeoOptions &options);

/// One patch of the geometric loss; exposed for tests. Returns NaN when the
/// patch is degenerate or leaves the reference image.
double geoPatchLoss(const RenderTargets &source, const CameraView &sourceView,
                    const RenderTargets &reference, const CameraView &referenceView, int cx,
                    int cy, RenderGrads *grads, double weight);

inline constexpr double kPsnrCap = 99.0;

double psnr(const Image &image, const Image &reference);
double ssim(const Image &image, const Image &reference);

struct SsimTerms {
    double luminance = 1.0;
    double contrastStructure = 1.0;
    double ssim = 1.0;
};
/// Window-averaged SSIM terms (luminance and contrast-structure factors).
SsimTerms ssimComponents(const Image &image, const Image &reference);

/// Render targets' RGB as an image.
Image rgbImage(const RenderTargets &targets);

} // namespace ph2
