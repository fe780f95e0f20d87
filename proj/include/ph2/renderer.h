// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Tile-based differentiable splatting. Gaussians are projected with the EWA
// approximation, binned into 16x16 tiles, sorted front to back and alpha
// blended into color, normal, plane-distance and coverage channels. Depth is
// the ray/plane intersection of the blended plane: D / (N . K^-1 p).
#pragma once

#include <ph2/camera.h>
#include <ph2/decoder.h>
#include <ph2/partition.h>
#include <ph2/scene.h>

#include <cstdint>
#include <span>
#include <vector>

namespace ph2 {

inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kLowPass = 0.3;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kMinCoverage = 1e-4;
inline constexpr double kDepthDenominatorGuard = 1e-6;

inline std::uint64_t
gaussianId(VoxelRef voxel, int j) {
    return (voxel.key() << 8) | static_cast<std::uint64_t>(j);
}

/// Decoded Gaussians of one view, gathered from every owning worker.
struct GaussianBatch {
    std::vector<GaussianAttr> gaussians;
    std::vector<std::uint64_t> ids;
    std::vector<VoxelRef> sources;
    std::vector<int> owners;

    std::size_t
    size() const {
        return gaussians.size();
    }
    void push(const GaussianAttr &g, std::uint64_t id, VoxelRef source = {}, int owner = 0);
};

struct Splat2D {
    Vec2 mean = Vec2::Zero();      // pixels
    Mat2 cov = Mat2::Identity();   // pixel^2, low-pass included
    Vec3 conic = Vec3::Zero();     // (a, b, c) of cov^-1
    Vec3 normal = Vec3::UnitZ();   // camera frame, facing the camera
    double planeDistance = 0.0;    // normal . mu_cam
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double depth = 0.0;            // camera-frame z, the sort key
    std::uint64_t id = 0;
    std::uint32_t source = 0;      // index into the GaussianBatch
    int radius = 0;                // 3-sigma bound in pixels
    Vec3 camPos = Vec3::Zero();
    double normalSign = 1.0;
};

/// Projects one Gaussian. Returns false when it is culled by the near plane.
bool projectGaussian(const GaussianAttr &g, const CameraView &view, Splat2D &out);
/// Projects the batch, dropping culled Gaussians; order follows the batch.
std::vector<Splat2D> projectSplats(const GaussianBatch &batch, const CameraView &view);

/// Gradient w.r.t. one projected splat.
struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    Vec3 conic = Vec3::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    double planeDistance = 0.0;

    SplatGrad &operator+=(const SplatGrad &o);
};

/// Chains a splat gradient back to the Gaussian's (mean, opacity, color,
/// scale, rotation), including the normal's dependence on the rotation.
GaussianAttrGrad projectBackward(const GaussianAttr &g, const Splat2D &splat,
                                 const CameraView &view, const SplatGrad &grad);

/// Per-tile splat lists (CSR), each sorted by (depth, id).
struct TileBins {
    int tilesX = 0;
    int tilesY = 0;
    std::vector<std::uint32_t> offsets;
    std::vector<std::uint32_t> indices;

    std::span<const std::uint32_t>
    tile(int t) const {
        return std::span<const std::uint32_t>(indices).subspan(offsets[t],
                                                              offsets[t + 1] - offsets[t]);
    }
};

TileBins binSplats(std::span<const Splat2D> splats, int width, int height);

struct RenderTargets {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;    // interleaved RGB
    std::vector<double> depth;  // z-depth, 0 where invalid
    std::vector<double> normal; // camera-frame unit normal, 0 where uncovered
    std::vector<double> alpha;
    std::vector<std::uint8_t> depthValid;

    RenderTargets() = default;
    RenderTargets(int w, int h);
    std::size_t
    pixels() const {
        return static_cast<std::size_t>(width) * height;
    }
};

/// Upstream gradients, same layout as RenderTargets.
struct RenderGrads {
    std::vector<double> rgb;
    std::vector<double> depth;
    std::vector<double> normal;
    std::vector<double> alpha;

    RenderGrads() = default;
    RenderGrads(int w, int h);
};

/// Per-pixel forward state needed by the backward pass.
struct BlendState {
    bool valid = false;
    std::vector<double> rawNormal; // blended, unnormalized
    std::vector<double> distance;  // blended plane distance D
    std::vector<double> finalT;
    std::vector<std::uint32_t> contributors;

    void resize(std::size_t pixels);
};

/// Blends one patch. `order` must be sorted by (depth, id) (ContractViolation
/// otherwise). Writes only the patch's pixels.
void rasterizePatch(const PatchRect &rect, std::span<const Splat2D> splats,
                    std::span<const std::uint32_t> order, const CameraView &view,
                    RenderTargets &targets, BlendState &state);

/// Backward of rasterizePatch. `local` has one entry per element of `order`
/// and receives (+=) the gradient of each splat from this patch.
void rasterizePatchBackward(const PatchRect &rect, std::span<const Splat2D> splats,
                            std::span<const std::uint32_t> order, const CameraView &view,
                            const RenderTargets &targets, const BlendState &state,
                            const RenderGrads &grads, std::span<SplatGrad> local);

/// Single-context convenience: bins, rasterizes every patch and returns the
/// targets (and optionally the blend state and bins).
RenderTargets renderSplats(std::span<const Splat2D> splats, const CameraView &view,
                           BlendState *state = nullptr, TileBins *bins = nullptr);

/// Single-context backward matching renderSplats; one gradient per splat,
/// merged over patches in row-major patch order.
std::vector<SplatGrad> renderSplatsBackward(std::span<const Splat2D> splats,
                                            const CameraView &view, const TileBins &bins,
                                            const RenderTargets &targets,
                                            const BlendState &state, const RenderGrads &grads);

} // namespace ph2
