// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes with known answers. Textured primitives are covered with
// flat Gaussians and rendered by the project's own rasterizer; depth comes
// from exact ray casting, and the pseudo-depth maps carry a planted affine
// distortion, noise and a corrupted stripe.
#pragma once

#include <ph2/camera.h>
#include <ph2/dataset.h>
#include <ph2/image.h>
#include <ph2/renderer.h>
#include <ph2/scene.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ph2 {

enum class PrimitiveKind { Plane, Box, Sphere };
enum class TextureKind { Solid, Checker, Noise };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Plane;
    Vec3 center = Vec3::Zero();
    Mat3 rotation = Mat3::Identity(); // local -> world
    /// Plane: half extents along local x and y. Box: half extents.
    /// Sphere: radius in x.
    Vec3 size = Vec3(0.5, 0.5, 0.5);
    TextureKind texture = TextureKind::Solid;
    Vec3 colorA = Vec3(0.8, 0.8, 0.8);
    Vec3 colorB = Vec3(0.2, 0.2, 0.2);
    double textureScale = 0.25;
};

enum class TrajectoryKind { Orbit, Grid, Sphere };

struct Trajectory {
    TrajectoryKind kind = TrajectoryKind::Orbit;
    int count = 8;
    Vec3 target = Vec3::Zero();
    double radius = 3.0;  // orbit radius, sphere radius
    double height = 1.5;  // orbit and grid height above target
    int columns = 4;      // grid
    double spacing = 0.5; // grid spacing
    double tilt = 0.0;    // grid: forward offset of the look-at point
};

struct DepthCorruption {
    /// pseudo = scale * ground truth + shift (+ noise). Alignment recovers
    /// the inverse map (1 / scale, -shift / scale).
    double scale = 0.5;
    double shift = -0.2;
    double noise = 1e-4; // pseudo-depth units
    bool stripe = true;
    double stripeWidth = 0.1; // fraction of the image width
    double stripeFactor = 1.3;
};

inline constexpr int kMaxSyntheticResolution = 1024;

struct SyntheticSpec {
    std::vector<Primitive> primitives;
    Trajectory trajectory;
    int width = 64;
    int height = 64;
    double focal = 60.0;
    double gaussianSpacing = 0.05;
    double gaussianOpacity = 0.95;
    double gaussianThickness = 0.05; // normal scale relative to the spacing
    DepthCorruption corruption;
    int sparsePoints = 2000;
    int testEvery = kDefaultTestEvery;

    /// Throws InvalidInput.
    void validate() const;
};

SyntheticSpec planeSceneSpec();
SyntheticSpec gridSceneSpec();
SyntheticSpec sphereSceneSpec();
SyntheticSpec tabletopSceneSpec();
/// "plane", "grid", "sphere" or "tabletop". Throws InvalidInput otherwise.
SyntheticSpec presetSpec(const std::string &name);

nlohmann::json specToJson(const SyntheticSpec &spec);
SyntheticSpec specFromJson(const nlohmann::json &doc);

/// Camera rotations are snapped to their quaternion (returned through
/// `quaternions`) so they survive a manifest round trip unchanged.
std::vector<CameraView> makeTrajectory(const SyntheticSpec &spec,
                                       std::vector<Vec4> *quaternions = nullptr);

/// Ray hit of the closest primitive: z-depth (pixel rays have unit z) and
/// the primitive index, or nullopt.
struct RayHit {
    double depth = 0.0;
    int primitive = -1;
    Vec3 point = Vec3::Zero();
};
std::optional<RayHit> castRay(std::span<const Primitive> primitives, const CameraView &view,
                              double u, double v);
DepthMap castDepth(std::span<const Primitive> primitives, const CameraView &view);

Vec3 textureColor(const Primitive &primitive, const Vec3 &worldPoint, std::uint64_t seed);

/// Flat Gaussians tiling every primitive surface.
GaussianBatch surfaceGaussians(const SyntheticSpec &spec, std::uint64_t seed);
/// Uniform samples of the primitive surfaces (area-weighted), textured.
SparsePoints sampleSurfaces(const SyntheticSpec &spec, std::uint64_t seed);
/// Distance from a point to the nearest primitive surface.
double surfaceDistance(std::span<const Primitive> primitives, const Vec3 &p);

RenderTargets renderGaussians(const GaussianBatch &batch, const CameraView &view);

struct SyntheticDataset {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
    std::vector<CameraView> views;
    std::vector<Vec4> quaternions;
    std::vector<Image> images;
    std::vector<DepthMap> gtDepth;
    std::vector<DepthMap> monoDepth;
    std::vector<std::vector<std::uint8_t>> stripeMask; // 1 where corrupted
    GaussianBatch gaussians;
    SparsePoints points;
};

/// Deterministic under the seed.
SyntheticDataset makeSynthetic(const SyntheticSpec &spec, std::uint64_t seed);

/// Writes images, depth maps, stripe masks, points and manifest.json into
/// `dir` and returns the manifest.
DatasetManifest writeSynthetic(const SyntheticDataset &data, const std::filesystem::path &dir);

} // namespace ph2
