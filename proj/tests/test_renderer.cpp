// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.h"

#include <ph2/renderer.h>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace ph2;
using ph2::test::centralDifference;
using ph2::test::gradientsAgree;
using ph2::test::simpleCamera;

namespace {

GaussianAttr
makeGaussian(const Vec3 &mean, double opacity, const Vec3 &color, const Vec3 &scale,
             const Vec4 &rotation = Vec4(1, 0, 0, 0)) {
    GaussianAttr g;
    g.mean = mean;
    g.opacity = opacity;
    g.color = color;
    g.scale = scale;
    g.rotation = rotation;
    g.normal = gaussianNormal(scale, rotation);
    return g;
}

GaussianBatch
batchOf(const std::vector<GaussianAttr> &gs) {
    GaussianBatch b;
    for (std::size_t i = 0; i < gs.size(); ++i) {
        b.push(gs[i], i);
    }
    return b;
}

RenderTargets
renderBatch(const GaussianBatch &batch, const CameraView &view) {
    const auto splats = projectSplats(batch, view);
    return renderSplats(splats, view);
}

/// Flat Gaussians tiling the plane n.x + c = 0 around `anchor`.
std::vector<GaussianAttr>
planeGaussians(const Vec3 &normal, const Vec3 &anchor, double extent, double spacing) {
    Vec3 u = normal.unitOrthogonal();
    Vec3 v = normal.cross(u);
    Mat3 rot;
    rot.col(0) = u;
    rot.col(1) = v;
    rot.col(2) = normal;
    const Vec4 q = rotationToQuaternion(rot);
    std::vector<GaussianAttr> out;
    const int steps = static_cast<int>(extent / spacing);
    for (int i = -steps; i <= steps; ++i) {
        for (int j = -steps; j <= steps; ++j) {
            const Vec3 p = anchor + i * spacing * u + j * spacing * v;
            out.push_back(makeGaussian(p, 0.95, Vec3(0.5, 0.5, 0.5),
                                       Vec3(spacing, spacing, 1e-4 * spacing), q));
        }
    }
    return out;
}

} // namespace

TEST(Projection, IsotropicCovarianceOnAxis) {
    const CameraView view = simpleCamera(64, 64, 100.0);
    const double sigma = 0.05, z = 2.0;
    const auto g = makeGaussian(Vec3(0, 0, z), 0.5, Vec3::Zero(), Vec3::Constant(sigma));
    Splat2D s;
    ASSERT_TRUE(projectGaussian(g, view, s));
    const double expected = std::pow(100.0 * sigma / z, 2) + kLowPass;
    EXPECT_NEAR(s.cov(0, 0), expected, 1e-12);
    EXPECT_NEAR(s.cov(1, 1), expected, 1e-12);
    EXPECT_NEAR(s.cov(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(s.mean.x(), 32.0, 1e-12);
    EXPECT_NEAR(s.mean.y(), 32.0, 1e-12);
}

TEST(Projection, NormalFacesCameraAndPlaneDistance) {
    const CameraView view = simpleCamera(64, 64, 100.0);
    for (double sign : {-1.0, 1.0}) {
        // Flat along z: the normal is +-z in world, flipped to face the camera.
        const Vec4 q = sign > 0 ? Vec4(1, 0, 0, 0) : Vec4(0, 1, 0, 0);
        const auto g = makeGaussian(Vec3(0.1, 0.0, 2.0), 0.5, Vec3::Zero(), Vec3(0.1, 0.1, 0.001), q);
        Splat2D s;
        ASSERT_TRUE(projectGaussian(g, view, s));
        EXPECT_LT(s.normal.dot(s.camPos), 0.0);
        EXPECT_NEAR(s.normal.z(), -1.0, 1e-12);
        EXPECT_NEAR(std::abs(s.planeDistance), 2.0, 1e-12);
    }
}

TEST(Projection, BehindCameraIsCulled) {
    const CameraView view = simpleCamera(32, 32, 50.0);
    Splat2D s;
    EXPECT_FALSE(projectGaussian(makeGaussian(Vec3(0, 0, -1), 0.5, Vec3::Zero(), Vec3::Ones()), view, s));
    EXPECT_FALSE(projectGaussian(makeGaussian(Vec3(0, 0, 0.005), 0.5, Vec3::Zero(), Vec3::Ones()), view, s));
}

TEST(Rasterizer, SingleOpaqueSplat) {
    const CameraView view = simpleCamera(16, 16, 50.0);
    // Very large, fully saturated splat centered on pixel (8, 8).
    const auto g = makeGaussian(Vec3(0, 0, 2), 1.0, Vec3(1, 0, 0), Vec3(10, 10, 10));
    const auto t = renderBatch(batchOf({g}), view);
    const std::size_t px = 8 * 16 + 8;
    EXPECT_NEAR(t.rgb[3 * px], 0.99, 1e-12);
    EXPECT_NEAR(t.rgb[3 * px + 1], 0.0, 1e-12);
    EXPECT_NEAR(t.alpha[px], 0.99, 1e-12);
}

TEST(Rasterizer, TwoSplatOrder) {
    const CameraView view = simpleCamera(16, 16, 50.0);
    // Opacity 0.5 at the center pixel: the mean projects exactly to (8, 8).
    auto front = makeGaussian(Vec3(0, 0, 2), 0.5, Vec3(1, 1, 1), Vec3(5, 5, 5));
    auto back = makeGaussian(Vec3(0, 0, 3), 0.5, Vec3(0, 0, 0), Vec3(5, 5, 5));
    const std::size_t px = 8 * 16 + 8;
    EXPECT_NEAR(renderBatch(batchOf({front, back}), view).rgb[3 * px], 0.5, 1e-12);
    front.mean.z() = 3.0;
    back.mean.z() = 2.0;
    EXPECT_NEAR(renderBatch(batchOf({front, back}), view).rgb[3 * px], 0.25, 1e-12);
}

TEST(Rasterizer, FrontoParallelPlaneDepth) {
    const CameraView view = simpleCamera(48, 40, 60.0);
    const auto gs = planeGaussians(Vec3(0, 0, 1), Vec3(0, 0, 2), 2.5, 0.05);
    const auto t = renderBatch(batchOf(gs), view);
    int valid = 0;
    for (std::size_t px = 0; px < t.pixels(); ++px) {
        if (t.depthValid[px]) {
            ++valid;
            EXPECT_NEAR(t.depth[px], 2.0, 1e-6);
        }
    }
    EXPECT_EQ(valid, 48 * 40);
}

TEST(Rasterizer, ObliquePlaneDepthMatchesRayIntersection) {
    Rng rng(11);
    const CameraView view = simpleCamera(40, 32, 50.0);
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 n;
        do {
            n = Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), -1.0).normalized();
        } while (std::abs(n.z()) < 0.5);
        const Vec3 anchor(0.0, 0.0, rng.uniform(2.0, 4.0));
        const auto gs = planeGaussians(n, anchor, 5.0, 0.08);
        const auto t = renderBatch(batchOf(gs), view);
        for (int y = 0; y < view.height; ++y) {
            for (int x = 0; x < view.width; ++x) {
                const std::size_t px = y * view.width + x;
                ASSERT_TRUE(t.depthValid[px]);
                const Vec3 ray = view.pixelRay(x, y);
                const double zTrue = n.dot(anchor) / n.dot(ray);
                EXPECT_NEAR(t.depth[px] / zTrue, 1.0, 1e-5);
            }
        }
    }
}

TEST(Rasterizer, EnergyBoundAndPermutationInvariance) {
    Rng rng(3);
    const CameraView view = simpleCamera(40, 36, 40.0);
    std::vector<GaussianAttr> gs;
    for (int i = 0; i < 40; ++i) {
        gs.push_back(makeGaussian(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4)),
                                  rng.uniform(0.05, 1.0),
                                  Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                  Vec3(rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3)),
                                  ph2::test::randomUnitQuaternion(rng)));
    }
    GaussianBatch batch = batchOf(gs);
    const auto ref = renderBatch(batch, view);
    for (std::size_t px = 0; px < ref.pixels(); ++px) {
        EXPECT_GE(ref.alpha[px], 0.0);
        EXPECT_LE(ref.alpha[px], 1.0);
        for (int c = 0; c < 3; ++c) {
            EXPECT_LE(ref.rgb[3 * px + c], ref.alpha[px] + 1e-6);
        }
    }
    // Shuffle the batch but keep ids: the output must be bitwise identical.
    std::vector<std::size_t> perm(gs.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    GaussianBatch shuffled;
    for (auto i : perm) {
        shuffled.push(gs[i], i);
    }
    const auto out = renderBatch(shuffled, view);
    EXPECT_EQ(out.rgb, ref.rgb);
    EXPECT_EQ(out.depth, ref.depth);
    EXPECT_EQ(out.normal, ref.normal);
    EXPECT_EQ(out.alpha, ref.alpha);
}

TEST(Rasterizer, UnsortedInputIsAContractViolation) {
    const CameraView view = simpleCamera(16, 16, 50.0);
    const auto gs = std::vector<GaussianAttr>{
        makeGaussian(Vec3(0, 0, 2), 0.5, Vec3::Ones(), Vec3::Constant(0.2)),
        makeGaussian(Vec3(0, 0, 3), 0.5, Vec3::Ones(), Vec3::Constant(0.2))};
    const auto splats = projectSplats(batchOf(gs), view);
    const std::vector<std::uint32_t> order = {1, 0};
    RenderTargets t(16, 16);
    BlendState st;
    st.resize(t.pixels());
    try {
        rasterizePatch(PatchRect{0, 0, 16, 16}, splats, order, view, t, st);
        FAIL() << "expected ContractViolation";
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::ContractViolation);
    }
}

TEST(Rasterizer, EmptySceneIsBlack) {
    const CameraView view = simpleCamera(35, 20, 30.0);
    const auto t = renderBatch(GaussianBatch{}, view);
    for (std::size_t px = 0; px < t.pixels(); ++px) {
        EXPECT_EQ(t.alpha[px], 0.0);
        EXPECT_EQ(t.rgb[3 * px], 0.0);
        EXPECT_FALSE(t.depthValid[px]);
    }
}

TEST(Rasterizer, BackwardWithoutStateFails) {
    const CameraView view = simpleCamera(16, 16, 50.0);
    RenderTargets t(16, 16);
    BlendState st;
    RenderGrads g(16, 16);
    std::vector<SplatGrad> local;
    try {
        rasterizePatchBackward(PatchRect{0, 0, 16, 16}, {}, {}, view, t, st, g, local);
        FAIL() << "expected StateError";
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::StateError);
    }
}

namespace {

struct LossWeights {
    std::vector<double> rgb, depth, normal, alpha;
};

LossWeights
randomWeights(std::size_t pixels, Rng &rng) {
    LossWeights w;
    for (std::size_t i = 0; i < 3 * pixels; ++i) {
        w.rgb.push_back(rng.uniform(-1, 1));
        w.normal.push_back(rng.uniform(-1, 1));
    }
    for (std::size_t i = 0; i < pixels; ++i) {
        w.depth.push_back(rng.uniform(-1, 1));
        w.alpha.push_back(rng.uniform(-1, 1));
    }
    return w;
}

double
weightedLoss(const RenderTargets &t, const LossWeights &w) {
    double loss = 0.0;
    for (std::size_t i = 0; i < t.rgb.size(); ++i) {
        loss += w.rgb[i] * t.rgb[i] + w.normal[i] * t.normal[i];
    }
    for (std::size_t i = 0; i < t.depth.size(); ++i) {
        loss += w.depth[i] * t.depth[i] + w.alpha[i] * t.alpha[i];
    }
    return loss;
}

std::vector<GaussianAttrGrad>
analyticGrads(const std::vector<GaussianAttr> &gs, const CameraView &view, const LossWeights &w) {
    const auto batch = batchOf(gs);
    const auto splats = projectSplats(batch, view);
    BlendState state;
    TileBins bins;
    const auto targets = renderSplats(splats, view, &state, &bins);
    RenderGrads grads(view.width, view.height);
    grads.rgb = w.rgb;
    grads.normal = w.normal;
    grads.depth = w.depth;
    grads.alpha = w.alpha;
    const auto splatGrads = renderSplatsBackward(splats, view, bins, targets, state, grads);
    std::vector<GaussianAttrGrad> out(gs.size());
    for (std::size_t s = 0; s < splats.size(); ++s) {
        out[splats[s].source] = projectBackward(gs[splats[s].source], splats[s], view, splatGrads[s]);
    }
    return out;
}

} // namespace

TEST(RasterizerBackward, SingleSplatColorGradientIsAlpha) {
    const CameraView view = simpleCamera(16, 16, 50.0);
    const auto g = makeGaussian(Vec3(0, 0, 2), 0.6, Vec3(0.2, 0.3, 0.4), Vec3::Constant(5.0));
    LossWeights w;
    const std::size_t px = 8 * 16 + 8;
    w.rgb.assign(3 * 256, 0.0);
    w.normal.assign(3 * 256, 0.0);
    w.depth.assign(256, 0.0);
    w.alpha.assign(256, 0.0);
    w.rgb[3 * px] = 1.0;
    const auto grads = analyticGrads({g}, view, w);
    EXPECT_NEAR(grads[0].color[0], 0.6, 1e-12);
    EXPECT_EQ(grads[0].color[1], 0.0);
}

TEST(RasterizerBackward, PlaneDepthOffsetDerivative) {
    // Moving every splat of the plane z = 2 by e along its normal changes the
    // depth at pixel p by e / (N . K^-1 p).
    const CameraView view = simpleCamera(32, 32, 40.0);
    const auto gs = planeGaussians(Vec3(0, 0, 1), Vec3(0, 0, 2), 2.0, 0.1);
    const int x = 5, y = 27;
    LossWeights w;
    const std::size_t n = 32 * 32, px = y * 32 + x;
    w.rgb.assign(3 * n, 0.0);
    w.normal.assign(3 * n, 0.0);
    w.depth.assign(n, 0.0);
    w.alpha.assign(n, 0.0);
    w.depth[px] = 1.0;
    const auto grads = analyticGrads(gs, view, w);
    double total = 0.0;
    for (const auto &g : grads) {
        total += g.mean.z(); // offset along the (world) plane normal
    }
    const Vec3 blendedNormal(0, 0, -1); // camera-facing
    const double expected = -1.0 / blendedNormal.dot(view.pixelRay(x, y));
    EXPECT_NEAR(total, expected, 1e-6);
}

TEST(RasterizerBackward, FiniteDifferencesOnRandomScenes) {
    Rng rng(2024);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const CameraView view = simpleCamera(32, 32, 40.0);
        std::vector<GaussianAttr> gs;
        const int count = 2 + static_cast<int>(rng.below(4));
        for (int i = 0; i < count; ++i) {
            const double z = rng.uniform(2.0, 3.0);
            gs.push_back(makeGaussian(Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), z),
                                      rng.uniform(0.2, 0.7),
                                      Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                      Vec3(rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5), rng.uniform(0.05, 0.15)),
                                      ph2::test::randomUnitQuaternion(rng)));
        }
        const LossWeights w = randomWeights(32 * 32, rng);
        const auto analytic = analyticGrads(gs, view, w);
        auto loss = [&]() { return weightedLoss(renderBatch(batchOf(gs), view), w); };

        for (std::size_t i = 0; i < gs.size(); ++i) {
            auto check = [&](double &slot, double a, const std::string &what) {
                const double num = centralDifference(slot, loss, h);
                EXPECT_TRUE(gradientsAgree(a, num, 2e-3, 1e-6))
                    << what << " of gaussian " << i << " trial " << trial << ": analytic " << a
                    << " numeric " << num;
            };
            for (int a = 0; a < 3; ++a) {
                check(gs[i].mean[a], analytic[i].mean[a], "mean");
                check(gs[i].color[a], analytic[i].color[a], "color");
                check(gs[i].scale[a], analytic[i].scale[a], "scale");
            }
            check(gs[i].opacity, analytic[i].opacity, "opacity");
            for (int a = 0; a < 4; ++a) {
                check(gs[i].rotation[a], analytic[i].rotation[a], "rotation");
            }
        }
    }
}

TEST(Tiling, RaggedEdges) {
    const auto rects = tilePatches(35, 20);
    ASSERT_EQ(rects.size(), 6u);
    EXPECT_EQ(rects[0].width, 16);
    EXPECT_EQ(rects[2].width, 3);
    EXPECT_EQ(rects[0].height, 16);
    EXPECT_EQ(rects[3].height, 4);
    const auto bins = binSplats({}, 35, 20);
    EXPECT_EQ(bins.tilesX, 3);
    EXPECT_EQ(bins.tilesY, 2);
}
