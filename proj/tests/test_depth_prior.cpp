// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.h"

#include <ph2/depth_prior.h>
#include <ph2/synthetic.h>

#include <gtest/gtest.h>

#include <cmath>

using namespace ph2;
using ph2::test::simpleCamera;

namespace {

DepthMap
constantDepth(int w, int h, double z) {
    DepthMap d(w, h);
    std::fill(d.depth.begin(), d.depth.end(), z);
    std::fill(d.valid.begin(), d.valid.end(), 1);
    return d;
}

/// Camera with identity rotation centred at `c`.
CameraView
shiftedCamera(const Vec3 &c, int w, int h, double f) {
    CameraView v = simpleCamera(w, h, f);
    v.translation = -c;
    return v;
}

void
expectKind(ErrorKind kind, const std::function<void()> &f) {
    try {
        f();
        FAIL() << "expected an error";
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), kind) << e.what();
    }
}

} // namespace

TEST(FitAffine, ExactExamples) {
    const std::vector<double> x1{1, 2, 3}, y1{2, 4, 6};
    AffineFit f = fitAffine(x1, y1);
    EXPECT_NEAR(f.scale, 2.0, 1e-12);
    EXPECT_NEAR(f.shift, 0.0, 1e-12);
    EXPECT_EQ(f.inliers, 3u);
    const std::vector<double> x2{1, 2}, y2{3, 5};
    f = fitAffine(x2, y2);
    EXPECT_NEAR(f.scale, 2.0, 1e-12);
    EXPECT_NEAR(f.shift, 1.0, 1e-12);
}

TEST(FitAffine, Errors) {
    const std::vector<double> one{1}, flat{2, 2, 2}, y{1, 2, 3};
    expectKind(ErrorKind::InsufficientData, [&] { fitAffine(one, one); });
    expectKind(ErrorKind::DegenerateFit, [&] { fitAffine(flat, y); });
}

TEST(FitAffine, NoiselessRecoveryIsExact) {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const double s = rng.uniform(0.1, 5.0), b = rng.uniform(-2, 2);
        std::vector<double> x, y;
        for (int i = 0; i < 200; ++i) {
            x.push_back(rng.uniform(0.5, 4.0));
            y.push_back(s * x.back() + b);
        }
        const AffineFit f = fitAffine(x, y);
        EXPECT_NEAR(f.scale, s, 1e-12 * s);
        EXPECT_NEAR(f.shift, b, 1e-11);
    }
}

TEST(FitAffine, RobustPassIgnoresOutliers) {
    Rng rng(8);
    std::vector<double> x, y;
    for (int i = 0; i < 300; ++i) {
        x.push_back(rng.uniform(1, 3));
        y.push_back(2.0 * x.back() + 0.4 + 1e-4 * rng.normal());
    }
    for (int i = 0; i < 60; ++i) {
        x.push_back(rng.uniform(1, 3));
        y.push_back(2.0 * 1.3 * x.back() + 0.4);
    }
    const AffineFit robust = fitAffine(x, y, true);
    EXPECT_NEAR(robust.scale, 2.0, 1e-3);
    EXPECT_NEAR(robust.shift, 0.4, 1e-3);
    EXPECT_LT(robust.inliers, x.size());
    const AffineFit plain = fitAffine(x, y, false);
    EXPECT_GT(std::abs(plain.scale - 2.0), 1e-2);
}

TEST(FitScaleShift, PlaneSceneRecoversInverseCorruption) {
    const SyntheticDataset d = makeSynthetic(presetSpec("plane"), 1);
    const double s = 1.0 / d.spec.corruption.scale;
    const double b = -d.spec.corruption.shift / d.spec.corruption.scale;
    EXPECT_DOUBLE_EQ(s, 2.0);
    EXPECT_DOUBLE_EQ(b, 0.4);
    for (std::size_t i = 0; i < d.views.size(); ++i) {
        const AffineFit f = fitScaleShift(d.monoDepth[i], d.views[i], d.points);
        EXPECT_NEAR(f.scale, s, 1e-2 * s) << "view " << i;
        EXPECT_NEAR(f.shift, b, 1e-2 * b) << "view " << i;
    }
}

// Sparse points lifted from pixel centres, so sampling the pseudo depth is
// exact and only the linear corruption remains.
TEST(FitScaleShift, NoiselessCorruptionIsRecoveredToMachinePrecision) {
    SyntheticSpec spec = presetSpec("plane");
    spec.corruption.noise = 0.0;
    spec.corruption.stripe = false;
    spec.trajectory.count = 4;
    const SyntheticDataset d = makeSynthetic(spec, 2);
    for (std::size_t i = 0; i < d.views.size(); ++i) {
        const CameraView &view = d.views[i];
        const DepthMap &gt = d.gtDepth[i];
        SparsePoints points;
        for (int y = 1; y < view.height; y += 3) {
            for (int x = 1; x < view.width; x += 3) {
                const std::size_t p = gt.index(x, y);
                if (gt.valid[p]) {
                    points.positions.push_back(
                        cameraToWorld(backproject(x, y, gt.depth[p], view), view));
                }
            }
        }
        ASSERT_GE(points.size(), kMinFitPoints);
        const AffineFit f = fitScaleShift(d.monoDepth[i], view, points);
        EXPECT_NEAR(f.scale, 2.0, 1e-9);
        EXPECT_NEAR(f.shift, 0.4, 1e-9);
    }
}

TEST(FitScaleShift, TooFewPointsAndFlatDepth) {
    const CameraView view = simpleCamera(16, 16, 16);
    SparsePoints points;
    for (int i = 0; i < 7; ++i) {
        points.positions.emplace_back(0.01 * i, 0, 2);
    }
    DepthMap mono = constantDepth(16, 16, 1.0);
    expectKind(ErrorKind::InsufficientData, [&] { fitScaleShift(mono, view, points); });
    points.positions.emplace_back(0.1, 0.1, 3);
    expectKind(ErrorKind::DegenerateFit, [&] { fitScaleShift(mono, view, points); });
}

TEST(ApplyAffine, MapsAndInvalidatesNonPositive) {
    DepthMap mono = constantDepth(2, 1, 1.0);
    mono.depth[1] = -1.0;
    const DepthMap out = applyAffine(mono, AffineFit{2.0, 0.5, 0});
    EXPECT_DOUBLE_EQ(out.depth[0], 2.5);
    EXPECT_EQ(out.valid[0], 1);
    EXPECT_EQ(out.valid[1], 0);
}

TEST(SampleDepth, BilinearAndFallback) {
    DepthMap d(2, 2);
    d.depth = {1, 2, 3, 4};
    d.valid = {1, 1, 1, 1};
    EXPECT_DOUBLE_EQ(sampleDepth(d, 0.5, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(sampleDepth(d, 1.0, 0.0), 2.0);
    EXPECT_TRUE(std::isnan(sampleDepth(d, -0.1, 0.0)));
    d.valid[3] = 0;
    EXPECT_DOUBLE_EQ(sampleDepth(d, 0.4, 0.4), 1.0);
    EXPECT_TRUE(std::isnan(sampleDepth(d, 0.9, 0.9)));
}

// Two cameras looking down +z at the plane z = Z, B shifted by tx along x.
// A pixel u lands at u - f tx / Z in B; with B's depth scaled by k it comes
// back at u - f tx / Z + f tx / (k Z), an error of f tx (1 - 1/k) / Z.
TEST(Reprojection, ExactPlaneAndAnalyticPerturbation) {
    const int w = 40, h = 24;
    const double f = 50.0, z = 2.0, tx = 0.2;
    const CameraView a = shiftedCamera(Vec3::Zero(), w, h, f);
    const CameraView b = shiftedCamera(Vec3(tx, 0, 0), w, h, f);
    const DepthMap da = constantDepth(w, h, z);
    DepthMap db = constantDepth(w, h, z);
    const int shift = static_cast<int>(f * tx / z); // 5 px

    auto e = reprojectionError(da, a, db, b);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double err = e[da.index(x, y)];
            if (x - shift >= 0) {
                EXPECT_NEAR(err, 0.0, 1e-9);
            } else {
                EXPECT_TRUE(std::isinf(err));
            }
        }
    }

    const double k = 1.1;
    const int lo = 15, hi = 25; // perturbed columns in B
    for (int y = 0; y < h; ++y) {
        for (int x = lo; x < hi; ++x) {
            db.depth[db.index(x, y)] *= k;
        }
    }
    const double expected = f * tx * (1.0 - 1.0 / k) / z;
    e = reprojectionError(da, a, db, b);
    for (int y = 0; y < h; ++y) {
        for (int x = shift; x < w; ++x) {
            const int xb = x - shift;
            const double err = e[da.index(x, y)];
            if (xb >= lo && xb < hi) {
                EXPECT_NEAR(err, expected, 1e-9) << x << "," << y;
            } else {
                EXPECT_NEAR(err, 0.0, 1e-9) << x << "," << y;
            }
        }
    }
}

TEST(Reprojection, OutOfFrustumIsInfinite) {
    const CameraView a = shiftedCamera(Vec3::Zero(), 16, 16, 20);
    const CameraView b = shiftedCamera(Vec3(50, 0, 0), 16, 16, 20);
    const auto e = reprojectionError(constantDepth(16, 16, 2), a, constantDepth(16, 16, 2), b);
    for (double x : e) {
        EXPECT_TRUE(std::isinf(x));
    }
}

TEST(Reprojection, SymmetricOnSmoothScene) {
    const SyntheticDataset d = makeSynthetic(presetSpec("sphere"), 1);
    int compared = 0;
    for (std::size_t ia = 0; ia < d.views.size(); ++ia) {
        const auto near = nearbyViews(d.views, ia, 1);
        ASSERT_FALSE(near.empty());
        const std::size_t ib = near[0];
        const CameraView &a = d.views[ia], &b = d.views[ib];
        const auto eab = reprojectionError(d.gtDepth[ia], a, d.gtDepth[ib], b);
        const auto eba = reprojectionError(d.gtDepth[ib], b, d.gtDepth[ia], a);
        for (int y = 0; y < a.height; ++y) {
            for (int x = 0; x < a.width; ++x) {
                const std::size_t i = d.gtDepth[ia].index(x, y);
                if (!std::isfinite(eab[i])) {
                    continue;
                }
                const Vec3 world = cameraToWorld(backproject(x, y, d.gtDepth[ia].depth[i], a), a);
                const Vec3 uv = project(worldToCamera(world, b), b);
                const int xb = static_cast<int>(std::lround(uv.x()));
                const int yb = static_cast<int>(std::lround(uv.y()));
                if (xb < 0 || yb < 0 || xb >= b.width || yb >= b.height) {
                    continue;
                }
                const double back = eba[d.gtDepth[ib].index(xb, yb)];
                if (!std::isfinite(back)) {
                    continue;
                }
                // Smooth interior only: both round trips stay sub-pixel.
                if (eab[i] > 0.5 || back > 0.5) {
                    continue;
                }
                EXPECT_LT(std::abs(eab[i] - back), 0.5);
                ++compared;
            }
        }
    }
    EXPECT_GT(compared, 1000);
}

TEST(NearbyViews, NearestAgreeingCameras) {
    std::vector<CameraView> views;
    for (double x : {0.0, 1.0, 0.3, 5.0}) {
        views.push_back(shiftedCamera(Vec3(x, 0, 0), 8, 8, 8));
    }
    CameraView back = shiftedCamera(Vec3(0.1, 0, 0), 8, 8, 8);
    back.rotation = Eigen::AngleAxisd(M_PI, Vec3::UnitY()).toRotationMatrix();
    back.translation = -back.rotation * Vec3(0.1, 0, 0);
    views.push_back(back);
    EXPECT_EQ(nearbyViews(views, 0, 2), (std::vector<std::size_t>{2, 1}));
    EXPECT_EQ(nearbyViews(views, 0, 10).size(), 3u);
}

TEST(Enhance, PerfectDepthIsFullyValid) {
    const int w = 40, h = 24;
    const CameraView a = shiftedCamera(Vec3::Zero(), w, h, 50);
    const CameraView b = shiftedCamera(Vec3(0.2, 0, 0), w, h, 50);
    const CameraView c = shiftedCamera(Vec3(-0.2, 0, 0), w, h, 50);
    const DepthMap d = constantDepth(w, h, 2.0);
    const std::vector<NeighborDepth> nb{{&d, &b}, {&d, &c}};
    const EnhancedDepth e = enhanceDepth(d, a, nb, 1.0);
    EXPECT_DOUBLE_EQ(e.coverage(), 1.0);
    for (std::size_t i = 0; i < d.pixels(); ++i) {
        EXPECT_LE(e.error[i], 1.0);
    }
}

TEST(Enhance, ValidImpliesWithinThresholdAndMonotone) {
    const SyntheticDataset d = makeSynthetic(presetSpec("plane"), 3);
    std::vector<DepthMap> aligned;
    for (std::size_t i = 0; i < d.views.size(); ++i) {
        aligned.push_back(
            applyAffine(d.monoDepth[i], fitScaleShift(d.monoDepth[i], d.views[i], d.points)));
    }
    for (std::size_t i = 0; i < d.views.size(); i += 5) {
        std::vector<NeighborDepth> nb;
        for (auto j : nearbyViews(d.views, i)) {
            nb.push_back({&aligned[j], &d.views[j]});
        }
        std::vector<std::uint8_t> previous(aligned[i].pixels(), 0);
        for (double tau : {0.0, 0.1, 0.5, 1.0, 2.0, 8.0}) {
            const EnhancedDepth e = enhanceDepth(aligned[i], d.views[i], nb, tau);
            for (std::size_t p = 0; p < previous.size(); ++p) {
                if (e.depth.valid[p]) {
                    EXPECT_LE(e.error[p], tau);
                } else {
                    EXPECT_EQ(e.depth.depth[p], 0.0);
                }
                EXPECT_GE(e.depth.valid[p], previous[p]);
            }
            previous = e.depth.valid;
        }
    }
}

TEST(Enhance, ZeroThresholdKeepsOnlyExactPixels) {
    const int w = 40, h = 24;
    const CameraView a = shiftedCamera(Vec3::Zero(), w, h, 50);
    const CameraView b = shiftedCamera(Vec3(0.2, 0, 0), w, h, 50);
    const DepthMap da = constantDepth(w, h, 2.0);
    DepthMap db = constantDepth(w, h, 2.0);
    db.depth[db.index(10, 10)] += 1e-3;
    const std::vector<NeighborDepth> nb{{&db, &b}};
    const EnhancedDepth e = enhanceDepth(da, a, nb, 0.0);
    for (std::size_t i = 0; i < da.pixels(); ++i) {
        EXPECT_EQ(e.depth.valid[i] != 0, e.error[i] == 0.0);
    }
    EXPECT_EQ(e.depth.valid[da.index(15, 10)], 0);
    EXPECT_EQ(e.depth.valid[da.index(15, 12)], 1);
}

TEST(Enhance, NeedsANeighbor) {
    const DepthMap d = constantDepth(4, 4, 1);
    expectKind(ErrorKind::InvalidInput,
               [&] { enhanceDepth(d, simpleCamera(4, 4, 4), {}, 1.0); });
}

TEST(Enhance, PlaneStripeIsMasked) {
    const SyntheticDataset d = makeSynthetic(presetSpec("plane"), 1);
    std::vector<DepthMap> aligned;
    for (std::size_t i = 0; i < d.views.size(); ++i) {
        aligned.push_back(
            applyAffine(d.monoDepth[i], fitScaleShift(d.monoDepth[i], d.views[i], d.points)));
    }
    std::size_t stripe = 0, stripeMasked = 0, clean = 0, cleanMasked = 0;
    for (std::size_t i = 0; i < d.views.size(); ++i) {
        std::vector<NeighborDepth> nb;
        for (auto j : nearbyViews(d.views, i)) {
            nb.push_back({&aligned[j], &d.views[j]});
        }
        const EnhancedDepth e = enhanceDepth(aligned[i], d.views[i], nb, kDefaultTauD);
        for (std::size_t p = 0; p < e.depth.pixels(); ++p) {
            if (!d.gtDepth[i].valid[p]) {
                continue;
            }
            const bool masked = !e.depth.valid[p];
            if (d.stripeMask[i][p]) {
                ++stripe;
                stripeMasked += masked;
            } else {
                ++clean;
                cleanMasked += masked;
            }
        }
    }
    ASSERT_GT(stripe, 0u);
    EXPECT_GE(static_cast<double>(stripeMasked) / stripe, 0.95);
    EXPECT_LE(static_cast<double>(cleanMasked) / clean, 0.02);
}
