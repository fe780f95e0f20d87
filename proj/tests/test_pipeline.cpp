// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.h"

#include <ph2/pipeline.h>
#include <ph2/synthetic.h>
#include <ph2/trainer.h>

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace ph2;

namespace {

struct Fixture {
    SyntheticDataset data;
    SceneModel scene;
    DecoderParams params;
};

const Fixture &
fixture() {
    static const Fixture f = [] {
        Fixture out;
        SyntheticSpec spec = presetSpec("tabletop");
        spec.width = 48;
        spec.height = 40;
        spec.trajectory.count = 6;
        out.data = makeSynthetic(spec, 3);
        BuildOptions opts;
        opts.voxelSize = 0.2;
        opts.levels = 3;
        opts.offsetsPerVoxel = 4;
        opts.seed = 3;
        opts.views = out.data.views;
        out.scene = buildHierarchy(out.data.points, opts);
        TrainConfig cfg;
        cfg.hidden = 16;
        out.params = initializeDecoder(4, cfg.hidden, defaultDecoderInit(out.scene, cfg));
        return out;
    }();
    return f;
}

} // namespace

TEST(Transfer, BatchHoldsEveryActiveGaussianInSlotOrder) {
    const Fixture &f = fixture();
    for (const auto &view : f.data.views) {
        const auto active = activeVoxels(f.scene, view);
        const GaussianBatch batch =
            transferGaussians(view, f.scene, assignVoxels(f.scene, 1), f.params);
        ASSERT_EQ(batch.size(), active.size() * 4);
        for (std::size_t i = 0; i < active.size(); ++i) {
            for (int j = 0; j < 4; ++j) {
                EXPECT_EQ(batch.ids[i * 4 + j], gaussianId(active[i], j));
            }
        }
    }
}

TEST(Transfer, IdentifierSetDoesNotDependOnWorkerCount) {
    const Fixture &f = fixture();
    for (const auto &view : f.data.views) {
        const GaussianBatch one =
            transferGaussians(view, f.scene, assignVoxels(f.scene, 1), f.params);
        std::set<std::uint64_t> reference(one.ids.begin(), one.ids.end());
        EXPECT_EQ(reference.size(), one.ids.size());
        for (int m : {2, 3, 4}) {
            const WorkerAssignment a = assignVoxels(f.scene, m);
            const GaussianBatch many = transferGaussians(view, f.scene, a, f.params);
            EXPECT_EQ(std::set<std::uint64_t>(many.ids.begin(), many.ids.end()), reference);
            for (std::size_t s = 0; s < many.size(); ++s) {
                EXPECT_EQ(many.owners[s], a.owner(many.sources[s]));
            }
        }
    }
}

TEST(Transfer, SingleWorkerSendsNothing) {
    const Fixture &f = fixture();
    std::size_t bytes = 1;
    transferGaussians(f.data.views[0], f.scene, assignVoxels(f.scene, 1), f.params, &bytes);
    EXPECT_EQ(bytes, 0u);
}

TEST(Transfer, BytesAreWholeGaussiansWithinBound) {
    const Fixture &f = fixture();
    const CameraView &view = f.data.views[0];
    std::size_t bytes = 0;
    const GaussianBatch batch =
        transferGaussians(view, f.scene, assignVoxels(f.scene, 4), f.params, &bytes);
    EXPECT_EQ(kGaussianWireBytes, 56u);
    EXPECT_EQ(bytes % kGaussianWireBytes, 0u);
    EXPECT_GT(bytes, 0u);
    EXPECT_LE(bytes, batch.size() * 3 * kGaussianWireBytes);
}

TEST(Transfer, UnreachableWorkerRaisesTransferError) {
    const Fixture &f = fixture();
    try {
        transferGaussians(f.data.views[0], f.scene, assignVoxels(f.scene, 4), f.params, nullptr,
                          2);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::TransferError);
    }
}

TEST(RenderView, BitwiseIdenticalAcrossWorkerCounts) {
    const Fixture &f = fixture();
    for (const auto &view : f.data.views) {
        const RenderTargets ref = renderView(view, f.scene, assignVoxels(f.scene, 1), f.params);
        double coverage = 0.0;
        for (double a : ref.alpha) {
            coverage += a;
        }
        EXPECT_GT(coverage, 0.0);
        for (int m : {2, 4}) {
            RoundStats stats;
            const RenderTargets out =
                renderView(view, f.scene, assignVoxels(f.scene, m), f.params, &stats);
            EXPECT_EQ(out.rgb, ref.rgb);
            EXPECT_EQ(out.depth, ref.depth);
            EXPECT_EQ(out.normal, ref.normal);
            EXPECT_EQ(out.alpha, ref.alpha);
            EXPECT_EQ(out.depthValid, ref.depthValid);
            EXPECT_EQ(stats.workerSeconds.size(), static_cast<std::size_t>(m));
        }
    }
}

TEST(RenderView, MatchesSingleContextRasterizer) {
    const Fixture &f = fixture();
    const CameraView &view = f.data.views[1];
    const GaussianBatch batch =
        transferGaussians(view, f.scene, assignVoxels(f.scene, 1), f.params);
    const RenderTargets direct = renderSplats(projectSplats(batch, view), view);
    const RenderTargets out = renderView(view, f.scene, assignVoxels(f.scene, 3), f.params);
    EXPECT_EQ(out.rgb, direct.rgb);
    EXPECT_EQ(out.depth, direct.depth);
}

TEST(Reduction, ShardCountIsFixed) {
    EXPECT_EQ(reductionShards(1), 8);
    EXPECT_EQ(reductionShards(4), 8);
    EXPECT_EQ(reductionShards(8), 8);
    EXPECT_GE(reductionShards(12), 12);
}
