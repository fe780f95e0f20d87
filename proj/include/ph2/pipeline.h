// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Multi-worker execution of one render/backward round. Every worker owns a
// shard of the voxels and a decoder replica. Owners decode their active voxels
// into fixed slots of the view's batch, the batch is gathered for the workers
// rendering each patch, patches are rasterized independently and their
// gradients merged in patch order. Results never depend on the worker count.
#pragma once

#include <ph2/decoder.h>
#include <ph2/partition.h>
#include <ph2/renderer.h>
#include <ph2/scene.h>
#include <ph2/worker_pool.h>

#include <cstddef>
#include <span>
#include <vector>

namespace ph2 {

/// Bytes sent per Gaussian when gathered on another worker: mean, opacity,
/// color, scale and rotation as float32.
inline constexpr std::size_t kGaussianWireBytes = 14 * sizeof(float);

/// Number of virtual reduction shards for decoder gradients. A fixed count
/// (independent of M) keeps the reduction tree identical for every M that
/// divides it.
int reductionShards(int workers);

/// Everything one view needs between forward and backward.
struct FrameState {
    CameraView view;
    std::vector<VoxelRef> active; // canonical order
    GaussianBatch batch;          // slot i * n + j holds Gaussian j of active[i]
    std::vector<DecodeCache> caches;
    std::vector<Splat2D> splats;
    TileBins bins;
    RenderTargets targets;
    BlendState state;
    std::size_t transferBytes = 0;
};

struct RoundStats {
    std::size_t transferBytes = 0;
    std::vector<double> workerSeconds;
    std::vector<double> patchSeconds; // aligned with schedule.tasks
    std::vector<std::size_t> activePerWorker;
    PatchSchedule schedule;
};

/// Gradient sinks for one step. Decoder gradients are kept per reduction
/// shard; voxel gradients live with the voxel (written only by its owner).
struct GradientBuffers {
    std::vector<DecoderParams> decoder;
    std::vector<std::vector<VoxelGrad>> voxels;       // [level][index]
    std::vector<std::vector<std::uint8_t>> touched;   // [level][index]
    std::vector<std::vector<double>> meanGradNorm;    // growth statistics
    std::vector<std::vector<std::uint32_t>> observations;

    void reset(const SceneModel &scene, const DecoderParams &shape, int shards);
    /// Zeroes the decoder shards and the voxel gradients marked as touched.
    void clearStep();
};

class DistributedRenderer {
  public:
    explicit DistributedRenderer(int workers, WorkerPool::Mode mode = WorkerPool::Mode::Auto);

    int
    workers() const {
        return mPool.size();
    }
    /// Simulated fault: gathering from this worker raises TransferError.
    void
    setUnreachable(int worker) {
        mUnreachable = worker;
    }
    PatchCostModel &
    costModel() {
        return mCosts;
    }

    /// Decodes the view's active voxels on their owners and gathers the batch.
    /// `replicas` holds one decoder per worker (or a single shared one).
    void prepare(FrameState &frame, const SceneModel &scene, const WorkerAssignment &assignment,
                 std::span<const DecoderParams> replicas, const DecodeSettings &settings,
                 bool keepCaches) const;

    /// Rasterizes every patch of every frame under one schedule.
    RoundStats rasterize(std::span<FrameState> frames) const;

    /// Merges patch gradients in patch order, runs the projection and decoder
    /// backward on the owners and accumulates into `grads`.
    void backward(std::span<FrameState> frames, std::span<const RenderGrads> upstream,
                  const SceneModel &scene, const WorkerAssignment &assignment,
                  std::span<const DecoderParams> replicas, const DecodeSettings &settings,
                  GradientBuffers &grads) const;

  private:
    WorkerPool mPool;
    PatchCostModel mCosts;
    int mUnreachable = -1;
    mutable PatchSchedule mLastSchedule;
};

/// Gathers the decoded Gaussians of every voxel active for the view.
GaussianBatch transferGaussians(const CameraView &view, const SceneModel &scene,
                                const WorkerAssignment &assignment, const DecoderParams &params,
                                std::size_t *transferBytes = nullptr, int unreachableWorker = -1);

/// Full forward render of one view with `workers` contexts.
RenderTargets renderView(const CameraView &view, const SceneModel &scene,
                         const WorkerAssignment &assignment, const DecoderParams &params,
                         RoundStats *stats = nullptr);

} // namespace ph2
