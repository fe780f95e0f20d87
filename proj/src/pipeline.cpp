// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/pipeline.h>

#include <chrono>
#include <string>

namespace ph2 {

int
reductionShards(int workers) {
    constexpr int kShards = 8;
    return kShards % workers == 0 ? kShards : workers;
}

void
GradientBuffers::reset(const SceneModel &scene, const DecoderParams &shape, int shards) {
    decoder.assign(shards, DecoderParams(shape.offsetsPerVoxel(), shape.hidden()));
    const int levels = scene.levels();
    voxels.resize(levels);
    touched.resize(levels);
    meanGradNorm.resize(levels);
    observations.resize(levels);
    for (int k = 0; k < levels; ++k) {
        const std::size_t count = scene.level(k).size();
        voxels[k].resize(count, VoxelGrad(scene.offsetsPerVoxel()));
        touched[k].resize(count, 0);
        meanGradNorm[k].resize(count, 0.0);
        observations[k].resize(count, 0);
    }
}

void
GradientBuffers::clearStep() {
    for (auto &d : decoder) {
        d.setZero();
    }
    for (std::size_t k = 0; k < voxels.size(); ++k) {
        for (std::size_t i = 0; i < voxels[k].size(); ++i) {
            if (touched[k][i]) {
                voxels[k][i].setZero();
                touched[k][i] = 0;
            }
        }
    }
}

DistributedRenderer::DistributedRenderer(int workers, WorkerPool::Mode mode)
    : mPool(workers, mode) {}

namespace {

const DecoderParams &
replicaFor(std::span<const DecoderParams> replicas, int worker) {
    if (replicas.empty()) {
        fail(ErrorKind::StateError, "no decoder replica available");
    }
    return replicas[static_cast<std::size_t>(worker) % replicas.size()];
}

double
secondsSince(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

void
DistributedRenderer::prepare(FrameState &frame, const SceneModel &scene,
                             const WorkerAssignment &assignment,
                             std::span<const DecoderParams> replicas,
                             const DecodeSettings &settings, bool keepCaches) const {
    if (assignment.workers != workers()) {
        fail(ErrorKind::InvalidInput, "assignment worker count differs from the renderer's");
    }
    const int n = scene.offsetsPerVoxel();
    frame.active = activeVoxels(scene, frame.view);
    const std::size_t count = frame.active.size();

    GaussianBatch &batch = frame.batch;
    batch.gaussians.assign(count * n, GaussianAttr{});
    batch.ids.resize(count * n);
    batch.sources.resize(count * n);
    batch.owners.resize(count * n);
    frame.caches.assign(keepCaches ? count : 0, DecodeCache{});

    const Vec3 center = frame.view.center();
    mPool.run([&](int worker) {
        const DecoderParams &params = replicaFor(replicas, worker);
        for (std::size_t i = 0; i < count; ++i) {
            const VoxelRef ref = frame.active[i];
            if (assignment.owner(ref) != worker) {
                continue;
            }
            std::span<GaussianAttr> slots(batch.gaussians.data() + i * n, n);
            decodeVoxel(scene.voxel(ref), center, params, settings, slots,
                        keepCaches ? &frame.caches[i] : nullptr);
            for (int j = 0; j < n; ++j) {
                batch.ids[i * n + j] = gaussianId(ref, j);
                batch.sources[i * n + j] = ref;
                batch.owners[i * n + j] = worker;
            }
        }
    });
    if (mUnreachable >= 0) {
        for (std::size_t i = 0; i < count; ++i) {
            if (assignment.owner(frame.active[i]) == mUnreachable) {
                fail(ErrorKind::TransferError,
                     "worker " + std::to_string(mUnreachable) + " is unreachable during transfer");
            }
        }
    }

    frame.splats = projectSplats(batch, frame.view);
    frame.bins = binSplats(frame.splats, frame.view.width, frame.view.height);
}

RoundStats
DistributedRenderer::rasterize(std::span<FrameState> frames) const {
    std::vector<CameraView> views;
    views.reserve(frames.size());
    for (const auto &f : frames) {
        views.push_back(f.view);
    }
    RoundStats stats;
    stats.schedule = schedulePatches(views, workers(), mCosts);
    const auto &tasks = stats.schedule.tasks;
    stats.patchSeconds.assign(tasks.size(), 0.0);
    stats.workerSeconds.assign(workers(), 0.0);

    for (auto &f : frames) {
        f.targets = RenderTargets(f.view.width, f.view.height);
        f.state.resize(f.targets.pixels());
        f.transferBytes = 0;
    }

    mPool.run([&](int worker) {
        const auto begin = std::chrono::steady_clock::now();
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const PatchTask &task = tasks[t];
            if (task.worker != worker) {
                continue;
            }
            const auto start = std::chrono::steady_clock::now();
            FrameState &f = frames[task.viewSlot];
            rasterizePatch(task.rect, f.splats, f.bins.tile(task.patch), f.view, f.targets,
                           f.state);
            stats.patchSeconds[t] = secondsSince(start);
        }
        stats.workerSeconds[worker] = secondsSince(begin);
    });

    // Transfer accounting: a Gaussian is sent once to every worker other
    // than its owner that renders a patch it overlaps.
    std::vector<std::vector<int>> patchWorker(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
        patchWorker[f].assign(static_cast<std::size_t>(frames[f].bins.tilesX) *
                                  frames[f].bins.tilesY,
                              0);
    }
    for (const auto &task : tasks) {
        patchWorker[task.viewSlot][task.patch] = task.worker;
    }
    std::vector<std::uint8_t> seen;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        FrameState &frame = frames[f];
        const int tiles = frame.bins.tilesX * frame.bins.tilesY;
        seen.assign(frame.splats.size() * workers(), 0);
        for (int t = 0; t < tiles; ++t) {
            const int w = patchWorker[f][t];
            for (std::uint32_t s : frame.bins.tile(t)) {
                const int owner = frame.batch.owners[frame.splats[s].source];
                std::uint8_t &mark = seen[static_cast<std::size_t>(s) * workers() + w];
                if (w != owner && !mark) {
                    mark = 1;
                    frame.transferBytes += kGaussianWireBytes;
                }
            }
        }
        stats.transferBytes += frame.transferBytes;
    }

    stats.activePerWorker.assign(workers(), 0);
    for (const auto &f : frames) {
        if (f.active.empty()) {
            continue;
        }
        const std::size_t n = f.batch.size() / f.active.size();
        for (std::size_t i = 0; i < f.active.size(); ++i) {
            ++stats.activePerWorker[f.batch.owners[i * n]];
        }
    }
    mLastSchedule = stats.schedule;
    return stats;
}

void
DistributedRenderer::backward(std::span<FrameState> frames, std::span<const RenderGrads> upstream,
                              const SceneModel &scene, const WorkerAssignment &assignment,
                              std::span<const DecoderParams> replicas,
                              const DecodeSettings &settings, GradientBuffers &grads) const {
    if (upstream.size() != frames.size()) {
        fail(ErrorKind::InvalidInput, "one upstream gradient set per frame is required");
    }
    const auto &tasks = mLastSchedule.tasks;
    std::vector<std::vector<SplatGrad>> local(tasks.size());
    mPool.run([&](int worker) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const PatchTask &task = tasks[t];
            if (task.worker != worker) {
                continue;
            }
            FrameState &f = frames[task.viewSlot];
            const auto order = f.bins.tile(task.patch);
            local[t].assign(order.size(), SplatGrad{});
            rasterizePatchBackward(task.rect, f.splats, order, f.view, f.targets, f.state,
                                   upstream[task.viewSlot], local[t]);
        }
    });

    // Merge per-patch gradients in (view, patch) order; tasks are stored in
    // exactly that order, so the sum does not depend on who ran them.
    std::vector<std::vector<GaussianAttrGrad>> attrGrads(frames.size());
    {
        std::vector<std::vector<SplatGrad>> splatGrads(frames.size());
        for (std::size_t f = 0; f < frames.size(); ++f) {
            splatGrads[f].assign(frames[f].splats.size(), SplatGrad{});
        }
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const PatchTask &task = tasks[t];
            const auto order = frames[task.viewSlot].bins.tile(task.patch);
            auto &dst = splatGrads[task.viewSlot];
            for (std::size_t k = 0; k < order.size(); ++k) {
                dst[order[k]] += local[t][k];
            }
        }
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const FrameState &frame = frames[f];
            attrGrads[f].assign(frame.batch.size(), GaussianAttrGrad{});
            for (std::size_t s = 0; s < frame.splats.size(); ++s) {
                const Splat2D &splat = frame.splats[s];
                attrGrads[f][splat.source] = projectBackward(frame.batch.gaussians[splat.source],
                                                             splat, frame.view, splatGrads[f][s]);
            }
        }
    }

    const int shards = static_cast<int>(grads.decoder.size());
    const int n = scene.offsetsPerVoxel();
    mPool.run([&](int worker) {
        const DecoderParams &params = replicaFor(replicas, worker);
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const FrameState &frame = frames[f];
            if (frame.caches.size() != frame.active.size()) {
                fail(ErrorKind::StateError, "frame was prepared without decoder caches");
            }
            for (std::size_t i = 0; i < frame.active.size(); ++i) {
                const VoxelRef ref = frame.active[i];
                if (assignment.owner(ref) != worker) {
                    continue;
                }
                std::span<const GaussianAttrGrad> g(attrGrads[f].data() + i * n, n);
                DecoderParams &shard = grads.decoder[ref.index % static_cast<std::uint32_t>(shards)];
                decoderBackward(scene.voxel(ref), frame.caches[i], g, params, settings, shard,
                                grads.voxels[ref.level][ref.index]);
                grads.touched[ref.level][ref.index] = 1;
                double norm = 0.0;
                for (const auto &gj : g) {
                    norm += gj.mean.norm();
                }
                grads.meanGradNorm[ref.level][ref.index] += norm / n;
                ++grads.observations[ref.level][ref.index];
            }
        }
    });
}

GaussianBatch
transferGaussians(const CameraView &view, const SceneModel &scene,
                  const WorkerAssignment &assignment, const DecoderParams &params,
                  std::size_t *transferBytes, int unreachableWorker) {
    DistributedRenderer renderer(assignment.workers);
    renderer.setUnreachable(unreachableWorker);
    FrameState frame;
    frame.view = view;
    renderer.prepare(frame, scene, assignment, std::span<const DecoderParams>(&params, 1),
                     decodeSettingsFor(scene), false);
    if (transferBytes) {
        std::span<FrameState> frames(&frame, 1);
        *transferBytes = renderer.rasterize(frames).transferBytes;
    }
    return std::move(frame.batch);
}

RenderTargets
renderView(const CameraView &view, const SceneModel &scene, const WorkerAssignment &assignment,
           const DecoderParams &params, RoundStats *stats) {
    DistributedRenderer renderer(assignment.workers);
    FrameState frame;
    frame.view = view;
    renderer.prepare(frame, scene, assignment, std::span<const DecoderParams>(&params, 1),
                     decodeSettingsFor(scene), false);
    std::span<FrameState> frames(&frame, 1);
    RoundStats s = renderer.rasterize(frames);
    if (stats) {
        *stats = std::move(s);
    }
    return std::move(frame.targets);
}

} // namespace ph2
