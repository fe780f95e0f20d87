// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Worker ownership of voxels (stride sampling over the canonical Morton order)
// and patch scheduling across workers. Worker ids are 0-based.
#pragma once

#include <ph2/camera.h>
#include <ph2/scene.h>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ph2 {

inline constexpr int kPatchSize = 16;

/// Owner of the voxel at position `index` in its level's canonical order.
inline int
ownerOf(std::uint32_t index, int workers) {
    return static_cast<int>(index % static_cast<std::uint32_t>(workers));
}

struct WorkerAssignment {
    int workers = 1;
    std::vector<std::vector<int>> owners; // [level][index]

    int
    owner(VoxelRef ref) const {
        return owners.at(ref.level).at(ref.index);
    }
    /// Owned voxel count per worker on one level.
    std::vector<std::size_t> counts(int level) const;
};

/// Stride assignment: worker m owns indices {i : i mod M == m} on every level.
WorkerAssignment assignVoxels(const SceneModel &scene, int workers);
/// Writes the owners into the voxel records.
void applyOwnership(SceneModel &scene, const WorkerAssignment &assignment);

struct PatchRect {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;

    int
    pixels() const {
        return width * height;
    }
};

/// Row-major tiling; right and bottom patches may be ragged.
std::vector<PatchRect> tilePatches(int width, int height, int patchSize = kPatchSize);

/// Per-patch cost estimates as an exponential moving average of measured
/// seconds. Patches without history cost their pixel fraction of a full tile.
class PatchCostModel {
  public:
    explicit PatchCostModel(double beta = 0.3) : mBeta(beta) {}

    double estimate(int viewId, int patch, const PatchRect &rect) const;
    void update(int viewId, int patch, double seconds, double pixelFraction = 1.0);
    bool
    empty() const {
        return mEma.empty();
    }
    double
    beta() const {
        return mBeta;
    }

  private:
    double mBeta;
    std::map<std::pair<int, int>, double> mEma;
    double mFullPatchSeconds = 0.0;
    std::size_t mSamples = 0;
};

/// new = (1 - beta) * previous + beta * measured
inline double
emaUpdate(double previous, double measured, double beta) {
    return (1.0 - beta) * previous + beta * measured;
}

struct PatchTask {
    int viewSlot = 0; // position of the view in the scheduled list
    int viewId = 0;
    int patch = 0; // row-major patch index within the view
    PatchRect rect;
    double cost = 0.0;
    int worker = 0;
};

struct PatchSchedule {
    int workers = 1;
    std::vector<PatchTask> tasks; // ordered by (viewSlot, patch)
    std::vector<double> loads;    // estimated cost per worker

    double makespan() const;
    /// Largest worker share of the total estimated cost (1/M when perfect).
    double maxShare() const;
    double
    idealShare() const {
        return 1.0 / workers;
    }
};

/// Longest-processing-time greedy followed by pairwise move/swap refinement
/// of the most loaded worker. Ties go to the lowest worker id.
std::vector<int> balanceCosts(std::span<const double> costs, int workers);

PatchSchedule schedulePatches(std::span<const CameraView> views, int workers,
                              const PatchCostModel &costs);

struct WorkerBalance {
    int worker = 0;
    std::size_t voxels = 0;
    double seconds = 0.0;
};

struct BalanceStats {
    int epoch = 0;
    std::vector<WorkerBalance> workers;
    double imbalance = 1.0; // max / mean of measured seconds

    /// One JSON object per worker: epoch, worker, voxels, seconds, imbalance.
    std::string toJsonLines() const;
};

/// max / mean, or 1 when every value is zero.
double imbalanceRatio(std::span<const double> values);

/// Collects balance statistics for a finished epoch and feeds the measured
/// per-patch times (indexed like schedule.tasks) into the cost model.
BalanceStats balanceReport(const WorkerAssignment &assignment, const PatchSchedule &schedule,
                           std::span<const double> workerSeconds,
                           std::span<const double> patchSeconds, PatchCostModel &costs,
                           int epoch);

} // namespace ph2
