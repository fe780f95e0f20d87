// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Progressive multi-worker training. Step 1 trains on RGB alone, step 2 adds
// the filtered depth prior with a weight ramping 1 -> 0, step 3 adds the
// geometric loss ramping 0 -> 0.2. Decoder gradients are all-reduced in a
// pinned order; voxel state is updated only by its owner.
#pragma once

#include <ph2/decoder.h>
#include <ph2/depth_prior.h>
#include <ph2/image.h>
#include <ph2/losses.h>
#include <ph2/partition.h>
#include <ph2/pipeline.h>
#include <ph2/scene.h>
#include <ph2/snapshot.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ph2 {

struct LearningRates {
    double decoder = 2e-3;
    double embedding = 5e-3;
    double offsets = 1e-2;
    double scale = 5e-3;
    double finalFraction = 0.01; // cosine decay floor
};

struct TrainConfig {
    int totalSteps = 2000;
    int step2Start = 2000;
    int step3Start = 2000;
    int growthStop = 0; // growth runs while iteration < growthStop
    int growthInterval = 100;
    double growthThreshold = 2e-4;
    int batchSize = 4;
    int workers = 1;
    LearningRates lr;
    std::uint64_t seed = 0;
    double tauD = kDefaultTauD;
    int nccPatches = kNccPatchesPerPair;
    int hidden = kDefaultHidden;
    double initialOpacity = 0.1;
    int evalInterval = 0;       // 0: evaluate only at the end
    int checkpointInterval = 0; // 0: no intermediate checkpoints
    WorkerPool::Mode mode = WorkerPool::Mode::Auto;

    /// Throws InvalidInput when the schedule or sizes are out of contract.
    void validate() const;
};

/// Depth-prior weight: 0 before step2Start, then linear 1 -> 0 at totalSteps.
double depthWeight(int iteration, const TrainConfig &config);
/// Geometric weight: 0 before step3Start, then linear 0 -> 0.2 at totalSteps.
double geoWeight(int iteration, const TrainConfig &config);
/// Cosine decay from 1 to `finalFraction` over the run.
double learningRateFactor(int iteration, const TrainConfig &config);

struct TrainingView {
    CameraView view;
    Image image;                  // RGB in [0, 1]
    std::optional<DepthMap> prior; // enhanced depth, needed from step 2 on
};

struct StepRecord {
    int iteration = 0;
    double rgb = 0.0;
    double depth = 0.0;
    double geo = 0.0;
    double total = 0.0;
    double depthWeight = 0.0;
    double geoWeight = 0.0;
    std::vector<int> views;
    std::size_t transferBytes = 0;
    double imbalance = 1.0;
    std::size_t voxels = 0;
    std::optional<double> heldOutPsnr;

    std::string toJson() const;
};

/// Adam moments over a flat parameter vector.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t steps = 0;

    void resize(std::size_t n);
    void apply(std::span<double> params, std::span<const double> grads, double lr);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-15;

DecoderInit defaultDecoderInit(const SceneModel &scene, const TrainConfig &config);

class Trainer {
  public:
    /// Starts from freshly initialized decoder replicas.
    Trainer(SceneModel scene, const TrainConfig &config);
    /// Resumes from a snapshot (decoder and optimizer state when present).
    Trainer(const Snapshot &snapshot, const TrainConfig &config);

    int
    iteration() const {
        return mIteration;
    }
    const TrainConfig &
    config() const {
        return mConfig;
    }
    const SceneModel &
    scene() const {
        return mScene;
    }
    const WorkerAssignment &
    assignment() const {
        return mAssignment;
    }
    const DecoderParams &
    decoder(int worker = 0) const {
        return mReplicas.at(worker);
    }
    /// True when every replica holds bitwise the same parameters.
    bool replicasConsistent() const;

    /// One optimization step on an explicit batch (ordered as given; for the
    /// geometric loss, views (2i, 2i+1) form pair i).
    StepRecord step(std::span<const TrainingView> batch);

    /// Adds child voxels below voxels whose mean positional gradient over
    /// the last window exceeds the threshold. Returns the number added.
    std::size_t growAnchors(double threshold);

    /// Renders with replica 0 on all workers.
    RenderTargets render(const CameraView &view) const;

    Snapshot snapshot() const;

  private:
    void initialize();
    void resizeVoxelState();
    void checkFinite(const StepRecord &record, std::span<const FrameState> frames) const;

    struct VoxelMoments {
        AdamState state; // embedding (32), log scale (3), offsets (3n)
    };

    TrainConfig mConfig;
    SceneModel mScene;
    WorkerAssignment mAssignment;
    DistributedRenderer mRenderer;
    DecodeSettings mSettings;
    std::vector<DecoderParams> mReplicas;
    std::vector<AdamState> mDecoderAdam;
    std::vector<std::vector<VoxelMoments>> mVoxelAdam;
    GradientBuffers mGrads;
    int mIteration = 0;
};

/// Orders a batch so consecutive pairs are mutual nearest cameras (greedy).
std::vector<std::size_t> pairByProximity(std::span<const CameraView> views);

struct RunOptions {
    std::ostream *log = nullptr;                 // JSONL, one line per step
    std::optional<std::filesystem::path> checkpointDir;
    std::span<const TrainingView> heldOut;       // evaluated for PSNR
};

struct RunResult {
    std::vector<StepRecord> records;
    double heldOutPsnr = 0.0;
};

/// Runs the configured number of steps with seeded per-epoch shuffling.
/// Throws InvalidInput when the dataset has fewer views than the batch.
RunResult runTraining(Trainer &trainer, std::span<const TrainingView> views,
                      const RunOptions &options = {});

double meanPsnr(const Trainer &trainer, std::span<const TrainingView> views);

} // namespace ph2
