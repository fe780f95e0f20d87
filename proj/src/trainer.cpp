// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/trainer.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace ph2 {

void
TrainConfig::validate() const {
    auto bad = [](const std::string &what) { fail(ErrorKind::InvalidInput, "train config: " + what); };
    if (totalSteps < 0) {
        bad("total steps must be >= 0");
    }
    if (!(0 <= step2Start && step2Start <= step3Start && step3Start <= totalSteps)) {
        bad("need 0 <= step2_start <= step3_start <= total_steps");
    }
    if (batchSize < 1) {
        bad("batch size must be >= 1");
    }
    if (workers < 1) {
        bad("workers must be >= 1");
    }
    if (step3Start < totalSteps && batchSize % 2 != 0) {
        bad("the geometric loss pairs views, so the batch size must be even");
    }
    if (growthInterval < 1 || growthThreshold < 0.0) {
        bad("growth interval must be >= 1 and threshold >= 0");
    }
    if (!(initialOpacity > 0.0 && initialOpacity < 1.0)) {
        bad("initial opacity must be in (0, 1)");
    }
    if (hidden < 1 || nccPatches < 0 || tauD < 0.0) {
        bad("hidden width, patch count and tau_d must be positive");
    }
    for (double lr : {lr.decoder, lr.embedding, lr.offsets, lr.scale}) {
        if (!(lr >= 0.0)) {
            bad("learning rates must be >= 0");
        }
    }
}

double
depthWeight(int iteration, const TrainConfig &config) {
    if (iteration < config.step2Start) {
        return 0.0;
    }
    const int span = config.totalSteps - config.step2Start;
    if (span <= 0) {
        return 1.0;
    }
    return 1.0 - static_cast<double>(iteration - config.step2Start) / span;
}

double
geoWeight(int iteration, const TrainConfig &config) {
    if (iteration < config.step3Start) {
        return 0.0;
    }
    const int span = config.totalSteps - config.step3Start;
    if (span <= 0) {
        return 0.0;
    }
    return 0.2 * static_cast<double>(iteration - config.step3Start) / span;
}

double
learningRateFactor(int iteration, const TrainConfig &config) {
    if (config.totalSteps <= 0) {
        return 1.0;
    }
    const double t = std::clamp(static_cast<double>(iteration) / config.totalSteps, 0.0, 1.0);
    const double f = config.lr.finalFraction;
    return f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::string
StepRecord::toJson() const {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["loss_rgb"] = rgb;
    j["loss_depth"] = depth;
    j["loss_geo"] = geo;
    j["loss_total"] = total;
    j["w_depth"] = depthWeight;
    j["w_geo"] = geoWeight;
    j["views"] = views;
    j["transfer_bytes"] = transferBytes;
    j["imbalance"] = imbalance;
    j["voxels"] = voxels;
    if (heldOutPsnr) {
        j["psnr_test"] = *heldOutPsnr;
    }
    return j.dump();
}

void
AdamState::resize(std::size_t n) {
    m.resize(n, 0.0);
    v.resize(n, 0.0);
}

void
AdamState::apply(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != grads.size() || m.size() != params.size()) {
        fail(ErrorKind::InvalidInput, "optimizer shape mismatch");
    }
    ++steps;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * grads[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
        params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEpsilon);
    }
}

DecoderInit
defaultDecoderInit(const SceneModel &scene, const TrainConfig &config) {
    DecoderInit init;
    init.seed = config.seed ^ 0xD1B54A32D192ED03ull;
    init.opacityBias = std::log(config.initialOpacity / (1.0 - config.initialOpacity));
    init.colorBias = 0.0;
    init.scaleBias = std::log(scene.cellSize(scene.levels() - 1));
    return init;
}

namespace {

int
voxelStateSize(int offsetsPerVoxel) {
    return kEmbeddingDim + 3 + 3 * offsetsPerVoxel;
}

} // namespace

Trainer::Trainer(SceneModel scene, const TrainConfig &config)
    : mConfig(config), mScene(std::move(scene)), mRenderer(config.workers, config.mode) {
    mConfig.validate();
    const DecoderParams params =
        initializeDecoder(mScene.offsetsPerVoxel(), mConfig.hidden, defaultDecoderInit(mScene, mConfig));
    mReplicas.assign(mConfig.workers, params);
    initialize();
}

Trainer::Trainer(const Snapshot &snapshot, const TrainConfig &config)
    : mConfig(config), mScene(snapshot.scene), mRenderer(config.workers, config.mode) {
    mConfig.validate();
    const DecoderParams params =
        snapshot.decoder ? *snapshot.decoder
                         : initializeDecoder(mScene.offsetsPerVoxel(), mConfig.hidden,
                                             defaultDecoderInit(mScene, mConfig));
    if (params.offsetsPerVoxel() != mScene.offsetsPerVoxel()) {
        fail(ErrorKind::InvalidInput, "snapshot decoder does not match the scene's offsets");
    }
    mReplicas.assign(mConfig.workers, params);
    initialize();
    mIteration = static_cast<int>(snapshot.iteration);

    auto findArray = [&](const std::string &name) -> const NamedArray * {
        for (const auto &a : snapshot.optimizer) {
            if (a.name == name) {
                return &a;
            }
        }
        return nullptr;
    };
    const NamedArray *dm = findArray("decoder.adam.m");
    const NamedArray *dv = findArray("decoder.adam.v");
    const NamedArray *ds = findArray("decoder.adam.steps");
    if (dm && dv && ds && dm->data.size() == params.size() && dv->data.size() == params.size()) {
        for (auto &adam : mDecoderAdam) {
            adam.m = dm->data;
            adam.v = dv->data;
            adam.steps = static_cast<std::uint64_t>(ds->data.at(0));
        }
    }
    const std::size_t dim = voxelStateSize(mScene.offsetsPerVoxel());
    for (int k = 0; k < mScene.levels(); ++k) {
        const std::string prefix = "voxel.L" + std::to_string(k) + ".adam.";
        const NamedArray *vm = findArray(prefix + "m");
        const NamedArray *vv = findArray(prefix + "v");
        const NamedArray *vs = findArray(prefix + "steps");
        const std::size_t count = mScene.level(k).size();
        if (!vm || !vv || !vs || vm->data.size() != count * dim || vs->data.size() != count) {
            continue;
        }
        for (std::size_t i = 0; i < count; ++i) {
            auto &st = mVoxelAdam[k][i].state;
            st.m.assign(vm->data.begin() + i * dim, vm->data.begin() + (i + 1) * dim);
            st.v.assign(vv->data.begin() + i * dim, vv->data.begin() + (i + 1) * dim);
            st.steps = static_cast<std::uint64_t>(vs->data[i]);
        }
    }
}

void
Trainer::initialize() {
    mAssignment = assignVoxels(mScene, mConfig.workers);
    applyOwnership(mScene, mAssignment);
    mSettings = decodeSettingsFor(mScene);
    mDecoderAdam.assign(mConfig.workers, AdamState{});
    for (auto &adam : mDecoderAdam) {
        adam.resize(mReplicas.front().size());
    }
    mVoxelAdam.clear();
    mGrads = GradientBuffers{};
    resizeVoxelState();
}

void
Trainer::resizeVoxelState() {
    const std::size_t dim = voxelStateSize(mScene.offsetsPerVoxel());
    mVoxelAdam.resize(mScene.levels());
    for (int k = 0; k < mScene.levels(); ++k) {
        const std::size_t count = mScene.level(k).size();
        auto &owners = mAssignment.owners[k];
        for (std::size_t i = owners.size(); i < count; ++i) {
            owners.push_back(ownerOf(static_cast<std::uint32_t>(i), mConfig.workers));
        }
        const std::size_t old = mVoxelAdam[k].size();
        mVoxelAdam[k].resize(count);
        for (std::size_t i = old; i < count; ++i) {
            mVoxelAdam[k][i].state.resize(dim);
        }
    }
    mGrads.reset(mScene, mReplicas.front(), reductionShards(mConfig.workers));
}

bool
Trainer::replicasConsistent() const {
    for (const auto &r : mReplicas) {
        if (!(r == mReplicas.front())) {
            return false;
        }
    }
    return true;
}

void
Trainer::checkFinite(const StepRecord &record, std::span<const FrameState> frames) const {
    if (std::isfinite(record.total)) {
        return;
    }
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << record.iteration << " (views";
    for (int v : record.views) {
        msg << ' ' << v;
    }
    msg << "): rgb=" << record.rgb << " depth=" << record.depth << " geo=" << record.geo;
    auto finite = [](const std::vector<double> &b) {
        return std::all_of(b.begin(), b.end(), [](double x) { return std::isfinite(x); });
    };
    for (const auto &f : frames) {
        const std::pair<const char *, const std::vector<double> *> buffers[] = {
            {"rgb", &f.targets.rgb},
            {"depth", &f.targets.depth},
            {"normal", &f.targets.normal},
            {"alpha", &f.targets.alpha}};
        for (const auto &[name, buf] : buffers) {
            if (!finite(*buf)) {
                msg << "; offending buffer: view " << f.view.id << ' ' << name;
            }
        }
    }
    fail(ErrorKind::NumericalError, msg.str());
}

StepRecord
Trainer::step(std::span<const TrainingView> batch) {
    if (batch.empty()) {
        fail(ErrorKind::InvalidInput, "training step needs at least one view");
    }
    StepRecord rec;
    rec.iteration = mIteration;
    rec.depthWeight = depthWeight(mIteration, mConfig);
    rec.geoWeight = geoWeight(mIteration, mConfig);
    for (const auto &v : batch) {
        rec.views.push_back(v.view.id);
    }
    if (rec.geoWeight > 0.0 && batch.size() % 2 != 0) {
        fail(ErrorKind::InvalidInput, "geometric loss needs an even batch");
    }

    std::vector<FrameState> frames(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        frames[b].view = batch[b].view;
        mRenderer.prepare(frames[b], mScene, mAssignment, mReplicas, mSettings, true);
    }
    RoundStats stats = mRenderer.rasterize(frames);
    rec.transferBytes = stats.transferBytes;

    std::vector<RenderTargets> renders;
    std::vector<RenderGrads> grads;
    std::vector<Image> images;
    std::vector<CameraView> views;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        renders.push_back(std::move(frames[b].targets));
        grads.emplace_back(batch[b].view.width, batch[b].view.height);
        images.push_back(batch[b].image);
        views.push_back(batch[b].view);
    }
    rec.rgb = lossRgb(renders, images, grads, 1.0).value;
    if (rec.depthWeight > 0.0) {
        std::vector<DepthMap> priors;
        for (const auto &v : batch) {
            if (!v.prior) {
                fail(ErrorKind::StateError, "enhanced depth missing for view " +
                                                std::to_string(v.view.id) + " in step 2");
            }
            priors.push_back(*v.prior);
        }
        rec.depth = lossDepth(renders, priors, grads, rec.depthWeight).value;
    }
    if (rec.geoWeight > 0.0) {
        GeoOptions opts;
        opts.patchesPerPair = mConfig.nccPatches;
        opts.seed = mConfig.seed ^ (static_cast<std::uint64_t>(mIteration) * 0x9E3779B97F4A7C15ull);
        rec.geo = lossGeo(renders, views, grads, rec.geoWeight, opts).value;
    }
    rec.total = rec.rgb + rec.depthWeight * rec.depth + rec.geoWeight * rec.geo;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        frames[b].targets = std::move(renders[b]);
    }
    checkFinite(rec, frames);

    mGrads.clearStep();
    mRenderer.backward(frames, grads, mScene, mAssignment, mReplicas, mSettings, mGrads);

    // Decoder: pinned-order all-reduce, then every replica applies the same update.
    const DecoderParams reduced = allReduce(mGrads.decoder, Reduction::Sum);
    const double factor = learningRateFactor(mIteration, mConfig);
    WorkerPool pool(mConfig.workers, mConfig.mode);
    pool.run([&](int w) {
        mDecoderAdam[w].apply(mReplicas[w].values(), reduced.values(), mConfig.lr.decoder * factor);
    });
    if (!mReplicas.front().allFinite()) {
        fail(ErrorKind::NumericalError,
             "decoder parameters became non-finite at iteration " + std::to_string(mIteration));
    }

    // Voxel state: owners update their own voxels only.
    const int n = mScene.offsetsPerVoxel();
    const std::size_t dim = voxelStateSize(n);
    pool.run([&](int w) {
        std::vector<double> params(dim), g(dim);
        for (int k = 0; k < mScene.levels(); ++k) {
            auto &lvl = mScene.level(k);
            for (std::size_t i = 0; i < lvl.size(); ++i) {
                if (mAssignment.owners[k][i] != w || !mGrads.touched[k][i]) {
                    continue;
                }
                VoxelRecord &v = lvl[i];
                const VoxelGrad &vg = mGrads.voxels[k][i];
                AdamState &adam = mVoxelAdam[k][i].state;
                ++adam.steps;
                const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.steps));
                const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.steps));
                auto update = [&](std::size_t slot, double &param, double grad, double lr) {
                    adam.m[slot] = kAdamBeta1 * adam.m[slot] + (1.0 - kAdamBeta1) * grad;
                    adam.v[slot] = kAdamBeta2 * adam.v[slot] + (1.0 - kAdamBeta2) * grad * grad;
                    param -= lr * (adam.m[slot] / c1) / (std::sqrt(adam.v[slot] / c2) + kAdamEpsilon);
                };
                std::size_t slot = 0;
                for (int e = 0; e < kEmbeddingDim; ++e) {
                    update(slot++, v.embedding[e], vg.embedding[e], mConfig.lr.embedding * factor);
                }
                for (int a = 0; a < 3; ++a) {
                    // optimized in log space so the scale stays positive
                    double logScale = std::log(v.scale[a]);
                    update(slot++, logScale, vg.scale[a] * v.scale[a], mConfig.lr.scale * factor);
                    v.scale[a] = std::exp(logScale);
                }
                for (int j = 0; j < n; ++j) {
                    for (int a = 0; a < 3; ++a) {
                        update(slot++, v.offsets(j, a), vg.offsets(j, a), mConfig.lr.offsets * factor);
                    }
                }
            }
        }
    });

    const BalanceStats balance = balanceReport(mAssignment, stats.schedule, stats.workerSeconds,
                                               stats.patchSeconds, mRenderer.costModel(), mIteration);
    rec.imbalance = balance.imbalance;

    ++mIteration;
    if (mIteration % mConfig.growthInterval == 0 && mIteration <= mConfig.growthStop) {
        growAnchors(mConfig.growthThreshold);
    }
    rec.voxels = mScene.totalVoxels();
    return rec;
}

std::size_t
Trainer::growAnchors(double threshold) {
    std::size_t added = 0;
    const int n = mScene.offsetsPerVoxel();
    Rng rng(mConfig.seed ^ (0xA24BAED4963EE407ull * static_cast<std::uint64_t>(mIteration + 1)));
    for (int k = 0; k + 1 < mScene.levels(); ++k) {
        const std::size_t count = mGrads.observations[k].size();
        for (std::size_t i = 0; i < count; ++i) {
            const auto obs = mGrads.observations[k][i];
            if (obs == 0 || !(mGrads.meanGradNorm[k][i] / obs > threshold)) {
                continue;
            }
            const VoxelRecord parent = mScene.level(k)[i];
            Vec3i dir;
            for (int a = 0; a < 3; ++a) {
                dir[a] = parent.offsets.col(a).sum() >= 0.0 ? 1 : -1;
            }
            for (int dz = 0; dz < 2; ++dz) {
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const Vec3i grid = 2 * parent.grid + Vec3i(dx * dir.x(), dy * dir.y(), dz * dir.z());
                        if (mScene.find(k + 1, grid)) {
                            continue;
                        }
                        VoxelRecord child;
                        child.level = k + 1;
                        child.grid = grid;
                        initializeVoxel(child, mScene.cellSize(k + 1), n, rng);
                        child.embedding += parent.embedding;
                        child.owner = ownerOf(static_cast<std::uint32_t>(mScene.level(k + 1).size()),
                                              mConfig.workers);
                        mScene.append(std::move(child));
                        ++added;
                    }
                }
            }
        }
    }
    for (std::size_t k = 0; k < mGrads.meanGradNorm.size(); ++k) {
        std::fill(mGrads.meanGradNorm[k].begin(), mGrads.meanGradNorm[k].end(), 0.0);
        std::fill(mGrads.observations[k].begin(), mGrads.observations[k].end(), 0u);
    }
    if (added > 0) {
        resizeVoxelState();
    }
    return added;
}

RenderTargets
Trainer::render(const CameraView &view) const {
    return renderView(view, mScene, mAssignment, mReplicas.front());
}

Snapshot
Trainer::snapshot() const {
    Snapshot snap;
    snap.scene = mScene;
    snap.decoder = mReplicas.front();
    snap.iteration = static_cast<std::uint64_t>(mIteration);
    const auto &adam = mDecoderAdam.front();
    snap.optimizer.push_back({"decoder.adam.m", {adam.m.size()}, adam.m});
    snap.optimizer.push_back({"decoder.adam.v", {adam.v.size()}, adam.v});
    snap.optimizer.push_back({"decoder.adam.steps", {1}, {static_cast<double>(adam.steps)}});
    const std::size_t dim = voxelStateSize(mScene.offsetsPerVoxel());
    for (int k = 0; k < mScene.levels(); ++k) {
        const std::string prefix = "voxel.L" + std::to_string(k) + ".adam.";
        const std::size_t count = mScene.level(k).size();
        NamedArray m{prefix + "m", {count, dim}, {}};
        NamedArray v{prefix + "v", {count, dim}, {}};
        NamedArray s{prefix + "steps", {count}, {}};
        for (const auto &vm : mVoxelAdam[k]) {
            m.data.insert(m.data.end(), vm.state.m.begin(), vm.state.m.end());
            v.data.insert(v.data.end(), vm.state.v.begin(), vm.state.v.end());
            s.data.push_back(static_cast<double>(vm.state.steps));
        }
        snap.optimizer.push_back(std::move(m));
        snap.optimizer.push_back(std::move(v));
        snap.optimizer.push_back(std::move(s));
    }
    return snap;
}

std::vector<std::size_t>
pairByProximity(std::span<const CameraView> views) {
    std::vector<std::size_t> order;
    std::vector<bool> used(views.size(), false);
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (used[i]) {
            continue;
        }
        used[i] = true;
        order.push_back(i);
        std::size_t best = views.size();
        double bestDist = 0.0;
        for (std::size_t j = i + 1; j < views.size(); ++j) {
            const double d = (views[j].center() - views[i].center()).squaredNorm();
            if (!used[j] && (best == views.size() || d < bestDist)) {
                best = j;
                bestDist = d;
            }
        }
        if (best < views.size()) {
            used[best] = true;
            order.push_back(best);
        }
    }
    return order;
}

double
meanPsnr(const Trainer &trainer, std::span<const TrainingView> views) {
    if (views.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto &v : views) {
        sum += psnr(rgbImage(trainer.render(v.view)), v.image);
    }
    return sum / static_cast<double>(views.size());
}

RunResult
runTraining(Trainer &trainer, std::span<const TrainingView> views, const RunOptions &options) {
    const TrainConfig &config = trainer.config();
    if (views.size() < static_cast<std::size_t>(config.batchSize)) {
        fail(ErrorKind::InvalidInput, "dataset has fewer training views than the batch size");
    }
    RunResult result;
    if (options.checkpointDir) {
        std::filesystem::create_directories(*options.checkpointDir);
    }
    // Epoch e visits the views in a permutation seeded by (seed, e). The
    // position is derived from the iteration so resumed runs continue it.
    const std::size_t perEpoch = views.size();
    auto viewAt = [&](std::size_t position) {
        const std::size_t epoch = position / perEpoch;
        std::vector<std::size_t> order(perEpoch);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(config.seed + 0x5851F42D4C957F2Dull * (epoch + 1));
        for (std::size_t i = perEpoch; i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        return order[position % perEpoch];
    };

    std::vector<TrainingView> batch;
    std::vector<CameraView> cams;
    while (trainer.iteration() < config.totalSteps) {
        batch.clear();
        cams.clear();
        const std::size_t base = static_cast<std::size_t>(trainer.iteration()) * config.batchSize;
        for (int b = 0; b < config.batchSize; ++b) {
            cams.push_back(views[viewAt(base + b)].view);
        }
        for (std::size_t i : pairByProximity(cams)) {
            batch.push_back(views[viewAt(base + i)]);
        }
        StepRecord rec = trainer.step(batch);
        const bool last = trainer.iteration() == config.totalSteps;
        if (!options.heldOut.empty() &&
            (last || (config.evalInterval > 0 && trainer.iteration() % config.evalInterval == 0))) {
            rec.heldOutPsnr = meanPsnr(trainer, options.heldOut);
            result.heldOutPsnr = *rec.heldOutPsnr;
        }
        if (options.log) {
            *options.log << rec.toJson() << '\n';
        }
        if (options.checkpointDir && config.checkpointInterval > 0 &&
            trainer.iteration() % config.checkpointInterval == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06d.ph2", trainer.iteration());
            writeSnapshot(*options.checkpointDir / name, trainer.snapshot());
        }
        result.records.push_back(std::move(rec));
    }
    if (options.checkpointDir) {
        writeSnapshot(*options.checkpointDir / "final.ph2", trainer.snapshot());
    }
    return result;
}

} // namespace ph2
