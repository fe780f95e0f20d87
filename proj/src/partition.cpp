// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/partition.h>

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace ph2 {

std::vector<std::size_t>
WorkerAssignment::counts(int level) const {
    std::vector<std::size_t> out(workers, 0);
    for (int w : owners.at(level)) {
        ++out[w];
    }
    return out;
}

WorkerAssignment
assignVoxels(const SceneModel &scene, int workers) {
    if (workers < 1) {
        fail(ErrorKind::InvalidInput, "worker count must be >= 1");
    }
    WorkerAssignment out;
    out.workers = workers;
    out.owners.resize(scene.levels());
    for (int k = 0; k < scene.levels(); ++k) {
        const auto n = static_cast<std::uint32_t>(scene.level(k).size());
        auto &owners = out.owners[k];
        owners.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            owners[i] = ownerOf(i, workers);
        }
    }
    return out;
}

void
applyOwnership(SceneModel &scene, const WorkerAssignment &assignment) {
    for (int k = 0; k < scene.levels(); ++k) {
        auto &lvl = scene.level(k);
        for (std::size_t i = 0; i < lvl.size(); ++i) {
            lvl[i].owner = assignment.owners.at(k).at(i);
        }
    }
}

std::vector<PatchRect>
tilePatches(int width, int height, int patchSize) {
    std::vector<PatchRect> out;
    for (int y = 0; y < height; y += patchSize) {
        for (int x = 0; x < width; x += patchSize) {
            out.push_back({x, y, std::min(patchSize, width - x), std::min(patchSize, height - y)});
        }
    }
    return out;
}

double
PatchCostModel::estimate(int viewId, int patch, const PatchRect &rect) const {
    if (auto it = mEma.find({viewId, patch}); it != mEma.end()) {
        return it->second;
    }
    // Unmeasured patches: pixel fraction, in measured units once any exist.
    const double fraction = static_cast<double>(rect.pixels()) / (kPatchSize * kPatchSize);
    return mSamples > 0 ? fraction * (mFullPatchSeconds / mSamples) : fraction;
}

void
PatchCostModel::update(int viewId, int patch, double seconds, double pixelFraction) {
    if (pixelFraction > 0.0) {
        mFullPatchSeconds += seconds / pixelFraction;
        ++mSamples;
    }
    auto [it, inserted] = mEma.try_emplace({viewId, patch}, seconds);
    if (!inserted) {
        it->second = emaUpdate(it->second, seconds, mBeta);
    }
}

double
PatchSchedule::makespan() const {
    return loads.empty() ? 0.0 : *std::max_element(loads.begin(), loads.end());
}

double
PatchSchedule::maxShare() const {
    const double total = std::accumulate(loads.begin(), loads.end(), 0.0);
    return total > 0.0 ? makespan() / total : idealShare();
}

namespace {

int
mostLoaded(const std::vector<double> &loads) {
    return static_cast<int>(std::max_element(loads.begin(), loads.end()) - loads.begin());
}

// One improving move or swap between the most loaded worker and any other.
// Returns false when no exchange lowers that worker's load below the makespan.
bool
refineOnce(std::span<const double> costs, std::vector<int> &assign, std::vector<double> &loads) {
    const int a = mostLoaded(loads);
    const double top = loads[a];
    double best = top;
    int bestI = -1, bestJ = -1, bestB = -1;
    for (int b = 0; b < static_cast<int>(loads.size()); ++b) {
        if (b == a) {
            continue;
        }
        for (std::size_t i = 0; i < costs.size(); ++i) {
            if (assign[i] != a) {
                continue;
            }
            // move i from a to b
            double worst = std::max(loads[a] - costs[i], loads[b] + costs[i]);
            if (worst < best) {
                best = worst;
                bestI = static_cast<int>(i);
                bestJ = -1;
                bestB = b;
            }
            for (std::size_t j = 0; j < costs.size(); ++j) {
                if (assign[j] != b || costs[j] >= costs[i]) {
                    continue;
                }
                const double delta = costs[i] - costs[j];
                worst = std::max(loads[a] - delta, loads[b] + delta);
                if (worst < best) {
                    best = worst;
                    bestI = static_cast<int>(i);
                    bestJ = static_cast<int>(j);
                    bestB = b;
                }
            }
        }
    }
    if (bestI < 0) {
        return false;
    }
    assign[bestI] = bestB;
    loads[a] -= costs[bestI];
    loads[bestB] += costs[bestI];
    if (bestJ >= 0) {
        assign[bestJ] = a;
        loads[bestB] -= costs[bestJ];
        loads[a] += costs[bestJ];
    }
    return true;
}

} // namespace

std::vector<int>
balanceCosts(std::span<const double> costs, int workers) {
    if (workers < 1) {
        fail(ErrorKind::InvalidInput, "worker count must be >= 1");
    }
    std::vector<std::size_t> order(costs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return costs[l] > costs[r]; });

    std::vector<int> assign(costs.size(), 0);
    std::vector<double> loads(workers, 0.0);
    for (std::size_t i : order) {
        const int w =
            static_cast<int>(std::min_element(loads.begin(), loads.end()) - loads.begin());
        assign[i] = w;
        loads[w] += costs[i];
    }
    if (workers > 1) {
        for (int iter = 0; iter < 4 * static_cast<int>(costs.size()) + 16; ++iter) {
            if (!refineOnce(costs, assign, loads)) {
                break;
            }
        }
    }
    return assign;
}

PatchSchedule
schedulePatches(std::span<const CameraView> views, int workers, const PatchCostModel &costs) {
    PatchSchedule schedule;
    schedule.workers = workers;
    for (int slot = 0; slot < static_cast<int>(views.size()); ++slot) {
        const auto &view = views[slot];
        const auto rects = tilePatches(view.width, view.height);
        for (int p = 0; p < static_cast<int>(rects.size()); ++p) {
            PatchTask task;
            task.viewSlot = slot;
            task.viewId = view.id;
            task.patch = p;
            task.rect = rects[p];
            task.cost = costs.estimate(view.id, p, rects[p]);
            schedule.tasks.push_back(task);
        }
    }
    std::vector<double> taskCosts;
    taskCosts.reserve(schedule.tasks.size());
    for (const auto &t : schedule.tasks) {
        taskCosts.push_back(t.cost);
    }
    const auto assign = balanceCosts(taskCosts, workers);
    schedule.loads.assign(workers, 0.0);
    for (std::size_t i = 0; i < schedule.tasks.size(); ++i) {
        schedule.tasks[i].worker = assign[i];
        schedule.loads[assign[i]] += schedule.tasks[i].cost;
    }
    return schedule;
}

double
imbalanceRatio(std::span<const double> values) {
    if (values.empty()) {
        return 1.0;
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    if (!(mean > 0.0)) {
        return 1.0;
    }
    return *std::max_element(values.begin(), values.end()) / mean;
}

std::string
BalanceStats::toJsonLines() const {
    std::ostringstream out;
    for (const auto &w : workers) {
        nlohmann::json j = {{"epoch", epoch},
                            {"worker", w.worker},
                            {"voxels", w.voxels},
                            {"seconds", w.seconds},
                            {"imbalance", imbalance}};
        out << j.dump() << '\n';
    }
    return out.str();
}

BalanceStats
balanceReport(const WorkerAssignment &assignment, const PatchSchedule &schedule,
              std::span<const double> workerSeconds, std::span<const double> patchSeconds,
              PatchCostModel &costs, int epoch) {
    if (static_cast<int>(workerSeconds.size()) != assignment.workers) {
        fail(ErrorKind::InvalidInput, "one measured time per worker is required");
    }
    BalanceStats stats;
    stats.epoch = epoch;
    stats.workers.resize(assignment.workers);
    for (int w = 0; w < assignment.workers; ++w) {
        stats.workers[w].worker = w;
        stats.workers[w].seconds = workerSeconds[w];
    }
    for (const auto &owners : assignment.owners) {
        for (int w : owners) {
            ++stats.workers[w].voxels;
        }
    }
    stats.imbalance = imbalanceRatio(workerSeconds);
    if (!patchSeconds.empty()) {
        if (patchSeconds.size() != schedule.tasks.size()) {
            fail(ErrorKind::InvalidInput, "one measured time per scheduled patch is required");
        }
        for (std::size_t i = 0; i < schedule.tasks.size(); ++i) {
            const auto &task = schedule.tasks[i];
            costs.update(task.viewId, task.patch, patchSeconds[i],
                         static_cast<double>(task.rect.pixels()) / (kPatchSize * kPatchSize));
        }
    }
    return stats;
}

} // namespace ph2
