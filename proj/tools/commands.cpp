// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include "commands.h"

#include <ph2/dataset.h>
#include <ph2/depth_prior.h>
#include <ph2/image_io.h>
#include <ph2/losses.h>
#include <ph2/mesh.h>
#include <ph2/pipeline.h>
#include <ph2/snapshot.h>
#include <ph2/synthetic.h>
#include <ph2/trainer.h>
#include <ph2/tsdf.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>

namespace ph2::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Values given on the command line, keyed like the config file.
class Flags {
  public:
    template <typename T>
    CLI::Option *
    add(CLI::App *app, const std::string &flag, const std::string &key, const std::string &help) {
        return app->add_option_function<T>(
            flag, [this, key](const T &v) { mValues[key] = v; }, help);
    }
    const json &
    values() const {
        return mValues;
    }

  private:
    json mValues = json::object();
};

json
configSection(const std::string &configPath, const char *section) {
    if (configPath.empty()) {
        return json::object();
    }
    const json doc = readJsonFile(configPath);
    if (!doc.is_object()) {
        fail(ErrorKind::InvalidInput, configPath + ": config must be an object");
    }
    return doc.value(section, json::object());
}

std::string
indexedName(std::size_t i, const char *suffix) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04zu%s", i, suffix);
    return buf;
}

DecoderParams
decoderFor(const Snapshot &snap) {
    if (snap.decoder) {
        return *snap.decoder;
    }
    const TrainConfig defaults;
    return initializeDecoder(snap.scene.offsetsPerVoxel(), defaults.hidden,
                             defaultDecoderInit(snap.scene, defaults));
}

DepthMap
renderedDepth(const RenderTargets &t) {
    DepthMap d(t.width, t.height);
    for (std::size_t i = 0; i < d.pixels(); ++i) {
        d.valid[i] = t.depthValid[i];
        d.depth[i] = t.depthValid[i] ? t.depth[i] : 0.0;
    }
    return d;
}

std::vector<std::size_t>
selectViews(const DatasetManifest &m, const std::vector<int> &explicitViews,
            const std::string &split) {
    std::vector<std::size_t> out;
    if (!explicitViews.empty()) {
        for (int v : explicitViews) {
            if (v < 0 || static_cast<std::size_t>(v) >= m.cameras.size()) {
                fail(ErrorKind::InvalidInput, "view " + std::to_string(v) + " is not in the manifest");
            }
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }
    if (split == "train") {
        return m.trainViews();
    }
    if (split == "test") {
        return m.testViews();
    }
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        out.push_back(i);
    }
    return out;
}

void
writeJson(const json &doc, const std::string &path, std::ostream &out) {
    if (path.empty()) {
        out << doc.dump(2) << '\n';
        return;
    }
    std::ofstream f(path);
    f << doc.dump(2) << '\n';
    if (!f) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string preset = "tabletop";
    std::string spec;
    std::uint64_t seed = 0;
    std::string out;
};

void
synth(const SynthArgs &a, std::ostream &out) {
    const SyntheticSpec spec = a.spec.empty() ? presetSpec(a.preset) : specFromJson(readJsonFile(a.spec));
    const SyntheticDataset data = makeSynthetic(spec, a.seed);
    const DatasetManifest m = writeSynthetic(data, a.out);
    out << json{{"manifest", (fs::path(a.out) / "manifest.json").string()},
                {"views", m.cameras.size()},
                {"gaussians", data.gaussians.size()},
                {"points", data.points.size()},
                {"depth_scale", spec.corruption.scale},
                {"depth_shift", spec.corruption.shift}}
               .dump()
        << '\n';
}

// ---------------------------------------------------------------- build

struct BuildArgs {
    std::string data;
    std::string out;
    std::string config;
    Flags flags;
};

void
build(const BuildArgs &a, std::ostream &out) {
    const json defaults = {{"voxel_size", 0.2}, {"levels", 3}, {"offsets", 5},
                           {"seed", 0},         {"lod_bias", 0.0}};
    const json cfg = layerConfig(defaults, configSection(a.config, "build"), a.flags.values());
    const Dataset d = ingest(a.data);
    BuildOptions opts;
    try {
        opts.voxelSize = cfg.at("voxel_size").get<double>();
        opts.levels = cfg.at("levels").get<int>();
        opts.offsetsPerVoxel = cfg.at("offsets").get<int>();
        opts.seed = cfg.at("seed").get<std::uint64_t>();
        opts.lodBias = cfg.at("lod_bias").get<double>();
    } catch (const json::exception &e) {
        fail(ErrorKind::InvalidInput, std::string("build config: ") + e.what());
    }
    opts.views = d.manifest.cameras;
    Snapshot snap;
    snap.scene = buildHierarchy(d.points, opts);
    writeSnapshot(a.out, snap);
    json levels = json::array();
    for (int k = 0; k < snap.scene.levels(); ++k) {
        levels.push_back(snap.scene.level(k).size());
    }
    out << json{{"scene", a.out}, {"voxels_per_level", levels}}.dump() << '\n';
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string scene;
    std::string out;
    std::string config;
    std::string prior = "auto";
    Flags flags;
};

void
train(const TrainArgs &a, std::ostream &out) {
    const json file = configSection(a.config, "train");
    const json merged = layerConfig(trainConfigToJson(TrainConfig{}), file, a.flags.values());
    const TrainConfig config = trainConfigFromJson(merged);
    const Dataset d = ingest(a.data);
    const Snapshot snap = readSnapshot(a.scene);

    PriorSource prior = PriorSource::None;
    if (a.prior == "enhanced" || (a.prior == "auto" && config.step2Start < config.totalSteps)) {
        prior = PriorSource::Enhanced;
    } else if (a.prior == "mono") {
        prior = PriorSource::Mono;
    } else if (a.prior != "none" && a.prior != "auto") {
        fail(ErrorKind::InvalidInput, "--prior must be auto, none, enhanced or mono");
    }
    const auto trainIds = d.manifest.trainViews();
    const auto testIds = d.manifest.testViews();
    const std::vector<TrainingView> views = loadViews(d.manifest, trainIds, prior);
    const std::vector<TrainingView> heldOut = loadViews(d.manifest, testIds, PriorSource::None);

    fs::create_directories(a.out);
    {
        std::ofstream resolved(fs::path(a.out) / "config.json");
        resolved << merged.dump(2) << '\n';
    }
    std::ofstream log(fs::path(a.out) / "log.jsonl");
    Trainer trainer(snap, config);
    RunOptions opts;
    opts.log = &log;
    opts.checkpointDir = fs::path(a.out);
    opts.heldOut = heldOut;
    const RunResult result = runTraining(trainer, views, opts);
    json summary = {{"steps", trainer.iteration()},
                    {"final", (fs::path(a.out) / "final.ph2").string()},
                    {"voxels", trainer.scene().totalVoxels()}};
    if (!heldOut.empty()) {
        summary["heldout_psnr"] = result.heldOutPsnr;
    }
    out << summary.dump() << '\n';
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string scene;
    std::string data;
    std::string out;
    std::vector<int> views;
    std::string split = "all";
    int workers = 1;
};

void
render(const RenderArgs &a, std::ostream &out) {
    const Snapshot snap = readSnapshot(a.scene);
    const DatasetManifest m = readManifest(a.data);
    if (a.workers < 1) {
        fail(ErrorKind::InvalidInput, "--workers must be >= 1");
    }
    const DecoderParams params = decoderFor(snap);
    const WorkerAssignment assignment = assignVoxels(snap.scene, a.workers);
    SceneModel scene = snap.scene;
    applyOwnership(scene, assignment);
    fs::create_directories(a.out);
    json rendered = json::array();
    for (std::size_t i : selectViews(m, a.views, a.split)) {
        const RenderTargets t = renderView(m.cameras[i], scene, assignment, params);
        writePng(rgbImage(t), fs::path(a.out) / indexedName(i, ".png"));
        writeDepth(renderedDepth(t), fs::path(a.out) / indexedName(i, "_depth.f32"));
        Image normal(t.width, t.height, 3);
        for (std::size_t p = 0; p < normal.data.size(); ++p) {
            normal.data[p] = 0.5 * (t.normal[p] + 1.0);
        }
        writePng(normal, fs::path(a.out) / indexedName(i, "_normal.png"));
        rendered.push_back(i);
    }
    out << json{{"rendered", rendered}, {"out", a.out}}.dump() << '\n';
}

// --------------------------------------------------------- enhance-depth

struct EnhanceArgs {
    std::string data;
    std::string out;
    double tauD = kDefaultTauD;
    int neighbors = 2;
    double minDot = 0.5;
};

void
enhance(const EnhanceArgs &a, std::ostream &out) {
    const fs::path manifestPath = a.data;
    Dataset d = ingest(manifestPath);
    DatasetManifest &m = d.manifest;
    const fs::path outDir = a.out.empty() ? m.root / "enhanced" : fs::path(a.out);
    fs::create_directories(outDir);

    std::vector<DepthMap> aligned(m.cameras.size());
    json report = json::array();
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        if (!m.files[i].monoDepth) {
            fail(ErrorKind::InvalidInput, "/cameras/" + std::to_string(i) + "/mono_depth: missing");
        }
        const DepthMap mono = readDepth(m.resolve(*m.files[i].monoDepth));
        const AffineFit fit = fitScaleShift(mono, m.cameras[i], d.points);
        aligned[i] = applyAffine(mono, fit);
        report.push_back({{"view", i}, {"scale", fit.scale}, {"shift", fit.shift}, {"inliers", fit.inliers}});
    }
    double coverage = 0.0;
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        std::vector<NeighborDepth> nbs;
        for (std::size_t j : nearbyViews(m.cameras, i, static_cast<std::size_t>(a.neighbors), a.minDot)) {
            nbs.push_back({&aligned[j], &m.cameras[j]});
        }
        const EnhancedDepth e = enhanceDepth(aligned[i], m.cameras[i], nbs, a.tauD);
        const fs::path file = outDir / indexedName(i, ".f32");
        writeDepth(e.depth, file);
        const fs::path rel = fs::relative(file, m.root);
        m.files[i].enhancedDepth = rel.empty() || rel.string().starts_with("..") ? file : rel;
        report[i]["coverage"] = e.coverage();
        coverage += e.coverage();
    }
    writeManifest(m, manifestPath);
    out << json{{"views", report}, {"mean_coverage", coverage / m.cameras.size()}}.dump() << '\n';
}

// ---------------------------------------------------------------- mesh

struct MeshArgs {
    std::string scene;
    std::string data;
    std::string out;
    std::string obj;
    std::string config;
    Flags flags;
};

void
mesh(const MeshArgs &a, std::ostream &out) {
    const json defaults = {{"voxel_size", kDefaultTsdfVoxel},
                           {"truncation", kDefaultTsdfTruncation},
                           {"max_voxels", kDefaultTsdfVoxelBudget},
                           {"coarsen", true},
                           {"workers", 1}};
    const json cfg = layerConfig(defaults, configSection(a.config, "mesh"), a.flags.values());
    TsdfOptions opts;
    try {
        opts.voxelSize = cfg.at("voxel_size").get<double>();
        opts.truncation = cfg.at("truncation").get<double>();
        opts.maxVoxels = cfg.at("max_voxels").get<std::size_t>();
        opts.coarsen = cfg.at("coarsen").get<bool>();
        opts.workers = cfg.at("workers").get<int>();
    } catch (const json::exception &e) {
        fail(ErrorKind::InvalidInput, std::string("mesh config: ") + e.what());
    }
    const Snapshot snap = readSnapshot(a.scene);
    const Dataset d = ingest(a.data);
    if (d.points.positions.empty()) {
        fail(ErrorKind::InsufficientData, "mesh bounds need at least one sparse point");
    }
    Vec3 lo = d.points.positions.front(), hi = lo;
    for (const auto &p : d.points.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    TsdfVolume volume = TsdfVolume::fromBounds(lo, hi, opts);
    const DecoderParams params = decoderFor(snap);
    const WorkerAssignment assignment = assignVoxels(snap.scene, 1);
    for (const auto &view : d.manifest.cameras) {
        volume.integrate(renderedDepth(renderView(view, snap.scene, assignment, params)), view);
    }
    const TriangleMesh result = volume.extractMesh();
    result.validate();
    writeMeshPly(result, a.out);
    if (!a.obj.empty()) {
        writeMeshObj(result, a.obj);
    }
    out << json{{"mesh", a.out},
                {"vertices", result.vertices.size()},
                {"triangles", result.triangles.size()},
                {"voxel_size", volume.voxelSize()}}
               .dump()
        << '\n';
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string images;
    std::string reference;
    std::string cloud;
    std::string referenceCloud;
    double threshold = 2.0 * kDefaultTsdfVoxel;
    std::string scene;
    std::string data;
    std::string out;
};

json
imageMetrics(const Image &a, const Image &b) {
    return {{"psnr", psnr(a, b)}, {"ssim", ssim(a, b)}};
}

void
evaluate(const EvalArgs &a, std::ostream &out) {
    json doc = json::object();
    if (!a.images.empty() || !a.reference.empty()) {
        if (a.images.empty() || a.reference.empty()) {
            fail(ErrorKind::InvalidInput, "--images and --reference go together");
        }
        std::vector<fs::path> names;
        for (const auto &e : fs::directory_iterator(a.images)) {
            if (e.path().extension() == ".png") {
                names.push_back(e.path().filename());
            }
        }
        std::sort(names.begin(), names.end());
        if (names.empty()) {
            fail(ErrorKind::InvalidInput, "no PNG images in " + a.images);
        }
        json list = json::array();
        double sp = 0.0, ss = 0.0;
        for (const auto &n : names) {
            const Image img = readPng(fs::path(a.images) / n);
            const Image ref = readPng(fs::path(a.reference) / n);
            json m = imageMetrics(img, ref);
            m["name"] = n.string();
            sp += m["psnr"].get<double>();
            ss += m["ssim"].get<double>();
            list.push_back(m);
        }
        doc["images"] = list;
        doc["mean_psnr"] = sp / names.size();
        doc["mean_ssim"] = ss / names.size();
    }
    if (!a.cloud.empty() || !a.referenceCloud.empty()) {
        if (a.cloud.empty() || a.referenceCloud.empty()) {
            fail(ErrorKind::InvalidInput, "--cloud and --reference-cloud go together");
        }
        const SparsePoints pred = readPoints(a.cloud);
        const SparsePoints gt = readPoints(a.referenceCloud);
        const CloudMetrics c = evalPointCloud(pred.positions, gt.positions, a.threshold);
        doc["precision"] = c.precision;
        doc["recall"] = c.recall;
        doc["f1"] = c.f1;
        doc["threshold"] = a.threshold;
    }
    if (!a.scene.empty() || !a.data.empty()) {
        if (a.scene.empty() || a.data.empty()) {
            fail(ErrorKind::InvalidInput, "--scene and --data go together");
        }
        const Snapshot snap = readSnapshot(a.scene);
        const DatasetManifest m = readManifest(a.data);
        const DecoderParams params = decoderFor(snap);
        const WorkerAssignment assignment = assignVoxels(snap.scene, 1);
        json list = json::array();
        double sp = 0.0, ss = 0.0;
        const auto ids = m.testViews().empty() ? m.trainViews() : m.testViews();
        for (std::size_t i : ids) {
            const RenderTargets t = renderView(m.cameras[i], snap.scene, assignment, params);
            const Image gt = readPng(m.resolve(m.files[i].image));
            json e = imageMetrics(rgbImage(t), gt);
            e["view"] = i;
            if (m.files[i].gtDepth) {
                const DepthMap ref = readDepth(m.resolve(*m.files[i].gtDepth));
                double err = 0.0;
                std::size_t n = 0;
                for (std::size_t p = 0; p < ref.pixels(); ++p) {
                    if (ref.valid[p] && t.depthValid[p]) {
                        err += std::abs(t.depth[p] - ref.depth[p]);
                        ++n;
                    }
                }
                e["depth_mae"] = n ? err / n : 0.0;
            }
            sp += e["psnr"].get<double>();
            ss += e["ssim"].get<double>();
            list.push_back(e);
        }
        doc["views"] = list;
        doc["mean_psnr"] = sp / ids.size();
        doc["mean_ssim"] = ss / ids.size();
    }
    if (doc.empty()) {
        fail(ErrorKind::InvalidInput, "eval needs --images/--reference, --cloud/--reference-cloud or --scene/--data");
    }
    writeJson(doc, a.out, out);
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string data;
    std::string scene;
    std::vector<int> workers = {1, 2, 4};
    std::string out;
};

void
bench(const BenchArgs &a, std::ostream &out) {
    const Snapshot snap = readSnapshot(a.scene);
    const DatasetManifest m = readManifest(a.data);
    const DecoderParams params = decoderFor(snap);
    json report = json::array();
    for (int workers : a.workers) {
        if (workers < 1) {
            fail(ErrorKind::InvalidInput, "worker counts must be >= 1");
        }
        SceneModel scene = snap.scene;
        const WorkerAssignment assignment = assignVoxels(scene, workers);
        applyOwnership(scene, assignment);
        std::size_t bytes = 0;
        std::vector<double> seconds(workers, 0.0);
        double activeImbalance = 1.0;
        for (const auto &view : m.cameras) {
            RoundStats stats;
            renderView(view, scene, assignment, params, &stats);
            bytes += stats.transferBytes;
            for (int w = 0; w < workers; ++w) {
                seconds[w] += stats.workerSeconds[w];
            }
            std::vector<double> active(stats.activePerWorker.begin(), stats.activePerWorker.end());
            activeImbalance = std::max(activeImbalance, imbalanceRatio(active));
        }
        json owned = json::array();
        for (int k = 0; k < scene.levels(); ++k) {
            std::vector<int> count(workers, 0);
            for (int o : assignment.owners[k]) {
                ++count[o];
            }
            owned.push_back(count);
        }
        report.push_back({{"workers", workers},
                          {"transfer_bytes", bytes},
                          {"imbalance", imbalanceRatio(seconds)},
                          {"active_imbalance_max", activeImbalance},
                          {"owned_per_level", owned},
                          {"worker_seconds", seconds}});
    }
    writeJson(json{{"bench", report}}, a.out, out);
}

} // namespace

int
run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"ph2: LoD-voxel Gaussian splatting on simulated workers"};
    app.require_subcommand(1);

    SynthArgs sa;
    auto *cSynth = app.add_subcommand("synth", "generate a synthetic dataset");
    cSynth->add_option("--preset", sa.preset, "plane, grid, sphere or tabletop");
    cSynth->add_option("--spec", sa.spec, "JSON scene spec (overrides --preset)");
    cSynth->add_option("--seed", sa.seed, "random seed");
    cSynth->add_option("--out", sa.out, "output directory")->required();

    BuildArgs ba;
    auto *cBuild = app.add_subcommand("build", "build the voxel hierarchy from sparse points");
    cBuild->add_option("--data", ba.data, "dataset manifest")->required();
    cBuild->add_option("--out", ba.out, "scene snapshot to write")->required();
    cBuild->add_option("--config", ba.config, "JSON config (\"build\" section)");
    ba.flags.add<double>(cBuild, "--voxel-size", "voxel_size", "coarsest voxel edge");
    ba.flags.add<int>(cBuild, "--levels", "levels", "LoD levels");
    ba.flags.add<int>(cBuild, "--offsets", "offsets", "Gaussians per voxel");
    ba.flags.add<std::uint64_t>(cBuild, "--seed", "seed", "random seed");
    ba.flags.add<double>(cBuild, "--lod-bias", "lod_bias", "LoD level bias");

    TrainArgs ta;
    auto *cTrain = app.add_subcommand("train", "progressive multi-worker training");
    cTrain->add_option("--data", ta.data, "dataset manifest")->required();
    cTrain->add_option("--scene", ta.scene, "scene snapshot or checkpoint")->required();
    cTrain->add_option("--out", ta.out, "output directory")->required();
    cTrain->add_option("--config", ta.config, "JSON config (\"train\" section)");
    cTrain->add_option("--prior", ta.prior, "depth prior: auto, none, enhanced or mono");
    ta.flags.add<int>(cTrain, "--steps", "total_steps", "total steps");
    ta.flags.add<int>(cTrain, "--step2", "step2_start", "first step with the depth loss");
    ta.flags.add<int>(cTrain, "--step3", "step3_start", "first step with the geometric loss");
    ta.flags.add<int>(cTrain, "--batch", "batch_size", "views per step");
    ta.flags.add<int>(cTrain, "--workers", "workers", "simulated workers");
    ta.flags.add<std::uint64_t>(cTrain, "--seed", "seed", "random seed");
    ta.flags.add<int>(cTrain, "--growth-stop", "growth_stop", "last step with anchor growth");
    ta.flags.add<int>(cTrain, "--eval-interval", "eval_interval", "held-out PSNR interval");
    ta.flags.add<int>(cTrain, "--checkpoint-interval", "checkpoint_interval", "checkpoint interval");

    RenderArgs ra;
    auto *cRender = app.add_subcommand("render", "render views of a scene");
    cRender->add_option("--scene", ra.scene, "scene snapshot or checkpoint")->required();
    cRender->add_option("--data", ra.data, "dataset manifest")->required();
    cRender->add_option("--out", ra.out, "output directory")->required();
    cRender->add_option("--views", ra.views, "comma-separated view indices")->delimiter(',');
    cRender->add_option("--split", ra.split, "all, train or test");
    cRender->add_option("--workers", ra.workers, "simulated workers");

    EnhanceArgs ea;
    auto *cEnhance = app.add_subcommand("enhance-depth", "align and filter mono depth");
    cEnhance->add_option("--data", ea.data, "dataset manifest (updated in place)")->required();
    cEnhance->add_option("--out", ea.out, "output directory (default <root>/enhanced)");
    cEnhance->add_option("--tau-d", ea.tauD, "re-projection threshold in pixels");
    cEnhance->add_option("--neighbors", ea.neighbors, "neighbour views per view");
    cEnhance->add_option("--min-dot", ea.minDot, "minimum viewing-direction agreement");

    MeshArgs ma;
    auto *cMesh = app.add_subcommand("mesh", "fuse rendered depth into a TSDF and extract a mesh");
    cMesh->add_option("--scene", ma.scene, "scene snapshot or checkpoint")->required();
    cMesh->add_option("--data", ma.data, "dataset manifest")->required();
    cMesh->add_option("--out", ma.out, "PLY mesh to write")->required();
    cMesh->add_option("--obj", ma.obj, "also write an OBJ mesh");
    cMesh->add_option("--config", ma.config, "JSON config (\"mesh\" section)");
    ma.flags.add<double>(cMesh, "--voxel-size", "voxel_size", "TSDF voxel size");
    ma.flags.add<double>(cMesh, "--truncation", "truncation", "TSDF truncation");
    ma.flags.add<std::size_t>(cMesh, "--max-voxels", "max_voxels", "TSDF voxel budget");
    ma.flags.add<int>(cMesh, "--workers", "workers", "integration slabs");
    ma.flags.add<bool>(cMesh, "--coarsen", "coarsen", "grow the voxel size to fit the budget (true/false)");

    EvalArgs va;
    auto *cEval = app.add_subcommand("eval", "image and geometry metrics as JSON");
    cEval->add_option("--images", va.images, "directory of rendered PNGs");
    cEval->add_option("--reference", va.reference, "directory of reference PNGs");
    cEval->add_option("--cloud", va.cloud, "predicted point cloud or mesh (PLY)");
    cEval->add_option("--reference-cloud", va.referenceCloud, "reference point cloud");
    cEval->add_option("--threshold", va.threshold, "F-score distance threshold");
    cEval->add_option("--scene", va.scene, "evaluate this scene on the held-out views");
    cEval->add_option("--data", va.data, "dataset manifest for --scene");
    cEval->add_option("--out", va.out, "write JSON here instead of stdout");

    BenchArgs ka;
    auto *cBench = app.add_subcommand("bench", "balance and transfer report per worker count");
    cBench->add_option("--data", ka.data, "dataset manifest")->required();
    cBench->add_option("--scene", ka.scene, "scene snapshot or checkpoint")->required();
    cBench->add_option("--workers", ka.workers, "comma-separated worker counts")->delimiter(',');
    cBench->add_option("--out", ka.out, "write JSON here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError &e) {
        err << e.what() << '\n';
        return 2;
    }

    try {
        if (*cSynth) synth(sa, out);
        else if (*cBuild) build(ba, out);
        else if (*cTrain) train(ta, out);
        else if (*cRender) render(ra, out);
        else if (*cEnhance) enhance(ea, out);
        else if (*cMesh) mesh(ma, out);
        else if (*cEval) evaluate(va, out);
        else if (*cBench) bench(ka, out);
    } catch (const Error &e) {
        err << e.what() << '\n';
        return exitCodeFor(e.kind());
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

int
run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    std::vector<const char *> argv{"ph2"};
    for (const auto &a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace ph2::cli
