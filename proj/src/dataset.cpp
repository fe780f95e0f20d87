// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/dataset.h>
#include <ph2/image_io.h>

#include <png.h>

#include <fstream>
#include <sstream>

namespace ph2 {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void
schemaError(const std::string &pointer, const std::string &what) {
    fail(ErrorKind::InvalidInput, (pointer.empty() ? "/" : pointer) + ": " + what);
}

const json &
field(const json &obj, const std::string &key, const std::string &pointer) {
    if (!obj.is_object()) {
        schemaError(pointer, "expected an object");
    }
    auto it = obj.find(key);
    if (it == obj.end()) {
        schemaError(pointer + "/" + key, "required field is missing");
    }
    return *it;
}

template <typename T>
T
as(const json &v, const std::string &pointer) {
    try {
        if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) {
                schemaError(pointer, "expected a number");
            }
        } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!v.is_number_integer()) {
                schemaError(pointer, "expected an integer");
            }
        }
        return v.get<T>();
    } catch (const json::exception &e) {
        schemaError(pointer, e.what());
    }
}

template <int N>
Eigen::Matrix<double, N, 1>
vecField(const json &obj, const std::string &key, const std::string &pointer) {
    const json &v = field(obj, key, pointer);
    const std::string p = pointer + "/" + key;
    if (!v.is_array() || v.size() != N) {
        schemaError(p, "expected an array of " + std::to_string(N) + " numbers");
    }
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) {
        out[i] = as<double>(v[i], p + "/" + std::to_string(i));
    }
    return out;
}

std::optional<fs::path>
optionalPath(const json &obj, const std::string &key, const std::string &pointer) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return std::nullopt;
    }
    return fs::path(as<std::string>(*it, pointer + "/" + key));
}

json
pathJson(const std::optional<fs::path> &p) {
    return p ? json(p->generic_string()) : json(nullptr);
}

// Image dimensions without decoding pixels.
std::pair<int, int>
imageSize(const fs::path &path) {
    if (path.extension() == ".png") {
        png_image png{};
        png.version = PNG_IMAGE_VERSION;
        if (!png_image_begin_read_from_file(&png, path.c_str())) {
            fail(ErrorKind::IoError, "cannot read PNG " + path.string() + ": " + png.message);
        }
        png_image_free(&png);
        return {static_cast<int>(png.width), static_cast<int>(png.height)};
    }
    const json meta = readJsonFile(fs::path(path.string() + ".json"));
    return {meta.value("width", 0), meta.value("height", 0)};
}

std::string
modeName(WorkerPool::Mode mode) {
    switch (mode) {
    case WorkerPool::Mode::Threads: return "threads";
    case WorkerPool::Mode::Inline: return "inline";
    default: return "auto";
    }
}

} // namespace

fs::path
DatasetManifest::resolve(const fs::path &p) const {
    return p.is_absolute() ? p : root / p;
}

std::vector<std::size_t>
DatasetManifest::trainViews() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        if (testEvery <= 0 || i % testEvery != 0) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t>
DatasetManifest::testViews() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; testEvery > 0 && i < cameras.size(); ++i) {
        if (i % testEvery == 0) {
            out.push_back(i);
        }
    }
    return out;
}

void
DatasetManifest::addCamera(CameraView view, ViewFiles viewFiles, std::optional<Vec4> quaternion) {
    const Vec4 q = quaternion ? *quaternion : rotationToQuaternion(view.rotation);
    view.rotation = quaternionToRotation(q);
    cameras.push_back(view);
    quaternions.push_back(q);
    files.push_back(std::move(viewFiles));
}

DatasetManifest
parseManifest(const json &doc, const fs::path &root) {
    DatasetManifest m;
    m.root = root;
    if (!doc.is_object()) {
        schemaError("", "manifest must be an object");
    }
    if (doc.contains("version") && as<int>(doc["version"], "/version") != 1) {
        schemaError("/version", "unsupported manifest version");
    }
    m.points = as<std::string>(field(doc, "points", ""), "/points");
    if (doc.contains("test_every")) {
        m.testEvery = as<int>(doc["test_every"], "/test_every");
        if (m.testEvery < 0) {
            schemaError("/test_every", "must be >= 0");
        }
    }
    if (doc.contains("synthetic")) {
        m.synthetic = doc["synthetic"];
    }
    const json &cams = field(doc, "cameras", "");
    if (!cams.is_array() || cams.empty()) {
        schemaError("/cameras", "expected a non-empty array");
    }
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string p = "/cameras/" + std::to_string(i);
        const json &c = cams[i];
        CameraView view;
        view.id = c.contains("id") ? as<int>(c["id"], p + "/id") : static_cast<int>(i);
        view.width = as<int>(field(c, "width", p), p + "/width");
        view.height = as<int>(field(c, "height", p), p + "/height");
        view.fx = as<double>(field(c, "fx", p), p + "/fx");
        view.fy = as<double>(field(c, "fy", p), p + "/fy");
        view.cx = as<double>(field(c, "cx", p), p + "/cx");
        view.cy = as<double>(field(c, "cy", p), p + "/cy");
        const Vec4 q = vecField<4>(c, "rotation", p);
        if (std::abs(q.norm() - 1.0) > 1e-6) {
            schemaError(p + "/rotation", "quaternion must have unit norm");
        }
        view.rotation = quaternionToRotation(q);
        view.translation = vecField<3>(c, "translation", p);
        try {
            view.validate();
        } catch (const Error &e) {
            schemaError(p, e.what());
        }
        ViewFiles files;
        files.image = as<std::string>(field(c, "image", p), p + "/image");
        files.monoDepth = optionalPath(c, "mono_depth", p);
        files.enhancedDepth = optionalPath(c, "enhanced_depth", p);
        files.gtDepth = optionalPath(c, "gt_depth", p);
        m.cameras.push_back(view);
        m.quaternions.push_back(q);
        m.files.push_back(files);
    }
    return m;
}

json
manifestToJson(const DatasetManifest &m) {
    json cams = json::array();
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        const CameraView &v = m.cameras[i];
        const Vec4 q = i < m.quaternions.size() ? m.quaternions[i] : rotationToQuaternion(v.rotation);
        cams.push_back({{"id", v.id},
                        {"width", v.width},
                        {"height", v.height},
                        {"fx", v.fx},
                        {"fy", v.fy},
                        {"cx", v.cx},
                        {"cy", v.cy},
                        {"rotation", {q[0], q[1], q[2], q[3]}},
                        {"translation", {v.translation[0], v.translation[1], v.translation[2]}},
                        {"image", m.files[i].image.generic_string()},
                        {"mono_depth", pathJson(m.files[i].monoDepth)},
                        {"enhanced_depth", pathJson(m.files[i].enhancedDepth)},
                        {"gt_depth", pathJson(m.files[i].gtDepth)}});
    }
    json doc = {{"version", 1},
                {"points", m.points.generic_string()},
                {"test_every", m.testEvery},
                {"cameras", cams}};
    if (!m.synthetic.is_null()) {
        doc["synthetic"] = m.synthetic;
    }
    return doc;
}

json
readJsonFile(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        fail(ErrorKind::InvalidInput, path.string() + ": " + e.what());
    }
}

DatasetManifest
readManifest(const fs::path &path) {
    return parseManifest(readJsonFile(path), path.parent_path());
}

void
writeManifest(const DatasetManifest &manifest, const fs::path &path) {
    std::ofstream out(path);
    // nlohmann prints the shortest round-trip form, so doubles survive exactly.
    out << manifestToJson(manifest).dump(2) << '\n';
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path.string());
    }
}

json
ValidationReport::toJson() const {
    return {{"ok", ok()}, {"missing", missing}, {"mismatched", mismatched}};
}

ValidationReport
validateFiles(const DatasetManifest &m) {
    ValidationReport report;
    auto check = [&](const fs::path &rel, const CameraView *view) {
        const fs::path p = m.resolve(rel);
        if (!fs::exists(p)) {
            report.missing.push_back(p.string());
            return;
        }
        if (view) {
            const auto [w, h] = imageSize(p);
            if (w != view->width || h != view->height) {
                std::ostringstream ss;
                ss << p.string() << " is " << w << "x" << h << ", camera " << view->id
                   << " declares " << view->width << "x" << view->height;
                report.mismatched.push_back(ss.str());
            }
        }
    };
    check(m.points, nullptr);
    for (std::size_t i = 0; i < m.cameras.size(); ++i) {
        check(m.files[i].image, &m.cameras[i]);
        for (const auto &opt : {m.files[i].monoDepth, m.files[i].enhancedDepth, m.files[i].gtDepth}) {
            if (opt) {
                check(*opt, &m.cameras[i]);
            }
        }
    }
    return report;
}

Dataset
ingest(const fs::path &manifestPath) {
    Dataset d;
    d.manifest = readManifest(manifestPath);
    const ValidationReport report = validateFiles(d.manifest);
    if (!report.missing.empty()) {
        fail(ErrorKind::IoError, "missing file " + report.missing.front());
    }
    if (!report.mismatched.empty()) {
        fail(ErrorKind::InvalidInput, "resolution mismatch: " + report.mismatched.front());
    }
    d.points = readPoints(d.manifest.resolve(d.manifest.points));
    return d;
}

std::vector<TrainingView>
loadViews(const DatasetManifest &m, std::span<const std::size_t> which, PriorSource prior) {
    std::vector<TrainingView> out;
    for (std::size_t i : which) {
        if (i >= m.cameras.size()) {
            fail(ErrorKind::InvalidInput, "view index " + std::to_string(i) + " out of range");
        }
        TrainingView tv;
        tv.view = m.cameras[i];
        Image img = readPng(m.resolve(m.files[i].image));
        if (img.channels != 3) {
            Image rgb(img.width, img.height, 3);
            for (std::size_t p = 0; p < img.pixels(); ++p) {
                for (int c = 0; c < 3; ++c) {
                    rgb.data[p * 3 + c] = img.data[p * img.channels + (img.channels >= 3 ? c : 0)];
                }
            }
            img = std::move(rgb);
        }
        tv.image = std::move(img);
        const auto &path = prior == PriorSource::Enhanced ? m.files[i].enhancedDepth
                           : prior == PriorSource::Mono   ? m.files[i].monoDepth
                                                          : std::optional<fs::path>{};
        if (prior != PriorSource::None) {
            if (!path) {
                fail(ErrorKind::InvalidInput, "view " + std::to_string(i) + " has no " +
                                                  (prior == PriorSource::Enhanced ? "enhanced"
                                                                                  : "mono") +
                                                  " depth; run enhance-depth first");
            }
            tv.prior = readDepth(m.resolve(*path));
        }
        out.push_back(std::move(tv));
    }
    return out;
}

json
layerConfig(const json &defaults, const json &file, const json &flags) {
    json merged = defaults;
    merged.merge_patch(file);
    merged.merge_patch(flags);
    return merged;
}

json
trainConfigToJson(const TrainConfig &c) {
    return {{"total_steps", c.totalSteps},
            {"step2_start", c.step2Start},
            {"step3_start", c.step3Start},
            {"growth_stop", c.growthStop},
            {"growth_interval", c.growthInterval},
            {"growth_threshold", c.growthThreshold},
            {"batch_size", c.batchSize},
            {"workers", c.workers},
            {"seed", c.seed},
            {"tau_d", c.tauD},
            {"ncc_patches", c.nccPatches},
            {"hidden", c.hidden},
            {"initial_opacity", c.initialOpacity},
            {"eval_interval", c.evalInterval},
            {"checkpoint_interval", c.checkpointInterval},
            {"mode", modeName(c.mode)},
            {"lr",
             {{"decoder", c.lr.decoder},
              {"embedding", c.lr.embedding},
              {"offsets", c.lr.offsets},
              {"scale", c.lr.scale},
              {"final_fraction", c.lr.finalFraction}}}};
}

TrainConfig
trainConfigFromJson(const json &doc) {
    TrainConfig c;
    if (!doc.is_object()) {
        schemaError("", "config must be an object");
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string &k = it.key();
        const std::string p = "/" + k;
        const json &v = it.value();
        if (k == "total_steps") c.totalSteps = as<int>(v, p);
        else if (k == "step2_start") c.step2Start = as<int>(v, p);
        else if (k == "step3_start") c.step3Start = as<int>(v, p);
        else if (k == "growth_stop") c.growthStop = as<int>(v, p);
        else if (k == "growth_interval") c.growthInterval = as<int>(v, p);
        else if (k == "growth_threshold") c.growthThreshold = as<double>(v, p);
        else if (k == "batch_size") c.batchSize = as<int>(v, p);
        else if (k == "workers") c.workers = as<int>(v, p);
        else if (k == "seed") c.seed = as<std::uint64_t>(v, p);
        else if (k == "tau_d") c.tauD = as<double>(v, p);
        else if (k == "ncc_patches") c.nccPatches = as<int>(v, p);
        else if (k == "hidden") c.hidden = as<int>(v, p);
        else if (k == "initial_opacity") c.initialOpacity = as<double>(v, p);
        else if (k == "eval_interval") c.evalInterval = as<int>(v, p);
        else if (k == "checkpoint_interval") c.checkpointInterval = as<int>(v, p);
        else if (k == "mode") {
            const auto s = as<std::string>(v, p);
            if (s == "auto") c.mode = WorkerPool::Mode::Auto;
            else if (s == "threads") c.mode = WorkerPool::Mode::Threads;
            else if (s == "inline") c.mode = WorkerPool::Mode::Inline;
            else schemaError(p, "expected auto, threads or inline");
        } else if (k == "lr") {
            if (!v.is_object()) {
                schemaError(p, "expected an object");
            }
            for (auto jt = v.begin(); jt != v.end(); ++jt) {
                const std::string q = p + "/" + jt.key();
                const double x = as<double>(jt.value(), q);
                if (jt.key() == "decoder") c.lr.decoder = x;
                else if (jt.key() == "embedding") c.lr.embedding = x;
                else if (jt.key() == "offsets") c.lr.offsets = x;
                else if (jt.key() == "scale") c.lr.scale = x;
                else if (jt.key() == "final_fraction") c.lr.finalFraction = x;
                else schemaError(q, "unknown key");
            }
        } else {
            schemaError(p, "unknown key");
        }
    }
    c.validate();
    return c;
}

} // namespace ph2
