// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests. A manifest is a JSON document:
//
//   {
//     "version": 1,
//     "points": "points.ply",              // PLY or "x y z" text
//     "test_every": 8,                     // every 8th view is held out
//     "cameras": [{
//       "id": 0, "width": 128, "height": 128,
//       "fx": 110.0, "fy": 110.0, "cx": 63.5, "cy": 63.5,
//       "rotation": [w, x, y, z],          // world -> camera quaternion
//       "translation": [x, y, z],          // world -> camera
//       "image": "images/0000.png",
//       "mono_depth": "mono/0000.f32",     // optional, raw float32
//       "enhanced_depth": "...",           // optional, written by enhance-depth
//       "gt_depth": "depth/0000.f32"       // optional (synthetic scenes)
//     }],
//     "synthetic": { ... }                 // optional planted parameters
//   }
//
// Relative paths resolve against the manifest's directory.
#pragma once

#include <ph2/camera.h>
#include <ph2/image.h>
#include <ph2/scene.h>
#include <ph2/trainer.h>

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ph2 {

inline constexpr int kDefaultTestEvery = 8;

struct ViewFiles {
    std::filesystem::path image;
    std::optional<std::filesystem::path> monoDepth;
    std::optional<std::filesystem::path> enhancedDepth;
    std::optional<std::filesystem::path> gtDepth;

    bool operator==(const ViewFiles &) const = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<CameraView> cameras;
    /// The quaternions as written in the file; writing reuses them so that a
    /// round trip reproduces every rotation bit for bit.
    std::vector<Vec4> quaternions;
    std::vector<ViewFiles> files;
    std::filesystem::path points;
    int testEvery = kDefaultTestEvery;
    nlohmann::json synthetic; // null unless the dataset was generated

    std::filesystem::path resolve(const std::filesystem::path &p) const;
    /// With testEvery > 0, views i with i % testEvery == 0 are held out and
    /// the rest train. testEvery == 0 trains on everything.
    std::vector<std::size_t> trainViews() const;
    std::vector<std::size_t> testViews() const;

    /// Appends a camera whose rotation is set from `quaternion` (derived
    /// from the camera's rotation when absent).
    void addCamera(CameraView view, ViewFiles files, std::optional<Vec4> quaternion = {});
};

/// Throws InvalidInput naming the JSON pointer of the offending field.
DatasetManifest parseManifest(const nlohmann::json &doc, const std::filesystem::path &root);
nlohmann::json manifestToJson(const DatasetManifest &manifest);

DatasetManifest readManifest(const std::filesystem::path &path);
void writeManifest(const DatasetManifest &manifest, const std::filesystem::path &path);

struct ValidationReport {
    std::vector<std::string> missing;   // files that do not exist
    std::vector<std::string> mismatched; // files whose resolution differs

    bool
    ok() const {
        return missing.empty() && mismatched.empty();
    }
    nlohmann::json toJson() const;
};

ValidationReport validateFiles(const DatasetManifest &manifest);

struct Dataset {
    DatasetManifest manifest;
    SparsePoints points;
};

/// Parses, validates and loads the sparse points. Throws IoError naming the
/// first missing file and InvalidInput on a resolution mismatch.
Dataset ingest(const std::filesystem::path &manifestPath);

enum class PriorSource { None, Enhanced, Mono };

/// Loads images (and depth priors) of the listed views.
std::vector<TrainingView> loadViews(const DatasetManifest &manifest,
                                    std::span<const std::size_t> which,
                                    PriorSource prior = PriorSource::None);

/// Configuration layering: every key present in `flags` overrides `file`,
/// which overrides `defaults` (a JSON merge patch applied twice).
nlohmann::json layerConfig(const nlohmann::json &defaults, const nlohmann::json &file,
                           const nlohmann::json &flags);

nlohmann::json trainConfigToJson(const TrainConfig &config);
/// Unknown keys and wrong types throw InvalidInput with the JSON pointer.
TrainConfig trainConfigFromJson(const nlohmann::json &doc);

nlohmann::json readJsonFile(const std::filesystem::path &path);

} // namespace ph2
