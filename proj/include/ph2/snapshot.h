// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Versioned little-endian binary snapshot: the "PH23D\0" magic, a u32 format
// version, then tagged sections. SCN1 holds the voxel hierarchy, DEC1 the
// decoder as named arrays with shapes, OPT1 optional optimizer state.
#pragma once

#include <ph2/decoder.h>
#include <ph2/scene.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ph2 {

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> data;

    friend bool operator==(const NamedArray &, const NamedArray &) = default;
};

struct Snapshot {
    SceneModel scene;
    std::optional<DecoderParams> decoder;
    std::uint64_t iteration = 0;
    std::vector<NamedArray> optimizer; // empty when OPT1 is absent
};

std::vector<std::uint8_t> encodeSnapshot(const Snapshot &snapshot);
/// Throws InvalidInput on a bad magic, unsupported version or malformed section.
Snapshot decodeSnapshot(const std::vector<std::uint8_t> &bytes);

void writeSnapshot(const std::filesystem::path &path, const Snapshot &snapshot);
Snapshot readSnapshot(const std::filesystem::path &path);

} // namespace ph2
