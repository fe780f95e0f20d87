// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// File formats: PNG images, raw float32 planar arrays with a JSON sidecar,
// and sparse point clouds as PLY or plain "x y z" text.
#pragma once

#include <ph2/image.h>
#include <ph2/scene.h>

#include <filesystem>

namespace ph2 {

/// Values in [0, 1]. Gray, gray+alpha, RGB and RGBA; 8 or 16 bit.
Image readPng(const std::filesystem::path &path);
/// Clamps to [0, 1] and rounds to 8 bits (or 16 when `sixteenBit`).
void writePng(const Image &image, const std::filesystem::path &path, bool sixteenBit = false);

/// Channel-planar float32 data plus "<path>.json" recording width, height
/// and channels.
void writeRawFloat(const Image &image, const std::filesystem::path &path);
Image readRawFloat(const std::filesystem::path &path);

/// Depth as a one-channel raw float; invalid pixels are stored as NaN.
void writeDepth(const DepthMap &depth, const std::filesystem::path &path);
DepthMap readDepth(const std::filesystem::path &path);
DepthMap depthFromImage(const Image &image);
Image depthToImage(const DepthMap &depth);

/// PLY (ascii or binary little-endian, float or double x/y/z, optional
/// uchar red/green/blue) chosen by the ".ply" extension, otherwise text
/// with one "x y z [r g b]" per line and '#' comments.
SparsePoints readPoints(const std::filesystem::path &path);
void writePointsPly(const SparsePoints &points, const std::filesystem::path &path);

} // namespace ph2
