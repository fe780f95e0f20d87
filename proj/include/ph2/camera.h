// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ph2/common.h>

namespace ph2 {

/// Pinhole camera with a world-to-camera pose. Pixel centers sit at integer
/// coordinates, so pixel (x, y) maps to the ray K^-1 (x, y, 1).
struct CameraView {
    int id = 0;
    int width = 0;
    int height = 0;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 rotation = Mat3::Identity(); // world -> camera
    Vec3 translation = Vec3::Zero();  // world -> camera

    /// Throws InvalidInput when intrinsics or the rotation are out of contract.
    void validate() const;

    Vec3
    center() const {
        return -rotation.transpose() * translation;
    }

    /// Unit viewing axis in world coordinates.
    Vec3
    forward() const {
        return rotation.row(2).transpose();
    }

    /// K^-1 (u, v, 1): camera-frame ray with unit z.
    Vec3
    pixelRay(double u, double v) const {
        return {(u - cx) / fx, (v - cy) / fy, 1.0};
    }

    Mat3 intrinsics() const;
};

Vec3 worldToCamera(const Vec3 &p, const CameraView &view);
Vec3 cameraToWorld(const Vec3 &pCam, const CameraView &view);

/// Returns (u, v, z). Throws BehindCamera for z <= 1e-8.
Vec3 project(const Vec3 &pCam, const CameraView &view);
/// Inverse of project: camera-frame point at depth z along pixel (u, v).
Vec3 backproject(double u, double v, double z, const CameraView &view);

/// Rotation matrix of a quaternion (w, x, y, z). The standard polynomial
/// form is used without renormalizing, which the gradient code relies on.
Mat3 quaternionToRotation(const Vec4 &q);
/// Unit quaternion (w, x, y, z) with w >= 0.
Vec4 rotationToQuaternion(const Mat3 &r);

/// Camera at `eye` looking at `target`; image y runs along -up.
CameraView lookAt(const Vec3 &eye, const Vec3 &target, const Vec3 &up, int width, int height,
                  double focal, int id = 0);

} // namespace ph2
