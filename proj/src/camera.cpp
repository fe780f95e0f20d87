// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/camera.h>

#include <Eigen/Geometry>

#include <cmath>
#include <sstream>

namespace ph2 {

void
CameraView::validate() const {
    std::ostringstream why;
    if (!(fx > 0.0) || !(fy > 0.0)) {
        why << "focal lengths must be positive";
    } else if (width <= 0 || height <= 0) {
        why << "image size must be positive";
    } else if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
        why << "principal point must lie inside the image";
    } else if (!rotation.allFinite() || !translation.allFinite()) {
        why << "pose must be finite";
    } else if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-5 ||
               rotation.determinant() < 0.0) {
        why << "rotation must be orthonormal";
    } else {
        return;
    }
    fail(ErrorKind::InvalidInput, "camera " + std::to_string(id) + ": " + why.str());
}

Mat3
CameraView::intrinsics() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Vec3
worldToCamera(const Vec3 &p, const CameraView &view) {
    return view.rotation * p + view.translation;
}

Vec3
cameraToWorld(const Vec3 &pCam, const CameraView &view) {
    return view.rotation.transpose() * (pCam - view.translation);
}

Vec3
project(const Vec3 &pCam, const CameraView &view) {
    if (!(pCam.z() > 1e-8)) {
        fail(ErrorKind::BehindCamera, "point has camera depth " + std::to_string(pCam.z()));
    }
    return {view.fx * pCam.x() / pCam.z() + view.cx, view.fy * pCam.y() / pCam.z() + view.cy,
            pCam.z()};
}

Vec3
backproject(double u, double v, double z, const CameraView &view) {
    return view.pixelRay(u, v) * z;
}

Mat3
quaternionToRotation(const Vec4 &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Vec4
rotationToQuaternion(const Mat3 &r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) {
        out = -out;
    }
    return out;
}

CameraView
lookAt(const Vec3 &eye, const Vec3 &target, const Vec3 &up, int width, int height, double focal,
       int id) {
    const Vec3 zAxis = (target - eye).normalized();
    Vec3 xAxis = zAxis.cross(up);
    if (xAxis.norm() < 1e-12) {
        xAxis = zAxis.unitOrthogonal();
    }
    xAxis.normalize();
    const Vec3 yAxis = zAxis.cross(xAxis);

    CameraView view;
    view.id = id;
    view.width = width;
    view.height = height;
    view.fx = focal;
    view.fy = focal;
    view.cx = 0.5 * width;
    view.cy = 0.5 * height;
    view.rotation.row(0) = xAxis.transpose();
    view.rotation.row(1) = yAxis.transpose();
    view.rotation.row(2) = zAxis.transpose();
    view.translation = -view.rotation * eye;
    return view;
}

} // namespace ph2
