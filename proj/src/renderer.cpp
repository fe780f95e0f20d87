// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/renderer.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ph2 {

void
GaussianBatch::push(const GaussianAttr &g, std::uint64_t id, VoxelRef source, int owner) {
    gaussians.push_back(g);
    ids.push_back(id);
    sources.push_back(source);
    owners.push_back(owner);
}

SplatGrad &
SplatGrad::operator+=(const SplatGrad &o) {
    mean += o.mean;
    conic += o.conic;
    opacity += o.opacity;
    color += o.color;
    normal += o.normal;
    planeDistance += o.planeDistance;
    return *this;
}

RenderTargets::RenderTargets(int w, int h)
    : width(w), height(h), rgb(3 * pixels(), 0.0), depth(pixels(), 0.0),
      normal(3 * pixels(), 0.0), alpha(pixels(), 0.0), depthValid(pixels(), 0) {}

RenderGrads::RenderGrads(int w, int h) {
    const std::size_t n = static_cast<std::size_t>(w) * h;
    rgb.assign(3 * n, 0.0);
    depth.assign(n, 0.0);
    normal.assign(3 * n, 0.0);
    alpha.assign(n, 0.0);
}

void
BlendState::resize(std::size_t pixels) {
    rawNormal.assign(3 * pixels, 0.0);
    distance.assign(pixels, 0.0);
    finalT.assign(pixels, 1.0);
    contributors.assign(pixels, 0);
    valid = true;
}

namespace {

// Camera-space Jacobian of the perspective projection at p.
Eigen::Matrix<double, 2, 3>
projectionJacobian(const Vec3 &p, const CameraView &view) {
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << view.fx * iz, 0.0, -view.fx * p.x() * iz * iz, 0.0, view.fy * iz,
        -view.fy * p.y() * iz * iz;
    return j;
}

// Partial derivatives of the quaternion rotation matrix w.r.t. (w, x, y, z).
std::array<Mat3, 4>
rotationPartials(const Vec4 &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Mat3, 4> d;
    d[0] << 0.0, -z, y, z, 0.0, -x, -y, x, 0.0;
    d[1] << 0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x;
    d[2] << -2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y;
    d[3] << -2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0;
    for (auto &m : d) {
        m *= 2.0;
    }
    return d;
}

} // namespace

bool
projectGaussian(const GaussianAttr &g, const CameraView &view, Splat2D &out) {
    const Vec3 t = view.rotation * g.mean + view.translation;
    if (!(t.z() > kNearPlane)) {
        return false;
    }
    const Mat3 rot = quaternionToRotation(g.rotation);
    const Mat3 m = rot * g.scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    const Eigen::Matrix<double, 2, 3> tw = projectionJacobian(t, view) * view.rotation;
    Mat2 cov = tw * sigma * tw.transpose();
    cov(0, 0) += kLowPass;
    cov(1, 1) += kLowPass;
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));

    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det > 0.0)) {
        return false;
    }
    out.cov = cov;
    out.conic = Vec3(cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det);
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double lambda = mid + std::sqrt(std::max(0.1, mid * mid - det));
    out.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(lambda)));
    out.mean = Vec2(view.fx * t.x() / t.z() + view.cx, view.fy * t.y() / t.z() + view.cy);

    Vec3 normal = view.rotation * rot.col(minScaleAxis(g.scale));
    out.normalSign = normal.dot(t) > 0.0 ? -1.0 : 1.0;
    out.normal = out.normalSign * normal;
    out.planeDistance = out.normal.dot(t);
    out.opacity = g.opacity;
    out.color = g.color;
    out.depth = t.z();
    out.camPos = t;
    return true;
}

std::vector<Splat2D>
projectSplats(const GaussianBatch &batch, const CameraView &view) {
    std::vector<Splat2D> splats;
    splats.reserve(batch.size());
    Splat2D s;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (projectGaussian(batch.gaussians[i], view, s)) {
            s.id = batch.ids[i];
            s.source = static_cast<std::uint32_t>(i);
            splats.push_back(s);
        }
    }
    return splats;
}

GaussianAttrGrad
projectBackward(const GaussianAttr &g, const Splat2D &splat, const CameraView &view,
                const SplatGrad &grad) {
    GaussianAttrGrad out;
    out.opacity = grad.opacity;
    out.color = grad.color;

    const Vec3 &t = splat.camPos;
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const double fx = view.fx, fy = view.fy;

    Vec3 gt = Vec3::Zero();
    // pixel mean
    gt.x() += grad.mean.x() * fx * iz;
    gt.z() += -grad.mean.x() * fx * t.x() * iz2;
    gt.y() += grad.mean.y() * fy * iz;
    gt.z() += -grad.mean.y() * fy * t.y() * iz2;

    // conic -> 2D covariance -> 3D covariance and Jacobian
    const Mat2 &cov = splat.cov;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    Mat2 q;
    q << cov(1, 1) / det, -cov(0, 1) / det, -cov(0, 1) / det, cov(0, 0) / det;
    Mat2 gq;
    gq << grad.conic[0], 0.5 * grad.conic[1], 0.5 * grad.conic[1], grad.conic[2];
    const Mat2 gCov = -q * gq * q;

    const Mat3 rot = quaternionToRotation(g.rotation);
    const Mat3 m = rot * g.scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    const Eigen::Matrix<double, 2, 3> jac = projectionJacobian(t, view);
    const Eigen::Matrix<double, 2, 3> tw = jac * view.rotation;
    const Mat3 gSigma = tw.transpose() * gCov * tw;
    const Eigen::Matrix<double, 2, 3> gTw = 2.0 * gCov * tw * sigma;
    const Eigen::Matrix<double, 2, 3> gJ = gTw * view.rotation.transpose();
    gt.x() += gJ(0, 2) * (-fx * iz2);
    gt.y() += gJ(1, 2) * (-fy * iz2);
    gt.z() += gJ(0, 0) * (-fx * iz2) + gJ(0, 2) * (2.0 * fx * t.x() * iz2 * iz) +
              gJ(1, 1) * (-fy * iz2) + gJ(1, 2) * (2.0 * fy * t.y() * iz2 * iz);

    // plane distance d = n . t and the normal itself
    gt += grad.planeDistance * splat.normal;
    const Vec3 gNormalCam = grad.normal + grad.planeDistance * t;
    const Vec3 gNormalWorld = splat.normalSign * (view.rotation.transpose() * gNormalCam);

    out.mean = view.rotation.transpose() * gt;

    const Mat3 gM = 2.0 * gSigma * m;
    Mat3 gRot = gM * g.scale.asDiagonal();
    for (int a = 0; a < 3; ++a) {
        out.scale[a] = gM.col(a).dot(rot.col(a));
    }
    gRot.col(minScaleAxis(g.scale)) += gNormalWorld;
    const auto partials = rotationPartials(g.rotation);
    for (int c = 0; c < 4; ++c) {
        out.rotation[c] = gRot.cwiseProduct(partials[c]).sum();
    }
    return out;
}

TileBins
binSplats(std::span<const Splat2D> splats, int width, int height) {
    TileBins bins;
    bins.tilesX = (width + kPatchSize - 1) / kPatchSize;
    bins.tilesY = (height + kPatchSize - 1) / kPatchSize;
    const int tiles = bins.tilesX * bins.tilesY;

    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t l, std::uint32_t r) {
        if (splats[l].depth != splats[r].depth) {
            return splats[l].depth < splats[r].depth;
        }
        return splats[l].id < splats[r].id;
    });

    struct Range {
        int x0, x1, y0, y1;
    };
    auto tileRange = [&](const Splat2D &s) {
        const double r = s.radius;
        Range rg;
        rg.x0 = std::max(0, static_cast<int>(std::floor((s.mean.x() - r) / kPatchSize)));
        rg.x1 = std::min(bins.tilesX - 1, static_cast<int>(std::floor((s.mean.x() + r) / kPatchSize)));
        rg.y0 = std::max(0, static_cast<int>(std::floor((s.mean.y() - r) / kPatchSize)));
        rg.y1 = std::min(bins.tilesY - 1, static_cast<int>(std::floor((s.mean.y() + r) / kPatchSize)));
        return rg;
    };

    std::vector<std::uint32_t> counts(tiles + 1, 0);
    for (std::uint32_t i : order) {
        const Range rg = tileRange(splats[i]);
        for (int ty = rg.y0; ty <= rg.y1; ++ty) {
            for (int tx = rg.x0; tx <= rg.x1; ++tx) {
                ++counts[ty * bins.tilesX + tx + 1];
            }
        }
    }
    bins.offsets.resize(tiles + 1);
    std::partial_sum(counts.begin(), counts.end(), bins.offsets.begin());
    bins.indices.resize(bins.offsets.back());
    std::vector<std::uint32_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
    for (std::uint32_t i : order) {
        const Range rg = tileRange(splats[i]);
        for (int ty = rg.y0; ty <= rg.y1; ++ty) {
            for (int tx = rg.x0; tx <= rg.x1; ++tx) {
                bins.indices[cursor[ty * bins.tilesX + tx]++] = i;
            }
        }
    }
    return bins;
}

namespace {

// Channels blended per splat: color (3), normal (3), plane distance (1).
constexpr int kFeatures = 7;

struct PackedSplat {
    double u, v, a, b, c, opacity;
    double f[kFeatures];
};

std::vector<PackedSplat>
packSplats(std::span<const Splat2D> splats, std::span<const std::uint32_t> order) {
    std::vector<PackedSplat> packed(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Splat2D &s = splats[order[k]];
        if (k > 0) {
            const Splat2D &prev = splats[order[k - 1]];
            if (prev.depth > s.depth || (prev.depth == s.depth && prev.id > s.id)) {
                fail(ErrorKind::ContractViolation, "splats are not sorted by (depth, id)");
            }
        }
        PackedSplat &p = packed[k];
        p.u = s.mean.x();
        p.v = s.mean.y();
        p.a = s.conic[0];
        p.b = s.conic[1];
        p.c = s.conic[2];
        p.opacity = s.opacity;
        for (int i = 0; i < 3; ++i) {
            p.f[i] = s.color[i];
            p.f[3 + i] = s.normal[i];
        }
        p.f[6] = s.planeDistance;
    }
    return packed;
}

inline double
splatPower(const PackedSplat &s, double dx, double dy) {
    return -0.5 * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
}

} // namespace

void
rasterizePatch(const PatchRect &rect, std::span<const Splat2D> splats,
               std::span<const std::uint32_t> order, const CameraView &view,
               RenderTargets &targets, BlendState &state) {
    const auto packed = packSplats(splats, order);
    const int width = targets.width;
    for (int y = rect.y0; y < rect.y0 + rect.height; ++y) {
        for (int x = rect.x0; x < rect.x0 + rect.width; ++x) {
            double acc[kFeatures] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
            double transmittance = 1.0;
            std::uint32_t used = 0;
            for (std::size_t k = 0; k < packed.size(); ++k) {
                const PackedSplat &s = packed[k];
                const double power = splatPower(s, x - s.u, y - s.v);
                const double alpha = std::min(kAlphaClamp, s.opacity * std::exp(power));
                const double next = transmittance * (1.0 - alpha);
                if (next < kMinTransmittance) {
                    break;
                }
                const double w = alpha * transmittance;
                for (int i = 0; i < kFeatures; ++i) {
                    acc[i] += s.f[i] * w;
                }
                transmittance = next;
                used = static_cast<std::uint32_t>(k + 1);
            }

            const std::size_t px = static_cast<std::size_t>(y) * width + x;
            const double coverage = 1.0 - transmittance;
            state.finalT[px] = transmittance;
            state.contributors[px] = used;
            state.distance[px] = acc[6];
            for (int i = 0; i < 3; ++i) {
                targets.rgb[3 * px + i] = acc[i];
                state.rawNormal[3 * px + i] = acc[3 + i];
            }
            targets.alpha[px] = coverage;

            const Vec3 raw(acc[3], acc[4], acc[5]);
            const double len = raw.norm();
            const bool covered = coverage >= kMinCoverage && len > 0.0;
            for (int i = 0; i < 3; ++i) {
                targets.normal[3 * px + i] = covered ? raw[i] / len : 0.0;
            }
            const double denom = raw.dot(view.pixelRay(x, y));
            const bool valid = covered && std::abs(denom) > kDepthDenominatorGuard;
            targets.depth[px] = valid ? acc[6] / denom : 0.0;
            targets.depthValid[px] = valid ? 1 : 0;
        }
    }
}

void
rasterizePatchBackward(const PatchRect &rect, std::span<const Splat2D> splats,
                       std::span<const std::uint32_t> order, const CameraView &view,
                       const RenderTargets &targets, const BlendState &state,
                       const RenderGrads &grads, std::span<SplatGrad> local) {
    if (!state.valid) {
        fail(ErrorKind::StateError, "rasterizer backward called without forward state");
    }
    if (local.size() != order.size()) {
        fail(ErrorKind::InvalidInput, "patch gradient buffer has the wrong length");
    }
    const auto packed = packSplats(splats, order);
    const int width = targets.width;

    for (int y = rect.y0; y < rect.y0 + rect.height; ++y) {
        for (int x = rect.x0; x < rect.x0 + rect.width; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * width + x;
            const std::uint32_t used = state.contributors[px];
            if (used == 0) {
                continue;
            }
            // Upstream gradient on the blended channels.
            double gF[kFeatures + 1];
            for (int i = 0; i < 3; ++i) {
                gF[i] = grads.rgb[3 * px + i];
            }
            const Vec3 raw(state.rawNormal[3 * px], state.rawNormal[3 * px + 1],
                           state.rawNormal[3 * px + 2]);
            const double len = raw.norm();
            Vec3 gRaw = Vec3::Zero();
            if (targets.alpha[px] >= kMinCoverage && len > 0.0) {
                const Vec3 unit = raw / len;
                const Vec3 gUnit(grads.normal[3 * px], grads.normal[3 * px + 1],
                                 grads.normal[3 * px + 2]);
                gRaw = (gUnit - unit * unit.dot(gUnit)) / len;
            }
            double gDistance = 0.0;
            if (targets.depthValid[px]) {
                const Vec3 ray = view.pixelRay(x, y);
                const double denom = raw.dot(ray);
                const double g = grads.depth[px];
                gDistance = g / denom;
                gRaw -= (g * state.distance[px] / (denom * denom)) * ray;
            }
            for (int i = 0; i < 3; ++i) {
                gF[3 + i] = gRaw[i];
            }
            gF[6] = gDistance;
            gF[7] = grads.alpha[px];

            double transmittance = state.finalT[px];
            double accum[kFeatures + 1] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
            double lastF[kFeatures + 1] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
            double lastAlpha = 0.0;
            for (std::uint32_t k = used; k-- > 0;) {
                const PackedSplat &s = packed[k];
                const double dx = x - s.u, dy = y - s.v;
                const double gauss = std::exp(splatPower(s, dx, dy));
                const double rawAlpha = s.opacity * gauss;
                const double alpha = std::min(kAlphaClamp, rawAlpha);
                transmittance /= (1.0 - alpha);

                double f[kFeatures + 1];
                std::copy(s.f, s.f + kFeatures, f);
                f[kFeatures] = 1.0;
                double gAlpha = 0.0;
                for (int i = 0; i <= kFeatures; ++i) {
                    accum[i] = lastAlpha * lastF[i] + (1.0 - lastAlpha) * accum[i];
                    gAlpha += (f[i] - accum[i]) * gF[i];
                }
                gAlpha *= transmittance;
                const double w = alpha * transmittance;

                SplatGrad &out = local[k];
                for (int i = 0; i < 3; ++i) {
                    out.color[i] += w * gF[i];
                    out.normal[i] += w * gF[3 + i];
                }
                out.planeDistance += w * gF[6];

                if (rawAlpha < kAlphaClamp) {
                    out.opacity += gAlpha * gauss;
                    const double gPower = gAlpha * alpha;
                    out.mean.x() += gPower * (s.a * dx + s.b * dy);
                    out.mean.y() += gPower * (s.c * dy + s.b * dx);
                    out.conic[0] += gPower * (-0.5 * dx * dx);
                    out.conic[1] += gPower * (-dx * dy);
                    out.conic[2] += gPower * (-0.5 * dy * dy);
                }
                lastAlpha = alpha;
                std::copy(f, f + kFeatures + 1, lastF);
            }
        }
    }
}

RenderTargets
renderSplats(std::span<const Splat2D> splats, const CameraView &view, BlendState *state,
             TileBins *bins) {
    RenderTargets targets(view.width, view.height);
    BlendState localState;
    BlendState &st = state ? *state : localState;
    st.resize(targets.pixels());
    TileBins localBins = binSplats(splats, view.width, view.height);
    const auto rects = tilePatches(view.width, view.height);
    for (std::size_t t = 0; t < rects.size(); ++t) {
        rasterizePatch(rects[t], splats, localBins.tile(static_cast<int>(t)), view, targets, st);
    }
    if (bins) {
        *bins = std::move(localBins);
    }
    return targets;
}

std::vector<SplatGrad>
renderSplatsBackward(std::span<const Splat2D> splats, const CameraView &view,
                     const TileBins &bins, const RenderTargets &targets, const BlendState &state,
                     const RenderGrads &grads) {
    std::vector<SplatGrad> out(splats.size());
    const auto rects = tilePatches(view.width, view.height);
    std::vector<SplatGrad> local;
    for (std::size_t t = 0; t < rects.size(); ++t) {
        const auto order = bins.tile(static_cast<int>(t));
        local.assign(order.size(), SplatGrad{});
        rasterizePatchBackward(rects[t], splats, order, view, targets, state, grads, local);
        for (std::size_t k = 0; k < order.size(); ++k) {
            out[order[k]] += local[k];
        }
    }
    return out;
}

} // namespace ph2
