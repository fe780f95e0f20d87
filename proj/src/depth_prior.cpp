// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/depth_prior.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ph2 {

namespace {

struct LinearFit {
    double scale = 0.0;
    double shift = 0.0;
    bool ok = false;
};

// Normal equations on centered data.
LinearFit
leastSquares(std::span<const double> x, std::span<const double> y,
             const std::vector<std::uint8_t> &keep) {
    double n = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (keep[i]) {
            n += 1.0;
            mx += x[i];
            my += y[i];
        }
    }
    LinearFit fit;
    if (n < 2.0) {
        return fit;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (keep[i]) {
            sxx += (x[i] - mx) * (x[i] - mx);
            sxy += (x[i] - mx) * (y[i] - my);
        }
    }
    const double spread = std::max(std::abs(mx), 1.0);
    if (!(sxx > 1e-24 * n * spread * spread)) {
        return fit;
    }
    fit.scale = sxy / sxx;
    fit.shift = my - fit.scale * mx;
    fit.ok = true;
    return fit;
}

double
median(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
    }
    return m;
}

constexpr int kLmedsTrials = 200;

double
medianAbsResidual(std::span<const double> x, std::span<const double> y, const LinearFit &f) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        r[i] = std::abs(y[i] - (f.scale * x[i] + f.shift));
    }
    return median(std::move(r));
}

} // namespace

AffineFit
fitAffine(std::span<const double> x, std::span<const double> y, bool robust) {
    if (x.size() != y.size()) {
        fail(ErrorKind::InvalidInput, "affine fit needs paired samples");
    }
    if (x.size() < 2) {
        fail(ErrorKind::InsufficientData, "affine fit needs at least two samples");
    }
    std::vector<std::uint8_t> keep(x.size(), 1);
    const LinearFit first = leastSquares(x, y, keep);
    if (!first.ok) {
        fail(ErrorKind::DegenerateFit, "mono depth is constant over the samples");
    }
    AffineFit out{first.scale, first.shift, x.size()};
    if (!robust || x.size() < 3) {
        return out;
    }
    // A least-median-of-squares line over seeded sample pairs replaces the
    // plain fit as the reference when it explains the bulk better; this keeps
    // a large coherent outlier group from dragging the trimming reference.
    LinearFit reference = first;
    double best = medianAbsResidual(x, y, first);
    Rng rng(0x1f5eedULL);
    for (int trial = 0; trial < kLmedsTrials; ++trial) {
        const std::size_t i = rng.below(x.size());
        const std::size_t j = rng.below(x.size());
        const double dx = x[j] - x[i];
        if (!(std::abs(dx) > 1e-9 * std::max(1.0, std::abs(x[i])))) {
            continue;
        }
        LinearFit candidate;
        candidate.scale = (y[j] - y[i]) / dx;
        candidate.shift = y[i] - candidate.scale * x[i];
        candidate.ok = true;
        const double m = medianAbsResidual(x, y, candidate);
        if (m < best) {
            best = m;
            reference = candidate;
        }
    }
    std::vector<double> r(x.size());
    double scaleY = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        r[i] = y[i] - (reference.scale * x[i] + reference.shift);
        scaleY = std::max(scaleY, std::abs(y[i]));
    }
    const double med = median(r);
    std::vector<double> dev(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        dev[i] = std::abs(r[i] - med);
    }
    const double mad = median(dev);
    const double limit = std::max(3.0 * mad, 1e-12 * std::max(1.0, scaleY));
    std::size_t kept = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        keep[i] = dev[i] <= limit ? 1 : 0;
        kept += keep[i];
    }
    if (kept == x.size()) {
        return out;
    }
    const LinearFit second = leastSquares(x, y, keep);
    if (!second.ok) {
        return out;
    }
    return AffineFit{second.scale, second.shift, kept};
}

double
sampleDepth(const DepthMap &map, double u, double v) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (!(u >= 0.0 && v >= 0.0 && u <= map.width - 1 && v <= map.height - 1)) {
        return nan;
    }
    const int x0 = std::min(static_cast<int>(std::floor(u)), map.width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(v)), map.height - 1);
    const int x1 = std::min(x0 + 1, map.width - 1);
    const int y1 = std::min(y0 + 1, map.height - 1);
    const double fx = u - x0, fy = v - y0;
    const std::size_t i00 = map.index(x0, y0), i10 = map.index(x1, y0);
    const std::size_t i01 = map.index(x0, y1), i11 = map.index(x1, y1);
    if (map.valid[i00] && map.valid[i10] && map.valid[i01] && map.valid[i11]) {
        return (1 - fy) * ((1 - fx) * map.depth[i00] + fx * map.depth[i10]) +
               fy * ((1 - fx) * map.depth[i01] + fx * map.depth[i11]);
    }
    const int xn = static_cast<int>(std::lround(u));
    const int yn = static_cast<int>(std::lround(v));
    const std::size_t in = map.index(xn, yn);
    return map.valid[in] ? map.depth[in] : nan;
}

AffineFit
fitScaleShift(const DepthMap &mono, const CameraView &view, const SparsePoints &points) {
    if (mono.width != view.width || mono.height != view.height) {
        fail(ErrorKind::InvalidInput, "mono depth resolution differs from the view");
    }
    std::vector<double> x, y;
    for (const auto &p : points.positions) {
        const Vec3 pc = worldToCamera(p, view);
        if (!(pc.z() > 1e-8)) {
            continue;
        }
        const Vec3 uvz = project(pc, view);
        const double d = sampleDepth(mono, uvz.x(), uvz.y());
        if (std::isfinite(d)) {
            x.push_back(d);
            y.push_back(pc.z());
        }
    }
    if (x.size() < kMinFitPoints) {
        fail(ErrorKind::InsufficientData, "only " + std::to_string(x.size()) +
                                              " sparse points project into view " +
                                              std::to_string(view.id) + " (need 8)");
    }
    const AffineFit fit = fitAffine(x, y, true);
    if (!(fit.scale > 0.0)) {
        fail(ErrorKind::DegenerateFit, "fitted depth scale is not positive");
    }
    return fit;
}

DepthMap
applyAffine(const DepthMap &mono, const AffineFit &fit) {
    DepthMap out = mono;
    for (std::size_t i = 0; i < out.pixels(); ++i) {
        out.depth[i] = fit.scale * mono.depth[i] + fit.shift;
        out.valid[i] = mono.valid[i] && out.depth[i] > 0.0 ? 1 : 0;
    }
    return out;
}

std::vector<double>
reprojectionError(const DepthMap &a, const CameraView &viewA, const DepthMap &b,
                  const CameraView &viewB) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> err(a.pixels(), inf);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            const std::size_t i = a.index(x, y);
            if (!a.valid[i]) {
                continue;
            }
            const Vec3 world = cameraToWorld(backproject(x, y, a.depth[i], viewA), viewA);
            const Vec3 inB = worldToCamera(world, viewB);
            if (!(inB.z() > 1e-8)) {
                continue;
            }
            const Vec3 uvB = project(inB, viewB);
            const double dB = sampleDepth(b, uvB.x(), uvB.y());
            if (!(dB > 0.0)) {
                continue;
            }
            const Vec3 back =
                worldToCamera(cameraToWorld(backproject(uvB.x(), uvB.y(), dB, viewB), viewB), viewA);
            if (!(back.z() > 1e-8)) {
                continue;
            }
            const Vec3 uvA = project(back, viewA);
            err[i] = std::hypot(uvA.x() - x, uvA.y() - y);
        }
    }
    return err;
}

std::vector<std::size_t>
nearbyViews(std::span<const CameraView> views, std::size_t target, std::size_t k, double minDot) {
    const Vec3 c = views[target].center();
    const Vec3 f = views[target].forward();
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (i != target && views[i].forward().dot(f) >= minDot) {
            candidates.emplace_back((views[i].center() - c).norm(), i);
        }
    }
    std::sort(candidates.begin(), candidates.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, candidates.size()); ++i) {
        out.push_back(candidates[i].second);
    }
    return out;
}

double
EnhancedDepth::coverage() const {
    return depth.pixels() ? static_cast<double>(depth.validCount()) / depth.pixels() : 0.0;
}

EnhancedDepth
enhanceDepth(const DepthMap &aligned, const CameraView &view,
             std::span<const NeighborDepth> neighbors, double tauD) {
    if (neighbors.empty()) {
        fail(ErrorKind::InvalidInput, "depth enhancement needs at least one neighbor view");
    }
    EnhancedDepth out;
    out.depth = aligned;
    out.error.assign(aligned.pixels(), std::numeric_limits<double>::infinity());
    for (const auto &nb : neighbors) {
        const auto e = reprojectionError(aligned, view, *nb.depth, *nb.view);
        for (std::size_t i = 0; i < e.size(); ++i) {
            out.error[i] = std::min(out.error[i], e[i]);
        }
    }
    for (std::size_t i = 0; i < aligned.pixels(); ++i) {
        out.depth.valid[i] = aligned.valid[i] && out.error[i] <= tauD ? 1 : 0;
        if (!out.depth.valid[i]) {
            out.depth.depth[i] = 0.0;
        }
    }
    return out;
}

} // namespace ph2
