// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/losses.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace ph2 {

namespace {

void
checkBatch(std::size_t renders, std::size_t targets, std::size_t grads) {
    if (renders == 0 || renders != targets || renders != grads) {
        fail(ErrorKind::InvalidInput, "loss batch sizes disagree");
    }
}

inline double
sign(double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

} // namespace

LossValue
lossRgb(std::span<const RenderTargets> renders, std::span<const Image> targets,
        std::span<RenderGrads> grads, double weight) {
    checkBatch(renders.size(), targets.size(), grads.size());
    const double batch = static_cast<double>(renders.size());
    LossValue out;
    for (std::size_t b = 0; b < renders.size(); ++b) {
        const auto &r = renders[b];
        const auto &t = targets[b];
        if (t.channels != 3 || t.width != r.width || t.height != r.height ||
            grads[b].rgb.size() != r.rgb.size()) {
            fail(ErrorKind::InvalidInput, "RGB loss shape mismatch");
        }
        const double count = static_cast<double>(r.rgb.size());
        double sum = 0.0;
        const double g = weight / (batch * count);
        for (std::size_t i = 0; i < r.rgb.size(); ++i) {
            const double diff = r.rgb[i] - t.data[i];
            sum += std::abs(diff);
            grads[b].rgb[i] += g * sign(diff);
        }
        out.value += sum / count;
    }
    out.value /= batch;
    return out;
}

LossValue
lossDepth(std::span<const RenderTargets> renders, std::span<const DepthMap> priors,
          std::span<RenderGrads> grads, double weight) {
    checkBatch(renders.size(), priors.size(), grads.size());
    const double batch = static_cast<double>(renders.size());
    LossValue out;
    bool any = false;
    for (std::size_t b = 0; b < renders.size(); ++b) {
        const auto &r = renders[b];
        const auto &p = priors[b];
        if (p.width != r.width || p.height != r.height || grads[b].depth.size() != r.depth.size()) {
            fail(ErrorKind::InvalidInput, "depth loss shape mismatch");
        }
        std::size_t count = 0;
        for (std::size_t i = 0; i < r.depth.size(); ++i) {
            count += (p.valid[i] && r.depthValid[i]) ? 1 : 0;
        }
        if (count == 0) {
            continue;
        }
        any = true;
        double sum = 0.0;
        const double g = weight / (batch * static_cast<double>(count));
        for (std::size_t i = 0; i < r.depth.size(); ++i) {
            if (p.valid[i] && r.depthValid[i]) {
                const double diff = r.depth[i] - p.depth[i];
                sum += std::abs(diff);
                grads[b].depth[i] += g * sign(diff);
            }
        }
        out.value += sum / static_cast<double>(count);
    }
    out.value /= batch;
    out.warning = !any;
    return out;
}

Mat3
computeHomography(const CameraView &source, const CameraView &destination, const Vec3 &normal,
                  double distance) {
    if (!(std::abs(distance) >= 1e-6)) {
        fail(ErrorKind::DegeneratePlane, "plane passes through the source camera");
    }
    const Mat3 rRel = destination.rotation * source.rotation.transpose();
    const Vec3 tRel = destination.translation - rRel * source.translation;
    Mat3 h = destination.intrinsics() * (rRel - tRel * normal.transpose() / distance) *
             source.intrinsics().inverse();
    if (!(std::abs(h(2, 2)) > 0.0)) {
        fail(ErrorKind::DegeneratePlane, "homography cannot be normalized");
    }
    return h / h(2, 2);
}

Mat3
homographyFromWorldPlane(const CameraView &source, const CameraView &destination,
                         const Vec3 &worldNormal, double worldDistance) {
    // n.X + d = 0 with X = R^T (Xc - t)  =>  (R n).Xc + (d - (R n).t) = 0
    const Vec3 n = source.rotation * worldNormal;
    return computeHomography(source, destination, n, worldDistance - n.dot(source.translation));
}

double
luminance(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

namespace {

struct NccParts {
    double value = std::numeric_limits<double>::quiet_NaN();
    double norm = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    double meanA = 0.0;
    double meanB = 0.0;
};

NccParts
nccParts(std::span<const double> a, std::span<const double> b) {
    NccParts p;
    const double n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        p.meanA += a[i];
        p.meanB += b[i];
    }
    p.meanA /= n;
    p.meanB /= n;
    double sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - p.meanA, db = b[i] - p.meanB;
        p.saa += da * da;
        p.sbb += db * db;
        sab += da * db;
    }
    const double guard = kNccStdGuard * kNccStdGuard * n;
    if (p.saa < guard || p.sbb < guard) {
        return p;
    }
    p.norm = std::sqrt(p.saa * p.sbb);
    p.value = std::clamp(sab / p.norm, -1.0, 1.0);
    return p;
}

// Bilinear sample of a luminance image with positional derivatives.
struct Sample {
    double value, du, dv;
};

Sample
sampleLuminance(const RenderTargets &t, double u, double v) {
    const int x0 = std::min(static_cast<int>(std::floor(u)), t.width - 2);
    const int y0 = std::min(static_cast<int>(std::floor(v)), t.height - 2);
    const double fx = u - x0, fy = v - y0;
    auto lum = [&](int x, int y) {
        const std::size_t i = 3 * (static_cast<std::size_t>(y) * t.width + x);
        return luminance(t.rgb[i], t.rgb[i + 1], t.rgb[i + 2]);
    };
    const double l00 = lum(x0, y0), l10 = lum(x0 + 1, y0);
    const double l01 = lum(x0, y0 + 1), l11 = lum(x0 + 1, y0 + 1);
    Sample s;
    s.value = (1 - fy) * ((1 - fx) * l00 + fx * l10) + fy * ((1 - fx) * l01 + fx * l11);
    s.du = (1 - fy) * (l10 - l00) + fy * (l11 - l01);
    s.dv = (1 - fx) * (l01 - l00) + fx * (l11 - l10);
    return s;
}

constexpr int kPatchSide = 2 * kNccPatchRadius + 1;
constexpr int kPatchSamples = kPatchSide * kPatchSide;

} // namespace

double
ncc(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        fail(ErrorKind::InvalidInput, "NCC needs equally sized non-empty samples");
    }
    return nccParts(a, b).value;
}

double
geoPatchLoss(const RenderTargets &source, const CameraView &sourceView,
             const RenderTargets &reference, const CameraView &referenceView, int cx, int cy,
             RenderGrads *grads, double weight) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    const int r = kNccPatchRadius;
    if (cx < r || cy < r || cx + r >= source.width || cy + r >= source.height) {
        return nan;
    }
    const std::size_t center = static_cast<std::size_t>(cy) * source.width + cx;
    if (!source.depthValid[center]) {
        return nan;
    }
    const Vec3 normal(source.normal[3 * center], source.normal[3 * center + 1],
                      source.normal[3 * center + 2]);
    const double depth = source.depth[center];
    const Vec3 ray = sourceView.pixelRay(cx, cy);
    const double incidence = normal.dot(ray);
    if (!(std::abs(incidence) / ray.norm() > 1e-3)) {
        return nan;
    }
    const double d = -depth * incidence;
    if (!(std::abs(d) >= 1e-6)) {
        return nan;
    }

    const Mat3 k1Inv = sourceView.intrinsics().inverse();
    const Mat3 k2 = referenceView.intrinsics();
    const Mat3 rRel = referenceView.rotation * sourceView.rotation.transpose();
    const Vec3 tRel = referenceView.translation - rRel * sourceView.translation;
    const Mat3 g = k2 * (rRel - tRel * normal.transpose() / d) * k1Inv;

    std::array<double, kPatchSamples> a{}, b{};
    std::array<Sample, kPatchSamples> samples{};
    std::array<Vec3, kPatchSamples> warped{};
    int s = 0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++s) {
            const int x = cx + dx, y = cy + dy;
            const std::size_t i = 3 * (static_cast<std::size_t>(y) * source.width + x);
            a[s] = luminance(source.rgb[i], source.rgb[i + 1], source.rgb[i + 2]);
            const Vec3 w = g * Vec3(x, y, 1.0);
            if (!(w.z() > 1e-12)) {
                return nan;
            }
            const double u = w.x() / w.z(), v = w.y() / w.z();
            if (!(u >= 0.0 && v >= 0.0 && u <= reference.width - 1 && v <= reference.height - 1)) {
                return nan;
            }
            warped[s] = w;
            samples[s] = sampleLuminance(reference, u, v);
            b[s] = samples[s].value;
        }
    }
    const NccParts p = nccParts(a, b);
    if (std::isnan(p.value)) {
        return nan;
    }
    if (grads) {
        // d(1 - ncc)/da_i and /db_i
        Mat3 gG = Mat3::Zero();
        s = 0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx, ++s) {
                const double da = a[s] - p.meanA, db = b[s] - p.meanB;
                const double gA = -(db / p.norm - p.value * da / p.saa);
                const double gB = -(da / p.norm - p.value * db / p.sbb);
                const std::size_t i =
                    3 * (static_cast<std::size_t>(cy + dy) * source.width + (cx + dx));
                grads->rgb[i] += weight * gA * 0.299;
                grads->rgb[i + 1] += weight * gA * 0.587;
                grads->rgb[i + 2] += weight * gA * 0.114;

                const Vec3 &w = warped[s];
                const double u = w.x() / w.z(), v = w.y() / w.z();
                const double gu = gB * samples[s].du, gv = gB * samples[s].dv;
                const Vec3 q(cx + dx, cy + dy, 1.0);
                gG.row(0) += (gu / w.z()) * q.transpose();
                gG.row(1) += (gv / w.z()) * q.transpose();
                gG.row(2) -= ((gu * u + gv * v) / w.z()) * q.transpose();
            }
        }
        const Mat3 gM = k2.transpose() * gG * k1Inv.transpose();
        const double gd = tRel.dot(gM * normal) / (d * d);
        const Vec3 gNormal = -(gM.transpose() * tRel) / d - gd * depth * ray;
        const double gDepth = -gd * incidence;
        for (int c = 0; c < 3; ++c) {
            grads->normal[3 * center + c] += weight * gNormal[c];
        }
        grads->depth[center] += weight * gDepth;
    }
    return 1.0 - p.value;
}

LossValue
lossGeo(std::span<const RenderTargets> renders, std::span<const CameraView> views,
        std::span<RenderGrads> grads, double weight, const GeoOptions &options) {
    checkBatch(renders.size(), views.size(), grads.size());
    if (renders.size() % 2 != 0) {
        fail(ErrorKind::InvalidInput, "geometric loss needs an even batch");
    }
    const double batch = static_cast<double>(renders.size());
    const int r = kNccPatchRadius;
    LossValue out;
    bool any = false;
    for (std::size_t pair = 0; pair < renders.size() / 2; ++pair) {
        const std::size_t ref = 2 * pair, src = 2 * pair + 1;
        const RenderTargets &s = renders[src];
        std::vector<std::pair<int, int>> candidates;
        for (int y = r; y + r < s.height; ++y) {
            for (int x = r; x + r < s.width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * s.width + x;
                if (s.alpha[i] > options.minAlpha && s.depthValid[i]) {
                    candidates.emplace_back(x, y);
                }
            }
        }
        // Stratified pick: one random candidate per equal slice of the raster order.
        Rng rng(options.seed * 0x9E3779B97F4A7C15ull + pair);
        std::vector<std::pair<int, int>> centers;
        const std::size_t want = static_cast<std::size_t>(std::max(0, options.patchesPerPair));
        if (candidates.size() <= want) {
            centers = candidates;
        } else {
            for (std::size_t k = 0; k < want; ++k) {
                const std::size_t lo = k * candidates.size() / want;
                const std::size_t hi = (k + 1) * candidates.size() / want;
                centers.push_back(candidates[lo + rng.below(hi - lo)]);
            }
        }
        std::vector<std::pair<int, int>> usable;
        double sum = 0.0;
        for (const auto &[x, y] : centers) {
            const double l = geoPatchLoss(s, views[src], renders[ref], views[ref], x, y, nullptr, 0.0);
            if (std::isfinite(l)) {
                usable.emplace_back(x, y);
                sum += l;
            }
        }
        if (usable.empty()) {
            continue;
        }
        any = true;
        const double count = static_cast<double>(usable.size());
        out.value += 2.0 / batch * sum / count;
        const double w = weight * 2.0 / (batch * count);
        for (const auto &[x, y] : usable) {
            geoPatchLoss(s, views[src], renders[ref], views[ref], x, y, &grads[src], w);
        }
    }
    out.warning = !any;
    return out;
}

double
psnr(const Image &image, const Image &reference) {
    if (!image.sameShape(reference) || image.data.empty()) {
        fail(ErrorKind::InvalidInput, "PSNR needs images of equal shape");
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const double d = image.data[i] - reference.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(image.data.size());
    if (mse < 1e-10) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

SsimTerms
ssimComponents(const Image &image, const Image &reference) {
    constexpr int kWindow = 11;
    constexpr double kSigma = 1.5;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (!image.sameShape(reference) || image.data.empty()) {
        fail(ErrorKind::InvalidInput, "SSIM needs images of equal shape");
    }
    if (image.width < kWindow || image.height < kWindow) {
        fail(ErrorKind::InvalidInput, "SSIM needs images of at least 11x11 pixels");
    }
    std::array<double, kWindow> kernel{};
    double ksum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double x = i - kWindow / 2;
        kernel[i] = std::exp(-x * x / (2 * kSigma * kSigma));
        ksum += kernel[i];
    }
    for (auto &k : kernel) {
        k /= ksum;
    }

    SsimTerms out{0.0, 0.0, 0.0};
    const int outW = image.width - kWindow + 1, outH = image.height - kWindow + 1;
    const double windows = static_cast<double>(outW) * outH * image.channels;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < outH; ++y) {
            for (int x = 0; x < outW; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int j = 0; j < kWindow; ++j) {
                    for (int i = 0; i < kWindow; ++i) {
                        const double w = kernel[i] * kernel[j];
                        const double a = image.at(x + i, y + j, c);
                        const double b = reference.at(x + i, y + j, c);
                        mx += w * a;
                        my += w * b;
                        sxx += w * a * a;
                        syy += w * b * b;
                        sxy += w * a * b;
                    }
                }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
                const double cs = (2 * cxy + c2) / (vx + vy + c2);
                out.luminance += l;
                out.contrastStructure += cs;
                out.ssim += l * cs;
            }
        }
    }
    out.luminance /= windows;
    out.contrastStructure /= windows;
    out.ssim /= windows;
    return out;
}

double
ssim(const Image &image, const Image &reference) {
    return ssimComponents(image, reference).ssim;
}

Image
rgbImage(const RenderTargets &targets) {
    Image img(targets.width, targets.height, 3);
    img.data = targets.rgb;
    return img;
}

} // namespace ph2
