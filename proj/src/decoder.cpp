// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/decoder.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ph2 {

GaussianAttrGrad &
GaussianAttrGrad::operator+=(const GaussianAttrGrad &o) {
    mean += o.mean;
    opacity += o.opacity;
    color += o.color;
    scale += o.scale;
    rotation += o.rotation;
    return *this;
}

int
minScaleAxis(const Vec3 &scale) {
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (scale[a] < scale[axis]) {
            axis = a;
        }
    }
    return axis;
}

Vec3
gaussianNormal(const Vec3 &scale, const Vec4 &rotation) {
    return quaternionToRotation(rotation).col(minScaleAxis(scale));
}

DecoderParams::DecoderParams(int offsetsPerVoxel, int hidden)
    : mOffsets(offsetsPerVoxel), mHidden(hidden) {
    if (offsetsPerVoxel < 1 || hidden < 1) {
        fail(ErrorKind::InvalidInput, "decoder needs at least one offset and one hidden unit");
    }
    mValues.assign(headOffset(kHeadCount), 0.0);
}

std::size_t
DecoderParams::headOffset(int head) const {
    std::size_t offset = 0;
    for (int h = 0; h < head; ++h) {
        offset += static_cast<std::size_t>(mHidden) * kDecoderInputDim + mHidden +
                  static_cast<std::size_t>(outputs(h)) * mHidden + outputs(h);
    }
    return offset;
}

Eigen::Map<DecoderParams::RowMatrix>
DecoderParams::w1(int head) {
    return {mValues.data() + headOffset(head), mHidden, kDecoderInputDim};
}
Eigen::Map<const DecoderParams::RowMatrix>
DecoderParams::w1(int head) const {
    return {mValues.data() + headOffset(head), mHidden, kDecoderInputDim};
}
Eigen::Map<Eigen::VectorXd>
DecoderParams::b1(int head) {
    return {mValues.data() + headOffset(head) + mHidden * kDecoderInputDim, mHidden};
}
Eigen::Map<const Eigen::VectorXd>
DecoderParams::b1(int head) const {
    return {mValues.data() + headOffset(head) + mHidden * kDecoderInputDim, mHidden};
}
Eigen::Map<DecoderParams::RowMatrix>
DecoderParams::w2(int head) {
    return {mValues.data() + headOffset(head) + mHidden * (kDecoderInputDim + 1), outputs(head),
            mHidden};
}
Eigen::Map<const DecoderParams::RowMatrix>
DecoderParams::w2(int head) const {
    return {mValues.data() + headOffset(head) + mHidden * (kDecoderInputDim + 1), outputs(head),
            mHidden};
}
Eigen::Map<Eigen::VectorXd>
DecoderParams::b2(int head) {
    return {mValues.data() + headOffset(head) + mHidden * (kDecoderInputDim + 1) +
                outputs(head) * mHidden,
            outputs(head)};
}
Eigen::Map<const Eigen::VectorXd>
DecoderParams::b2(int head) const {
    return {mValues.data() + headOffset(head) + mHidden * (kDecoderInputDim + 1) +
                outputs(head) * mHidden,
            outputs(head)};
}

void
DecoderParams::setZero() {
    std::fill(mValues.begin(), mValues.end(), 0.0);
}

bool
DecoderParams::allFinite() const {
    for (double v : mValues) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::vector<DecoderParams::ArrayInfo>
DecoderParams::arrays() const {
    static const char *names[kHeadCount] = {"opacity", "color", "covariance"};
    std::vector<ArrayInfo> out;
    for (int h = 0; h < kHeadCount; ++h) {
        const std::size_t base = headOffset(h);
        const std::size_t hid = mHidden, in = kDecoderInputDim, o = outputs(h);
        out.push_back({std::string(names[h]) + ".w1", {hid, in}, base});
        out.push_back({std::string(names[h]) + ".b1", {hid}, base + hid * in});
        out.push_back({std::string(names[h]) + ".w2", {o, hid}, base + hid * in + hid});
        out.push_back({std::string(names[h]) + ".b2", {o}, base + hid * in + hid + o * hid});
    }
    return out;
}

DecoderParams
initializeDecoder(int offsetsPerVoxel, int hidden, const DecoderInit &init) {
    DecoderParams params(offsetsPerVoxel, hidden);
    Rng rng(init.seed);
    const double inBound = 1.0 / std::sqrt(static_cast<double>(kDecoderInputDim));
    const double outBound = init.outputGain / std::sqrt(static_cast<double>(hidden));
    for (int h = 0; h < kHeadCount; ++h) {
        auto w1 = params.w1(h);
        for (Eigen::Index i = 0; i < w1.size(); ++i) {
            w1.data()[i] = rng.uniform(-inBound, inBound);
        }
        auto w2 = params.w2(h);
        for (Eigen::Index i = 0; i < w2.size(); ++i) {
            w2.data()[i] = rng.uniform(-outBound, outBound);
        }
    }
    params.b2(kOpacityHead).setConstant(init.opacityBias);
    params.b2(kColorHead).setConstant(init.colorBias);
    auto cov = params.b2(kCovarianceHead);
    for (int j = 0; j < offsetsPerVoxel; ++j) {
        for (int a = 0; a < 3; ++a) {
            cov[7 * j + a] = init.scaleBias;
        }
    }
    return params;
}

DecodeSettings
decodeSettingsFor(const SceneModel &scene) {
    DecodeSettings s;
    s.referenceDistance = scene.lod.referenceDistance;
    s.maxScale = 3.0 * scene.baseVoxelSize();
    return s;
}

namespace {

[[noreturn]] void
nonFinite(const VoxelRecord &voxel, const char *what) {
    std::ostringstream msg;
    msg << "non-finite " << what << " while decoding voxel (level " << voxel.level << ", grid "
        << voxel.grid.x() << ' ' << voxel.grid.y() << ' ' << voxel.grid.z() << ")";
    fail(ErrorKind::NumericalError, msg.str());
}

} // namespace

void
decodeVoxel(const VoxelRecord &voxel, const Vec3 &cameraCenter, const DecoderParams &params,
            const DecodeSettings &settings, std::span<GaussianAttr> out, DecodeCache *cache) {
    const int n = params.offsetsPerVoxel();
    if (static_cast<int>(out.size()) != n || voxel.offsets.rows() != n) {
        fail(ErrorKind::InvalidInput, "decoder offset count does not match the voxel");
    }
    DecodeCache local;
    DecodeCache &c = cache ? *cache : local;

    const Vec3 toVoxel = voxel.center - cameraCenter;
    const double distance = toVoxel.norm();
    c.input.head<kEmbeddingDim>() = voxel.embedding;
    c.input[kEmbeddingDim] = distance / settings.referenceDistance;
    c.input.tail<3>() = distance > 0.0 ? Vec3(toVoxel / distance) : Vec3::Zero();
    if (!c.input.allFinite()) {
        nonFinite(voxel, "decoder input");
    }

    for (int h = 0; h < kHeadCount; ++h) {
        c.hidden[h] = (params.w1(h) * c.input + params.b1(h)).array().tanh().matrix();
        c.raw[h] = params.w2(h) * c.hidden[h] + params.b2(h);
        if (!c.raw[h].allFinite()) {
            nonFinite(voxel, "activation");
        }
    }

    for (int j = 0; j < n; ++j) {
        GaussianAttr &g = out[j];
        g.mean = voxel.center + voxel.offsets.row(j).transpose().cwiseProduct(voxel.scale);
        g.opacity = sigmoid(c.raw[kOpacityHead][j]);
        for (int a = 0; a < 3; ++a) {
            g.color[a] = sigmoid(c.raw[kColorHead][3 * j + a]);
        }
        const auto &cov = c.raw[kCovarianceHead];
        for (int a = 0; a < 3; ++a) {
            g.scale[a] = std::clamp(std::exp(cov[7 * j + a]), settings.minScale, settings.maxScale);
        }
        Vec4 q(cov[7 * j + 3] + 1.0, cov[7 * j + 4], cov[7 * j + 5], cov[7 * j + 6]);
        const double norm = q.norm();
        if (!(norm > 1e-12)) {
            nonFinite(voxel, "rotation");
        }
        g.rotation = q / norm;
        g.normal = gaussianNormal(g.scale, g.rotation);
    }
    c.valid = true;
}

std::vector<GaussianAttr>
decode(const VoxelRecord &voxel, const CameraView &view, const DecoderParams &params,
       const DecodeSettings &settings, DecodeCache *cache) {
    std::vector<GaussianAttr> out(params.offsetsPerVoxel());
    decodeVoxel(voxel, view.center(), params, settings, out, cache);
    return out;
}

void
VoxelGrad::setZero() {
    embedding.setZero();
    scale.setZero();
    offsets.setZero();
}

void
decoderBackward(const VoxelRecord &voxel, const DecodeCache &cache,
                std::span<const GaussianAttrGrad> upstream, const DecoderParams &params,
                const DecodeSettings &settings, DecoderParams &paramGrad, VoxelGrad &voxelGrad) {
    if (!cache.valid) {
        fail(ErrorKind::StateError, "decoder backward called without a forward cache");
    }
    const int n = params.offsetsPerVoxel();
    if (static_cast<int>(upstream.size()) != n || !paramGrad.sameShape(params) ||
        voxelGrad.offsets.rows() != n) {
        fail(ErrorKind::InvalidInput, "decoder backward shape mismatch");
    }

    std::array<Eigen::VectorXd, kHeadCount> dRaw;
    for (int h = 0; h < kHeadCount; ++h) {
        dRaw[h] = Eigen::VectorXd::Zero(params.outputs(h));
    }

    for (int j = 0; j < n; ++j) {
        const GaussianAttrGrad &g = upstream[j];
        // mean = center + offset * scale (elementwise)
        const Vec3 offset = voxel.offsets.row(j).transpose();
        voxelGrad.offsets.row(j) += g.mean.cwiseProduct(voxel.scale).transpose();
        voxelGrad.scale += g.mean.cwiseProduct(offset);

        const double alpha = sigmoid(cache.raw[kOpacityHead][j]);
        dRaw[kOpacityHead][j] = g.opacity * alpha * (1.0 - alpha);
        for (int a = 0; a < 3; ++a) {
            const double col = sigmoid(cache.raw[kColorHead][3 * j + a]);
            dRaw[kColorHead][3 * j + a] = g.color[a] * col * (1.0 - col);
        }
        const auto &cov = cache.raw[kCovarianceHead];
        for (int a = 0; a < 3; ++a) {
            const double s = std::exp(cov[7 * j + a]);
            const bool active = s > settings.minScale && s < settings.maxScale;
            dRaw[kCovarianceHead][7 * j + a] = active ? g.scale[a] * s : 0.0;
        }
        const Vec4 u(cov[7 * j + 3] + 1.0, cov[7 * j + 4], cov[7 * j + 5], cov[7 * j + 6]);
        const double norm = u.norm();
        const Vec4 q = u / norm;
        const Vec4 du = (g.rotation - q * q.dot(g.rotation)) / norm;
        dRaw[kCovarianceHead].segment<4>(7 * j + 3) = du;
    }

    Eigen::Matrix<double, kDecoderInputDim, 1> dInput =
        Eigen::Matrix<double, kDecoderInputDim, 1>::Zero();
    for (int h = 0; h < kHeadCount; ++h) {
        const auto &hid = cache.hidden[h];
        paramGrad.w2(h).noalias() += dRaw[h] * hid.transpose();
        paramGrad.b2(h) += dRaw[h];
        const Eigen::VectorXd dPre =
            (params.w2(h).transpose() * dRaw[h]).cwiseProduct((1.0 - hid.array().square()).matrix());
        paramGrad.w1(h).noalias() += dPre * cache.input.transpose();
        paramGrad.b1(h) += dPre;
        dInput.noalias() += params.w1(h).transpose() * dPre;
    }
    voxelGrad.embedding += dInput.head<kEmbeddingDim>();
}

namespace {

void
reduceRange(std::span<const DecoderParams> parts, std::size_t lo, std::size_t hi,
            std::vector<double> &out) {
    if (hi - lo == 1) {
        const auto v = parts[lo].values();
        out.assign(v.begin(), v.end());
        return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::vector<double> right;
    reduceRange(parts, lo, mid, out);
    reduceRange(parts, mid, hi, right);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += right[i];
    }
}

} // namespace

DecoderParams
allReduce(std::span<const DecoderParams> parts, Reduction reduction) {
    if (parts.empty()) {
        fail(ErrorKind::ProtocolError, "all-reduce needs at least one participant");
    }
    for (const auto &p : parts) {
        if (!p.sameShape(parts.front()) || p.size() != parts.front().size()) {
            fail(ErrorKind::ProtocolError, "all-reduce participants disagree on gradient shape");
        }
    }
    DecoderParams result = parts.front();
    std::vector<double> sum;
    reduceRange(parts, 0, parts.size(), sum);
    auto values = result.values();
    const auto count = static_cast<double>(parts.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = reduction == Reduction::Mean ? sum[i] / count : sum[i];
    }
    return result;
}

} // namespace ph2
