// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// The shared Gaussian decoder. Three tanh MLP heads read a voxel embedding
// together with the normalized camera distance and the unit direction from the
// camera, and emit opacity, color and covariance (scale + rotation) for each of
// the voxel's n Gaussians. Means come from the voxel's offsets scaled by l_v.
#pragma once

#include <ph2/camera.h>
#include <ph2/scene.h>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace ph2 {

inline constexpr int kDecoderInputDim = kEmbeddingDim + 1 + 3;
inline constexpr int kDefaultHidden = 64;

enum DecoderHead : int { kOpacityHead = 0, kColorHead = 1, kCovarianceHead = 2 };
inline constexpr int kHeadCount = 3;
/// Outputs per Gaussian for each head: opacity 1, color 3, scale 3 + quaternion 4.
inline constexpr std::array<int, kHeadCount> kHeadWidth = {1, 3, 7};

struct GaussianAttr {
    Vec3 mean = Vec3::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // (w, x, y, z)
    Vec3 normal = Vec3::UnitZ();               // rotated axis of the smallest scale
};

/// Gradient of a scalar loss w.r.t. one Gaussian. The normal is a function of
/// the rotation, so its gradient is folded into `rotation` by the renderer.
struct GaussianAttrGrad {
    Vec3 mean = Vec3::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 scale = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();

    GaussianAttrGrad &operator+=(const GaussianAttrGrad &o);
};

/// Index of the smallest scale component (lowest index on ties).
int minScaleAxis(const Vec3 &scale);
/// Unit normal of a Gaussian: the rotated axis of its smallest scale.
Vec3 gaussianNormal(const Vec3 &scale, const Vec4 &rotation);

/// Flat parameter vector with per-head views. Also used for gradients.
class DecoderParams {
  public:
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    DecoderParams() = default;
    /// All-zero parameters.
    DecoderParams(int offsetsPerVoxel, int hidden = kDefaultHidden);

    int
    offsetsPerVoxel() const {
        return mOffsets;
    }
    int
    hidden() const {
        return mHidden;
    }
    int
    outputs(int head) const {
        return kHeadWidth[head] * mOffsets;
    }
    std::size_t
    size() const {
        return mValues.size();
    }
    std::span<double>
    values() {
        return mValues;
    }
    std::span<const double>
    values() const {
        return mValues;
    }

    Eigen::Map<RowMatrix> w1(int head);
    Eigen::Map<const RowMatrix> w1(int head) const;
    Eigen::Map<Eigen::VectorXd> b1(int head);
    Eigen::Map<const Eigen::VectorXd> b1(int head) const;
    Eigen::Map<RowMatrix> w2(int head);
    Eigen::Map<const RowMatrix> w2(int head) const;
    Eigen::Map<Eigen::VectorXd> b2(int head);
    Eigen::Map<const Eigen::VectorXd> b2(int head) const;

    bool
    sameShape(const DecoderParams &o) const {
        return mOffsets == o.mOffsets && mHidden == o.mHidden;
    }
    void setZero();
    bool allFinite() const;

    /// Array names and shapes in the checkpoint order, e.g. "opacity.w1" [64, 36].
    struct ArrayInfo {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset = 0;
    };
    std::vector<ArrayInfo> arrays() const;

    friend bool operator==(const DecoderParams &, const DecoderParams &) = default;

  private:
    std::size_t headOffset(int head) const;

    int mOffsets = 0;
    int mHidden = 0;
    std::vector<double> mValues;
};

struct DecoderInit {
    std::uint64_t seed = 0;
    double outputGain = 0.1; // output weights ~ U(+-gain / sqrt(hidden))
    double opacityBias = 0.0;
    double colorBias = 0.0;
    double scaleBias = 0.0; // log of the initial Gaussian scale
};

DecoderParams initializeDecoder(int offsetsPerVoxel, int hidden, const DecoderInit &init);

struct DecodeSettings {
    double referenceDistance = 1.0; // normalizes the camera distance input
    double minScale = 1e-6;
    double maxScale = 3.0; // 3 * base voxel size
};

DecodeSettings decodeSettingsFor(const SceneModel &scene);

/// Forward state kept for decoderBackward.
struct DecodeCache {
    bool valid = false;
    Eigen::Matrix<double, kDecoderInputDim, 1> input;
    std::array<Eigen::VectorXd, kHeadCount> hidden;
    std::array<Eigen::VectorXd, kHeadCount> raw;
};

/// Decodes the voxel's n Gaussians for a camera at `cameraCenter`.
/// Throws NumericalError (naming the voxel) on non-finite activations.
void decodeVoxel(const VoxelRecord &voxel, const Vec3 &cameraCenter, const DecoderParams &params,
                 const DecodeSettings &settings, std::span<GaussianAttr> out,
                 DecodeCache *cache = nullptr);

std::vector<GaussianAttr> decode(const VoxelRecord &voxel, const CameraView &view,
                                 const DecoderParams &params, const DecodeSettings &settings,
                                 DecodeCache *cache = nullptr);

struct VoxelGrad {
    Embedding embedding = Embedding::Zero();
    Vec3 scale = Vec3::Zero();
    Offsets offsets;

    explicit VoxelGrad(int offsetsPerVoxel = 0)
        : offsets(Offsets::Zero(offsetsPerVoxel, 3)) {}
    void setZero();
};

/// Accumulates (+=) the gradients of the decoded Gaussians into the decoder
/// parameters and the voxel's learnable state. Throws StateError without a
/// valid forward cache.
void decoderBackward(const VoxelRecord &voxel, const DecodeCache &cache,
                     std::span<const GaussianAttrGrad> upstream, const DecoderParams &params,
                     const DecodeSettings &settings, DecoderParams &paramGrad,
                     VoxelGrad &voxelGrad);

enum class Reduction { Sum, Mean };

/// Reduces same-shaped parameter sets with a fixed pairwise tree over their
/// positions, so the result depends only on the inputs and their order.
/// Throws ProtocolError on shape mismatch.
DecoderParams allReduce(std::span<const DecoderParams> parts, Reduction reduction);

} // namespace ph2
