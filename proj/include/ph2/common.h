// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// Shared math aliases, the error type and the deterministic RNG used across
// every module.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ph2 {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec3i = Eigen::Vector3i;

enum class ErrorKind {
    InvalidInput,
    IoError,
    BehindCamera,
    NumericalError,
    StateError,
    ProtocolError,
    TransferError,
    ContractViolation,
    InsufficientData,
    DegenerateFit,
    DegeneratePlane,
    ResourceError,
    EmptyMesh,
};

const char *toString(ErrorKind kind);

/// Process exit code for an error surfaced by the CLI: 2 invalid input,
/// 3 numerical failure, 4 resource cap, 1 anything else.
int exitCodeFor(ErrorKind kind);

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &message);

    ErrorKind
    kind() const noexcept {
        return mKind;
    }

  private:
    ErrorKind mKind;
};

[[noreturn]] void fail(ErrorKind kind, const std::string &message);

/// splitmix-seeded xoshiro256** generator. Its output sequence is fixed by the
/// algorithm itself, so seeded datasets and initializations are bit-for-bit
/// reproducible on any platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next();
    /// Uniform in [0, 1).
    double uniform();
    double
    uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }
    /// Standard normal (Box-Muller, no cached spare).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

  private:
    std::uint64_t mState[4];
};

inline double
sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace ph2
