// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/common.h>

#include <cmath>
#include <numbers>

namespace ph2 {

const char *
toString(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::NumericalError: return "NumericalError";
    case ErrorKind::StateError: return "StateError";
    case ErrorKind::ProtocolError: return "ProtocolError";
    case ErrorKind::TransferError: return "TransferError";
    case ErrorKind::ContractViolation: return "ContractViolation";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DegenerateFit: return "DegenerateFit";
    case ErrorKind::DegeneratePlane: return "DegeneratePlane";
    case ErrorKind::ResourceError: return "ResourceError";
    case ErrorKind::EmptyMesh: return "EmptyMesh";
    }
    return "Unknown";
}

int
exitCodeFor(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput:
    case ErrorKind::IoError:
    case ErrorKind::InsufficientData:
    case ErrorKind::DegenerateFit:
        return 2;
    case ErrorKind::NumericalError: return 3;
    case ErrorKind::ResourceError: return 4;
    default: return 1;
    }
}

Error::Error(ErrorKind kind, const std::string &message)
    : std::runtime_error(std::string(toString(kind)) + ": " + message), mKind(kind) {}

void
fail(ErrorKind kind, const std::string &message) {
    throw Error(kind, message);
}

namespace {

std::uint64_t
splitmix(std::uint64_t &x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t
rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto &word : mState) {
        word = splitmix(s);
    }
}

std::uint64_t
Rng::next() {
    const std::uint64_t result = rotl(mState[1] * 5, 7) * 9;
    const std::uint64_t t = mState[1] << 17;
    mState[2] ^= mState[0];
    mState[3] ^= mState[1];
    mState[1] ^= mState[2];
    mState[0] ^= mState[3];
    mState[2] ^= t;
    mState[3] = rotl(mState[3], 45);
    return result;
}

double
Rng::uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double
Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t
Rng::below(std::uint64_t n) {
    if (n == 0) {
        return 0;
    }
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next();
    while (r >= limit) {
        r = next();
    }
    return r % n;
}

} // namespace ph2
