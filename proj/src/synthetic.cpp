// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/image_io.h>
#include <ph2/synthetic.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace ph2 {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kGoldenAngle = 2.399963229728653; // pi * (3 - sqrt(5))

// One planar patch: center, in-plane axes (unit) with half extents, normal.
struct Face {
    Vec3 center;
    Vec3 axisU;
    Vec3 axisV;
    double halfU;
    double halfV;
    int primitive;
};

std::vector<Face>
facesOf(const Primitive &p, int index) {
    const Mat3 &r = p.rotation;
    if (p.kind == PrimitiveKind::Plane) {
        return {{p.center, r.col(0), r.col(1), p.size.x(), p.size.y(), index}};
    }
    std::vector<Face> faces;
    if (p.kind == PrimitiveKind::Box) {
        for (int axis = 0; axis < 3; ++axis) {
            const int a = (axis + 1) % 3, b = (axis + 2) % 3;
            for (double sign : {1.0, -1.0}) {
                // (a, b, axis) is right handed, so flipping a keeps the
                // cross product along the outward normal.
                faces.push_back({p.center + sign * p.size[axis] * r.col(axis), sign * r.col(a),
                                 r.col(b), p.size[a], p.size[b], index});
            }
        }
    }
    return faces;
}

double
faceArea(const Face &f) {
    return 4.0 * f.halfU * f.halfV;
}

std::uint64_t
hashLattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (std::int64_t v : {x, y, z}) {
        h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 31;
    }
    return h;
}

double
valueNoise(const Vec3 &p, std::uint64_t seed) {
    const Vec3 f = p.array().floor();
    const Vec3 t = p - f;
    const Vec3 s = t.array() * t.array() * (3.0 - 2.0 * t.array());
    const auto i = f.cast<std::int64_t>();
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? s.x() : 1 - s.x()) * (dy ? s.y() : 1 - s.y()) * (dz ? s.z() : 1 - s.z());
        const double v =
            static_cast<double>(hashLattice(i.x() + dx, i.y() + dy, i.z() + dz, seed) >> 11) * 0x1.0p-53;
        acc += w * v;
    }
    return acc;
}

Vec3
sphereFrameAxis(const Vec3 &n) {
    return n.unitOrthogonal();
}

GaussianAttr
flatGaussian(const Vec3 &mean, const Vec3 &u, const Vec3 &v, double sigma, double thickness,
             double opacity, const Vec3 &color) {
    Mat3 r;
    r.col(0) = u.normalized();
    r.col(1) = v.normalized();
    r.col(2) = r.col(0).cross(r.col(1));
    GaussianAttr g;
    g.mean = mean;
    g.opacity = opacity;
    g.color = color;
    g.scale = Vec3(sigma, sigma, thickness);
    g.rotation = rotationToQuaternion(r);
    g.normal = gaussianNormal(g.scale, g.rotation);
    return g;
}

json
vecJson(const Vec3 &v) {
    return {v.x(), v.y(), v.z()};
}

Vec3
vecFrom(const json &j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

const char *
kindName(PrimitiveKind k) {
    switch (k) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Sphere: return "sphere";
    default: return "plane";
    }
}

const char *
textureName(TextureKind k) {
    switch (k) {
    case TextureKind::Checker: return "checker";
    case TextureKind::Noise: return "noise";
    default: return "solid";
    }
}

const char *
trajectoryName(TrajectoryKind k) {
    switch (k) {
    case TrajectoryKind::Grid: return "grid";
    case TrajectoryKind::Sphere: return "sphere";
    default: return "orbit";
    }
}

std::string
indexed(const char *dir, std::size_t i, const char *ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/%04zu%s", dir, i, ext);
    return buf;
}

} // namespace

void
SyntheticSpec::validate() const {
    auto bad = [](const std::string &m) { fail(ErrorKind::InvalidInput, "synthetic spec: " + m); };
    if (primitives.empty()) {
        bad("needs at least one primitive");
    }
    if (width < 1 || height < 1 || width > kMaxSyntheticResolution ||
        height > kMaxSyntheticResolution) {
        bad("resolution must be within 1.." + std::to_string(kMaxSyntheticResolution));
    }
    if (!(focal > 0.0) || !(gaussianSpacing > 0.0) || !(gaussianThickness > 0.0)) {
        bad("focal, Gaussian spacing and thickness must be positive");
    }
    if (!(gaussianOpacity > 0.0 && gaussianOpacity <= 1.0)) {
        bad("Gaussian opacity must be in (0, 1]");
    }
    if (trajectory.count < 1 || trajectory.columns < 1) {
        bad("trajectory needs at least one camera and column");
    }
    if (!(corruption.scale > 0.0) || corruption.noise < 0.0 || !(corruption.stripeWidth >= 0.0) ||
        corruption.stripeWidth > 1.0 || !(corruption.stripeFactor > 0.0)) {
        bad("corruption parameters out of range");
    }
    if (sparsePoints < 0 || testEvery < 0) {
        bad("point count and test split must be >= 0");
    }
    for (const auto &p : primitives) {
        if (!(p.size.minCoeff() >= 0.0) || (p.kind == PrimitiveKind::Sphere && !(p.size.x() > 0.0))) {
            bad("primitive sizes must be positive");
        }
        if (!(p.textureScale > 0.0)) {
            bad("texture scale must be positive");
        }
        if ((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm() > 1e-9) {
            bad("primitive rotation must be orthonormal");
        }
    }
}

SyntheticSpec
planeSceneSpec() {
    SyntheticSpec s;
    Primitive plane;
    plane.size = Vec3(0.8, 0.8, 0.0);
    plane.texture = TextureKind::Noise;
    plane.colorA = Vec3(0.85, 0.55, 0.3);
    plane.colorB = Vec3(0.15, 0.35, 0.6);
    plane.textureScale = 0.2;
    s.primitives = {plane};
    s.trajectory.kind = TrajectoryKind::Orbit;
    s.trajectory.count = 16;
    s.trajectory.radius = 1.6;
    s.trajectory.height = 2.4;
    s.width = s.height = 128;
    s.focal = 150.0;
    s.gaussianSpacing = 0.05;
    return s;
}

SyntheticSpec
gridSceneSpec() {
    SyntheticSpec s;
    Primitive ground;
    ground.size = Vec3(2.0, 2.0, 0.0);
    ground.texture = TextureKind::Checker;
    ground.colorA = Vec3(0.6, 0.6, 0.55);
    ground.colorB = Vec3(0.35, 0.4, 0.35);
    ground.textureScale = 0.5;
    s.primitives.push_back(ground);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            Primitive box;
            box.kind = PrimitiveKind::Box;
            const double h = 0.2 + 0.15 * ((i * 3 + j) % 4);
            box.center = Vec3(-1.2 + 1.2 * i, -1.2 + 1.2 * j, h);
            box.size = Vec3(0.3, 0.3, h);
            box.texture = TextureKind::Checker;
            box.colorA = Vec3(0.9, 0.75 - 0.1 * i, 0.5);
            box.colorB = Vec3(0.3, 0.3, 0.45 + 0.1 * j);
            box.textureScale = 0.15;
            s.primitives.push_back(box);
        }
    }
    s.trajectory.kind = TrajectoryKind::Grid;
    s.trajectory.count = 16;
    s.trajectory.columns = 4;
    s.trajectory.spacing = 0.9;
    s.trajectory.height = 4.0;
    s.trajectory.tilt = 0.5;
    s.width = s.height = 64;
    s.focal = 48.0;
    s.gaussianSpacing = 0.1;
    s.sparsePoints = 6000;
    return s;
}

SyntheticSpec
sphereSceneSpec() {
    SyntheticSpec s;
    Primitive ball;
    ball.kind = PrimitiveKind::Sphere;
    ball.size = Vec3(0.5, 0.5, 0.5);
    ball.texture = TextureKind::Checker;
    ball.colorA = Vec3(0.9, 0.4, 0.3);
    ball.colorB = Vec3(0.3, 0.5, 0.9);
    ball.textureScale = 0.2;
    s.primitives = {ball};
    s.trajectory.kind = TrajectoryKind::Sphere;
    s.trajectory.count = 16;
    s.trajectory.radius = 2.0;
    s.width = s.height = 128;
    s.focal = 120.0;
    s.gaussianSpacing = 0.04;
    return s;
}

SyntheticSpec
tabletopSceneSpec() {
    SyntheticSpec s;
    Primitive floor;
    floor.size = Vec3(1.2, 1.2, 0.0);
    floor.texture = TextureKind::Noise;
    floor.colorA = Vec3(0.75, 0.6, 0.45);
    floor.colorB = Vec3(0.3, 0.25, 0.2);
    floor.textureScale = 0.3;
    Primitive box;
    box.kind = PrimitiveKind::Box;
    box.center = Vec3(-0.35, 0.1, 0.25);
    box.size = Vec3(0.25, 0.25, 0.25);
    box.texture = TextureKind::Checker;
    box.colorA = Vec3(0.85, 0.3, 0.25);
    box.colorB = Vec3(0.95, 0.85, 0.4);
    box.textureScale = 0.25;
    Primitive ball;
    ball.kind = PrimitiveKind::Sphere;
    ball.center = Vec3(0.4, -0.2, 0.3);
    ball.size = Vec3(0.3, 0.3, 0.3);
    ball.texture = TextureKind::Noise;
    ball.colorA = Vec3(0.2, 0.45, 0.8);
    ball.colorB = Vec3(0.6, 0.85, 0.9);
    ball.textureScale = 0.2;
    s.primitives = {floor, box, ball};
    s.trajectory.kind = TrajectoryKind::Orbit;
    s.trajectory.count = 24;
    s.trajectory.radius = 2.6;
    s.trajectory.height = 1.8;
    s.width = s.height = 128;
    s.focal = 110.0;
    s.gaussianSpacing = 0.05;
    s.sparsePoints = 4000;
    return s;
}

SyntheticSpec
presetSpec(const std::string &name) {
    if (name == "plane") return planeSceneSpec();
    if (name == "grid") return gridSceneSpec();
    if (name == "sphere") return sphereSceneSpec();
    if (name == "tabletop") return tabletopSceneSpec();
    fail(ErrorKind::InvalidInput, "unknown synthetic preset '" + name + "'");
}

json
specToJson(const SyntheticSpec &s) {
    json prims = json::array();
    for (const auto &p : s.primitives) {
        const Vec4 q = rotationToQuaternion(p.rotation);
        prims.push_back({{"kind", kindName(p.kind)},
                         {"center", vecJson(p.center)},
                         {"rotation", {q[0], q[1], q[2], q[3]}},
                         {"size", vecJson(p.size)},
                         {"texture", textureName(p.texture)},
                         {"color_a", vecJson(p.colorA)},
                         {"color_b", vecJson(p.colorB)},
                         {"texture_scale", p.textureScale}});
    }
    const auto &t = s.trajectory;
    const auto &c = s.corruption;
    return {{"primitives", prims},
            {"trajectory",
             {{"kind", trajectoryName(t.kind)},
              {"count", t.count},
              {"target", vecJson(t.target)},
              {"radius", t.radius},
              {"height", t.height},
              {"columns", t.columns},
              {"spacing", t.spacing},
              {"tilt", t.tilt}}},
            {"width", s.width},
            {"height", s.height},
            {"focal", s.focal},
            {"gaussian_spacing", s.gaussianSpacing},
            {"gaussian_opacity", s.gaussianOpacity},
            {"gaussian_thickness", s.gaussianThickness},
            {"corruption",
             {{"scale", c.scale},
              {"shift", c.shift},
              {"noise", c.noise},
              {"stripe", c.stripe},
              {"stripe_width", c.stripeWidth},
              {"stripe_factor", c.stripeFactor}}},
            {"sparse_points", s.sparsePoints},
            {"test_every", s.testEvery}};
}

SyntheticSpec
specFromJson(const json &doc) {
    SyntheticSpec s;
    try {
        for (const auto &p : doc.at("primitives")) {
            Primitive prim;
            const std::string kind = p.at("kind");
            prim.kind = kind == "box"      ? PrimitiveKind::Box
                        : kind == "sphere" ? PrimitiveKind::Sphere
                        : kind == "plane"  ? PrimitiveKind::Plane
                                           : throw Error(ErrorKind::InvalidInput,
                                                         "unknown primitive kind " + kind);
            prim.center = vecFrom(p.value("center", json{0, 0, 0}));
            if (p.contains("rotation")) {
                const auto &q = p["rotation"];
                prim.rotation = quaternionToRotation(
                    Vec4(q.at(0), q.at(1), q.at(2), q.at(3)).normalized());
            }
            prim.size = vecFrom(p.at("size"));
            const std::string tex = p.value("texture", "solid");
            prim.texture = tex == "checker" ? TextureKind::Checker
                           : tex == "noise" ? TextureKind::Noise
                                            : TextureKind::Solid;
            prim.colorA = vecFrom(p.value("color_a", vecJson(prim.colorA)));
            prim.colorB = vecFrom(p.value("color_b", vecJson(prim.colorB)));
            prim.textureScale = p.value("texture_scale", prim.textureScale);
            s.primitives.push_back(prim);
        }
        if (doc.contains("trajectory")) {
            const auto &t = doc["trajectory"];
            const std::string kind = t.value("kind", "orbit");
            s.trajectory.kind = kind == "grid"     ? TrajectoryKind::Grid
                                : kind == "sphere" ? TrajectoryKind::Sphere
                                                   : TrajectoryKind::Orbit;
            s.trajectory.count = t.value("count", s.trajectory.count);
            s.trajectory.target = vecFrom(t.value("target", vecJson(s.trajectory.target)));
            s.trajectory.radius = t.value("radius", s.trajectory.radius);
            s.trajectory.height = t.value("height", s.trajectory.height);
            s.trajectory.columns = t.value("columns", s.trajectory.columns);
            s.trajectory.spacing = t.value("spacing", s.trajectory.spacing);
            s.trajectory.tilt = t.value("tilt", s.trajectory.tilt);
        }
        s.width = doc.value("width", s.width);
        s.height = doc.value("height", s.height);
        s.focal = doc.value("focal", s.focal);
        s.gaussianSpacing = doc.value("gaussian_spacing", s.gaussianSpacing);
        s.gaussianOpacity = doc.value("gaussian_opacity", s.gaussianOpacity);
        s.gaussianThickness = doc.value("gaussian_thickness", s.gaussianThickness);
        if (doc.contains("corruption")) {
            const auto &c = doc["corruption"];
            auto &o = s.corruption;
            o.scale = c.value("scale", o.scale);
            o.shift = c.value("shift", o.shift);
            o.noise = c.value("noise", o.noise);
            o.stripe = c.value("stripe", o.stripe);
            o.stripeWidth = c.value("stripe_width", o.stripeWidth);
            o.stripeFactor = c.value("stripe_factor", o.stripeFactor);
        }
        s.sparsePoints = doc.value("sparse_points", s.sparsePoints);
        s.testEvery = doc.value("test_every", s.testEvery);
    } catch (const json::exception &e) {
        fail(ErrorKind::InvalidInput, std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::vector<CameraView>
makeTrajectory(const SyntheticSpec &spec, std::vector<Vec4> *quaternions) {
    const Trajectory &t = spec.trajectory;
    std::vector<CameraView> views;
    const Vec3 up = Vec3::UnitZ();
    for (int i = 0; i < t.count; ++i) {
        Vec3 eye, look;
        Vec3 viewUp = up;
        switch (t.kind) {
        case TrajectoryKind::Orbit: {
            const double a = 2.0 * std::numbers::pi * i / t.count;
            eye = t.target + Vec3(t.radius * std::cos(a), t.radius * std::sin(a), t.height);
            look = t.target;
            break;
        }
        case TrajectoryKind::Grid: {
            const int rows = (t.count + t.columns - 1) / t.columns;
            const int r = i / t.columns, c = i % t.columns;
            eye = t.target + Vec3((c - 0.5 * (t.columns - 1)) * t.spacing,
                                  (r - 0.5 * (rows - 1)) * t.spacing, t.height);
            look = eye + Vec3(0.0, t.tilt, -t.height);
            viewUp = Vec3::UnitY();
            break;
        }
        case TrajectoryKind::Sphere: {
            // Fibonacci directions, offset so no camera sits on a pole.
            const double z = 1.0 - (2.0 * i + 1.0) / t.count;
            const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double a = kGoldenAngle * i;
            eye = t.target + t.radius * Vec3(rho * std::cos(a), rho * std::sin(a), z);
            look = t.target;
            break;
        }
        }
        CameraView view = lookAt(eye, look, viewUp, spec.width, spec.height, spec.focal, i);
        const Vec4 q = rotationToQuaternion(view.rotation);
        view.rotation = quaternionToRotation(q);
        views.push_back(view);
        if (quaternions) {
            quaternions->push_back(q);
        }
    }
    return views;
}

std::optional<RayHit>
castRay(std::span<const Primitive> primitives, const CameraView &view, double u, double v) {
    const Vec3 origin = view.center();
    const Vec3 dir = view.rotation.transpose() * view.pixelRay(u, v);
    std::optional<RayHit> best;
    auto offer = [&](double t, int index) {
        if (t > 1e-9 && (!best || t < best->depth)) {
            best = RayHit{t, index, origin + t * dir};
        }
    };
    for (std::size_t k = 0; k < primitives.size(); ++k) {
        const Primitive &p = primitives[k];
        const int index = static_cast<int>(k);
        const Vec3 o = p.rotation.transpose() * (origin - p.center);
        const Vec3 d = p.rotation.transpose() * dir;
        switch (p.kind) {
        case PrimitiveKind::Plane: {
            if (std::abs(d.z()) < 1e-15) {
                break;
            }
            const double t = -o.z() / d.z();
            const Vec3 hit = o + t * d;
            if (std::abs(hit.x()) <= p.size.x() && std::abs(hit.y()) <= p.size.y()) {
                offer(t, index);
            }
            break;
        }
        case PrimitiveKind::Box: {
            double t0 = -std::numeric_limits<double>::infinity();
            double t1 = std::numeric_limits<double>::infinity();
            bool miss = false;
            for (int a = 0; a < 3 && !miss; ++a) {
                if (std::abs(d[a]) < 1e-15) {
                    miss = std::abs(o[a]) > p.size[a];
                    continue;
                }
                double ta = (-p.size[a] - o[a]) / d[a];
                double tb = (p.size[a] - o[a]) / d[a];
                if (ta > tb) {
                    std::swap(ta, tb);
                }
                t0 = std::max(t0, ta);
                t1 = std::min(t1, tb);
            }
            if (!miss && t0 <= t1) {
                offer(t0 > 1e-9 ? t0 : t1, index);
            }
            break;
        }
        case PrimitiveKind::Sphere: {
            const double r = p.size.x();
            const double b = o.dot(d);
            const double c = o.squaredNorm() - r * r;
            const double a = d.squaredNorm();
            const double disc = b * b - a * c;
            if (disc < 0.0) {
                break;
            }
            const double s = std::sqrt(disc);
            const double t0 = (-b - s) / a;
            offer(t0 > 1e-9 ? t0 : (-b + s) / a, index);
            break;
        }
        }
    }
    return best;
}

DepthMap
castDepth(std::span<const Primitive> primitives, const CameraView &view) {
    DepthMap out(view.width, view.height);
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            if (auto hit = castRay(primitives, view, x, y)) {
                const std::size_t i = out.index(x, y);
                out.depth[i] = hit->depth;
                out.valid[i] = 1;
            }
        }
    }
    return out;
}

Vec3
textureColor(const Primitive &p, const Vec3 &worldPoint, std::uint64_t seed) {
    const Vec3 local = p.rotation.transpose() * (worldPoint - p.center) / p.textureScale;
    switch (p.texture) {
    case TextureKind::Checker: {
        // A tiny bias keeps faces lying exactly on a lattice plane on one side.
        const Vec3 f = (local.array() + 1e-9).floor();
        const auto parity = static_cast<long long>(f.x() + f.y() + f.z());
        return (parity % 2 == 0) ? p.colorA : p.colorB;
    }
    case TextureKind::Noise: {
        const double t = valueNoise(local, seed);
        return p.colorA + t * (p.colorB - p.colorA);
    }
    default: return p.colorA;
    }
}

double
surfaceDistance(std::span<const Primitive> primitives, const Vec3 &point) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &p : primitives) {
        const Vec3 l = p.rotation.transpose() * (point - p.center);
        double d = 0.0;
        switch (p.kind) {
        case PrimitiveKind::Plane: {
            const double ex = std::max(0.0, std::abs(l.x()) - p.size.x());
            const double ey = std::max(0.0, std::abs(l.y()) - p.size.y());
            d = std::sqrt(ex * ex + ey * ey + l.z() * l.z());
            break;
        }
        case PrimitiveKind::Box: {
            const Vec3 q = l.cwiseAbs() - p.size;
            const double outside = q.cwiseMax(0.0).norm();
            d = outside > 0.0 ? outside : -q.maxCoeff();
            break;
        }
        case PrimitiveKind::Sphere: d = std::abs(l.norm() - p.size.x()); break;
        }
        best = std::min(best, d);
    }
    return best;
}

GaussianBatch
surfaceGaussians(const SyntheticSpec &spec, std::uint64_t seed) {
    GaussianBatch batch;
    const double h = spec.gaussianSpacing;
    const double sigma = 0.6 * h;
    const double thick = spec.gaussianThickness * h;
    auto push = [&](const GaussianAttr &g) { batch.push(g, batch.size()); };
    for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
        const Primitive &p = spec.primitives[k];
        const std::uint64_t texSeed = seed + k;
        if (p.kind == PrimitiveKind::Sphere) {
            const double r = p.size.x();
            const int n = std::max(8, static_cast<int>(std::lround(4.0 * std::numbers::pi * r * r / (h * h))));
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - (2.0 * i + 1.0) / n;
                const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double a = kGoldenAngle * i;
                const Vec3 nrm = p.rotation * Vec3(rho * std::cos(a), rho * std::sin(a), z);
                const Vec3 pos = p.center + r * nrm;
                const Vec3 u = sphereFrameAxis(nrm);
                push(flatGaussian(pos, u, nrm.cross(u), sigma, thick, spec.gaussianOpacity,
                                  textureColor(p, pos, texSeed)));
            }
            continue;
        }
        for (const Face &f : facesOf(p, static_cast<int>(k))) {
            const int nu = std::max(1, static_cast<int>(std::ceil(2.0 * f.halfU / h)));
            const int nv = std::max(1, static_cast<int>(std::ceil(2.0 * f.halfV / h)));
            const double du = 2.0 * f.halfU / nu, dv = 2.0 * f.halfV / nv;
            for (int j = 0; j < nv; ++j) {
                for (int i = 0; i < nu; ++i) {
                    const Vec3 pos = f.center + (-f.halfU + (i + 0.5) * du) * f.axisU +
                                     (-f.halfV + (j + 0.5) * dv) * f.axisV;
                    push(flatGaussian(pos, f.axisU, f.axisV, 0.6 * std::max(du, dv), thick,
                                      spec.gaussianOpacity, textureColor(p, pos, texSeed)));
                }
            }
        }
    }
    return batch;
}

SparsePoints
sampleSurfaces(const SyntheticSpec &spec, std::uint64_t seed) {
    // Every face and sphere gets a share proportional to its area.
    std::vector<Face> faces;
    std::vector<double> areas;
    std::vector<int> sphereOf;
    for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
        const Primitive &p = spec.primitives[k];
        if (p.kind == PrimitiveKind::Sphere) {
            faces.push_back({p.center, Vec3::UnitX(), Vec3::UnitY(), 0, 0, static_cast<int>(k)});
            areas.push_back(4.0 * std::numbers::pi * p.size.x() * p.size.x());
            sphereOf.push_back(1);
            continue;
        }
        for (const Face &f : facesOf(p, static_cast<int>(k))) {
            faces.push_back(f);
            areas.push_back(faceArea(f));
            sphereOf.push_back(0);
        }
    }
    std::vector<double> cumulative(areas.size());
    std::partial_sum(areas.begin(), areas.end(), cumulative.begin());
    Rng rng(seed ^ 0x5eed5a3b1e5ULL);
    SparsePoints out;
    for (int s = 0; s < spec.sparsePoints; ++s) {
        const double pick = rng.uniform() * cumulative.back();
        const std::size_t fi = std::min<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(),
            faces.size() - 1);
        const Face &f = faces[fi];
        const Primitive &p = spec.primitives[f.primitive];
        Vec3 pos;
        if (sphereOf[fi]) {
            Vec3 n(rng.normal(), rng.normal(), rng.normal());
            while (n.norm() < 1e-12) {
                n = Vec3(rng.normal(), rng.normal(), rng.normal());
            }
            pos = p.center + p.size.x() * n.normalized();
        } else {
            pos = f.center + rng.uniform(-f.halfU, f.halfU) * f.axisU +
                  rng.uniform(-f.halfV, f.halfV) * f.axisV;
        }
        out.positions.push_back(pos);
        out.colors.push_back(textureColor(p, pos, seed + f.primitive));
    }
    return out;
}

RenderTargets
renderGaussians(const GaussianBatch &batch, const CameraView &view) {
    const auto splats = projectSplats(batch, view);
    return renderSplats(splats, view);
}

SyntheticDataset
makeSynthetic(const SyntheticSpec &spec, std::uint64_t seed) {
    spec.validate();
    SyntheticDataset data;
    data.spec = spec;
    data.seed = seed;
    data.views = makeTrajectory(spec, &data.quaternions);
    data.gaussians = surfaceGaussians(spec, seed);
    data.points = sampleSurfaces(spec, seed);
    const DepthCorruption &c = spec.corruption;
    const int stripeCols =
        c.stripe ? std::max(1, static_cast<int>(std::lround(c.stripeWidth * spec.width))) : 0;
    for (std::size_t i = 0; i < data.views.size(); ++i) {
        const CameraView &view = data.views[i];
        DepthMap gt = castDepth(spec.primitives, view);
        if (gt.validCount() == 0) {
            fail(ErrorKind::InvalidInput,
                 "synthetic camera " + std::to_string(i) + " sees no primitive");
        }
        const RenderTargets render = renderGaussians(data.gaussians, view);
        Image image(view.width, view.height, 3);
        image.data = render.rgb;

        // Stripe columns spread by the golden ratio so neighbouring views
        // corrupt different parts of the scene.
        const double phase = std::fmod(0.5 + 0.6180339887498949 * static_cast<double>(i), 1.0);
        const int x0 = static_cast<int>(std::floor(phase * (spec.width - stripeCols + 1)));
        Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x51ed + i);
        DepthMap mono(view.width, view.height);
        std::vector<std::uint8_t> mask(mono.pixels(), 0);
        for (int y = 0; y < view.height; ++y) {
            for (int x = 0; x < view.width; ++x) {
                const std::size_t p = mono.index(x, y);
                const double noise = c.noise * rng.normal();
                if (!gt.valid[p]) {
                    continue;
                }
                double d = c.scale * gt.depth[p] + c.shift + noise;
                if (x >= x0 && x < x0 + stripeCols) {
                    d *= c.stripeFactor;
                    mask[p] = 1;
                }
                if (d > 0.0) {
                    mono.depth[p] = d;
                    mono.valid[p] = 1;
                }
            }
        }
        data.images.push_back(std::move(image));
        data.gtDepth.push_back(std::move(gt));
        data.monoDepth.push_back(std::move(mono));
        data.stripeMask.push_back(std::move(mask));
    }
    return data;
}

DatasetManifest
writeSynthetic(const SyntheticDataset &data, const fs::path &dir) {
    for (const char *sub : {"images", "depth", "mono", "stripe"}) {
        fs::create_directories(dir / sub);
    }
    DatasetManifest m;
    m.root = dir;
    m.points = "points.ply";
    m.testEvery = data.spec.testEvery;
    writePointsPly(data.points, dir / m.points);
    for (std::size_t i = 0; i < data.views.size(); ++i) {
        ViewFiles files;
        files.image = indexed("images", i, ".png");
        files.gtDepth = indexed("depth", i, ".f32");
        files.monoDepth = indexed("mono", i, ".f32");
        writePng(data.images[i], dir / files.image);
        writeDepth(data.gtDepth[i], dir / *files.gtDepth);
        writeDepth(data.monoDepth[i], dir / *files.monoDepth);
        Image mask(data.views[i].width, data.views[i].height, 1);
        for (std::size_t p = 0; p < mask.data.size(); ++p) {
            mask.data[p] = data.stripeMask[i][p];
        }
        writePng(mask, dir / indexed("stripe", i, ".png"));
        m.addCamera(data.views[i], files, data.quaternions[i]);
    }
    m.synthetic = {{"seed", data.seed},
                   {"spec", specToJson(data.spec)},
                   {"depth_scale", data.spec.corruption.scale},
                   {"depth_shift", data.spec.corruption.shift},
                   {"gaussians", data.gaussians.size()}};
    writeManifest(m, dir / "manifest.json");
    return m;
}

} // namespace ph2
