// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/mesh.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace ph2 {

namespace {

template <typename T>
void
putLe(std::ostream &out, T value) {
    static_assert(std::endian::native == std::endian::little, "little-endian host expected");
    out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T>
T
getLe(std::istream &in, const std::filesystem::path &path) {
    T value{};
    if (!in.read(reinterpret_cast<char *>(&value), sizeof(T))) {
        fail(ErrorKind::IoError, "truncated PLY body in " + path.string());
    }
    return value;
}

// Uniform hash grid over a point set for radius and nearest-neighbour queries.
class PointGrid {
  public:
    PointGrid(std::span<const Vec3> points, double cell) : mPoints(points), mCell(cell) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            mCells[key(cellOf(points[i]))].push_back(static_cast<std::uint32_t>(i));
        }
    }

    bool
    anyWithin(const Vec3 &q, double radius) const {
        const double r2 = radius * radius;
        const Vec3i c = cellOf(q);
        const int reach = static_cast<int>(std::ceil(radius / mCell));
        for (int dz = -reach; dz <= reach; ++dz) {
            for (int dy = -reach; dy <= reach; ++dy) {
                for (int dx = -reach; dx <= reach; ++dx) {
                    auto it = mCells.find(key(c + Vec3i(dx, dy, dz)));
                    if (it == mCells.end()) {
                        continue;
                    }
                    for (auto id : it->second) {
                        if ((mPoints[id] - q).squaredNorm() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        return false;
    }

    // Expands cubic shells until no unvisited cell can hold a closer point.
    double
    nearest(const Vec3 &q) const {
        const Vec3i c = cellOf(q);
        double best = std::numeric_limits<double>::infinity();
        for (int ring = 0;; ++ring) {
            for (int dz = -ring; dz <= ring; ++dz) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) {
                            continue;
                        }
                        auto it = mCells.find(key(c + Vec3i(dx, dy, dz)));
                        if (it == mCells.end()) {
                            continue;
                        }
                        for (auto id : it->second) {
                            best = std::min(best, (mPoints[id] - q).squaredNorm());
                        }
                    }
                }
            }
            const double cleared = ring * mCell;
            if (best <= cleared * cleared || ring > mMaxRing) {
                return std::sqrt(best);
            }
        }
    }

    void
    setSearchLimit(int rings) {
        mMaxRing = rings;
    }

  private:
    Vec3i
    cellOf(const Vec3 &p) const {
        return (p / mCell).array().floor().cast<int>();
    }
    static std::uint64_t
    key(const Vec3i &c) {
        const auto u = [](int v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1fffff; };
        return u(c.x()) | (u(c.y()) << 21) | (u(c.z()) << 42);
    }

    std::span<const Vec3> mPoints;
    double mCell;
    int mMaxRing = std::numeric_limits<int>::max();
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> mCells;
};

void
requireCloud(std::span<const Vec3> points, const char *name) {
    if (points.empty()) {
        fail(ErrorKind::InvalidInput, std::string(name) + " point cloud is empty");
    }
}

} // namespace

void
TriangleMesh::validate() const {
    for (const auto &v : vertices) {
        if (!v.allFinite()) {
            fail(ErrorKind::ContractViolation, "mesh has a non-finite vertex");
        }
    }
    const int n = static_cast<int>(vertices.size());
    for (const auto &t : triangles) {
        for (int i : t) {
            if (i < 0 || i >= n) {
                fail(ErrorKind::ContractViolation, "triangle index out of range");
            }
        }
    }
}

void
writeMeshPly(const TriangleMesh &mesh, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    }
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.triangles.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto &v : mesh.vertices) {
        for (int i = 0; i < 3; ++i) {
            putLe(out, static_cast<float>(v[i]));
        }
    }
    for (const auto &t : mesh.triangles) {
        putLe(out, std::uint8_t{3});
        for (int i : t) {
            putLe(out, static_cast<std::int32_t>(i));
        }
    }
    if (!out) {
        fail(ErrorKind::IoError, "failed writing " + path.string());
    }
}

TriangleMesh
readMeshPly(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::string line;
    std::size_t nv = 0, nf = 0;
    bool binary = false;
    while (std::getline(in, line) && line != "end_header") {
        std::istringstream ls(line);
        std::string word, what;
        ls >> word;
        if (word == "format") {
            ls >> what;
            binary = what == "binary_little_endian";
        } else if (word == "element") {
            ls >> what;
            ls >> (what == "vertex" ? nv : nf);
        }
    }
    if (!binary) {
        fail(ErrorKind::InvalidInput, path.string() + " is not a binary little-endian PLY mesh");
    }
    TriangleMesh mesh;
    mesh.vertices.resize(nv);
    for (auto &v : mesh.vertices) {
        for (int i = 0; i < 3; ++i) {
            v[i] = getLe<float>(in, path);
        }
    }
    mesh.triangles.resize(nf);
    for (auto &t : mesh.triangles) {
        if (getLe<std::uint8_t>(in, path) != 3) {
            fail(ErrorKind::InvalidInput, path.string() + " has a non-triangle face");
        }
        for (int &i : t) {
            i = getLe<std::int32_t>(in, path);
        }
    }
    return mesh;
}

void
writeMeshObj(const TriangleMesh &mesh, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    }
    out.precision(9);
    for (const auto &v : mesh.vertices) {
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    }
    for (const auto &t : mesh.triangles) {
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    if (!out) {
        fail(ErrorKind::IoError, "failed writing " + path.string());
    }
}

std::vector<Vec3>
sampleSurface(const TriangleMesh &mesh, std::size_t count, std::uint64_t seed) {
    mesh.validate();
    std::vector<double> cumulative;
    cumulative.reserve(mesh.triangles.size());
    double total = 0.0;
    for (const auto &t : mesh.triangles) {
        const Vec3 &a = mesh.vertices[t[0]];
        total += 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) {
        fail(ErrorKind::EmptyMesh, "mesh has no area to sample");
    }
    Rng rng(seed);
    std::vector<Vec3> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const double pick = rng.uniform() * total;
        const std::size_t ti = std::min<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(),
            cumulative.size() - 1);
        const auto &t = mesh.triangles[ti];
        double r1 = rng.uniform(), r2 = rng.uniform();
        if (r1 + r2 > 1.0) {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        const Vec3 &a = mesh.vertices[t[0]];
        out.push_back(a + r1 * (mesh.vertices[t[1]] - a) + r2 * (mesh.vertices[t[2]] - a));
    }
    return out;
}

double
fractionWithin(std::span<const Vec3> query, std::span<const Vec3> target, double radius) {
    requireCloud(query, "query");
    requireCloud(target, "target");
    const PointGrid grid(target, radius);
    std::size_t hits = 0;
    for (const auto &q : query) {
        hits += grid.anyWithin(q, radius) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(query.size());
}

CloudMetrics
evalPointCloud(std::span<const Vec3> predicted, std::span<const Vec3> reference, double threshold) {
    requireCloud(predicted, "predicted");
    requireCloud(reference, "reference");
    if (!(threshold > 0.0)) {
        fail(ErrorKind::InvalidInput, "F-score threshold must be positive");
    }
    CloudMetrics m;
    m.precision = fractionWithin(predicted, reference, threshold);
    m.recall = fractionWithin(reference, predicted, threshold);
    const double sum = m.precision + m.recall;
    m.f1 = sum > 0.0 ? 2.0 * m.precision * m.recall / sum : 0.0;
    return m;
}

double
directedHausdorff(std::span<const Vec3> query, std::span<const Vec3> target) {
    requireCloud(query, "query");
    requireCloud(target, "target");
    Vec3 lo = target.front(), hi = target.front();
    for (const auto &p : target) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    // About one target point per occupied cell on a surface-like cloud.
    const double diag = std::max((hi - lo).norm(), 1e-12);
    const double cell = std::max(diag / std::sqrt(static_cast<double>(target.size())), diag * 1e-6);
    PointGrid grid(target, cell);
    double worst = 0.0;
    for (const auto &q : query) {
        Vec3 clamped = q.cwiseMax(lo).cwiseMin(hi);
        grid.setSearchLimit(static_cast<int>(std::ceil(((q - clamped).norm() + diag) / cell)) + 1);
        worst = std::max(worst, grid.nearest(q));
    }
    return worst;
}

} // namespace ph2
