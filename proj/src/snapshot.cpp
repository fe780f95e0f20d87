// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/snapshot.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ph2 {

static_assert(std::endian::native == std::endian::little,
              "snapshot encoding assumes a little-endian host");

namespace {

constexpr char kMagic[6] = {'P', 'H', '2', '3', 'D', '\0'};

class Writer {
  public:
    template <typename T>
    void
    put(T value) {
        const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void
    putRaw(const void *data, std::size_t n) {
        const auto *p = static_cast<const std::uint8_t *>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void
    putString(const std::string &s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        putRaw(s.data(), s.size());
    }
    void
    putArray(const NamedArray &a) {
        putString(a.name);
        put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) {
            put<std::uint64_t>(d);
        }
        put<std::uint64_t>(a.data.size());
        putRaw(a.data.data(), a.data.size() * sizeof(double));
    }
    void
    section(const char tag[4], const Writer &body) {
        putRaw(tag, 4);
        put<std::uint64_t>(body.bytes.size());
        bytes.insert(bytes.end(), body.bytes.begin(), body.bytes.end());
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
  public:
    Reader(const std::uint8_t *data, std::size_t size) : mData(data), mSize(size) {}

    template <typename T>
    T
    get() {
        T value;
        std::memcpy(&value, take(sizeof(T)), sizeof(T));
        return value;
    }
    const std::uint8_t *
    take(std::size_t n) {
        if (n > mSize - mPos) {
            fail(ErrorKind::InvalidInput, "snapshot is truncated");
        }
        const std::uint8_t *p = mData + mPos;
        mPos += n;
        return p;
    }
    std::string
    getString() {
        const auto n = get<std::uint32_t>();
        const auto *p = take(n);
        return std::string(reinterpret_cast<const char *>(p), n);
    }
    NamedArray
    getArray() {
        NamedArray a;
        a.name = getString();
        const auto dims = get<std::uint32_t>();
        std::uint64_t expected = 1;
        for (std::uint32_t i = 0; i < dims; ++i) {
            a.shape.push_back(get<std::uint64_t>());
            expected *= a.shape.back();
        }
        const auto count = get<std::uint64_t>();
        if (count != expected || count > (mSize - mPos) / sizeof(double)) {
            fail(ErrorKind::InvalidInput, "snapshot array '" + a.name + "' has a bad shape");
        }
        a.data.resize(count);
        std::memcpy(a.data.data(), take(count * sizeof(double)), count * sizeof(double));
        return a;
    }
    bool
    done() const {
        return mPos == mSize;
    }

  private:
    const std::uint8_t *mData;
    std::size_t mSize;
    std::size_t mPos = 0;
};

Writer
encodeScene(const SceneModel &scene) {
    Writer w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.levels()));
    w.put<double>(scene.baseVoxelSize());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.offsetsPerVoxel()));
    w.put<double>(scene.lod.referenceDistance);
    w.put<double>(scene.lod.bias);
    w.put<double>(scene.lod.frustumMargin);
    for (int k = 0; k < scene.levels(); ++k) {
        w.put<std::uint64_t>(scene.level(k).size());
        for (const auto &v : scene.level(k)) {
            for (int a = 0; a < 3; ++a) {
                w.put<std::int32_t>(v.grid[a]);
            }
            w.putRaw(v.embedding.data(), sizeof(double) * kEmbeddingDim);
            w.putRaw(v.scale.data(), sizeof(double) * 3);
            w.putRaw(v.offsets.data(), sizeof(double) * v.offsets.size());
            w.put<std::int32_t>(v.owner);
        }
    }
    return w;
}

SceneModel
decodeScene(Reader &r) {
    const auto levels = r.get<std::uint32_t>();
    const auto delta = r.get<double>();
    const auto n = r.get<std::uint32_t>();
    if (levels < 1 || levels > 30 || n < 1 || n > 255) {
        fail(ErrorKind::InvalidInput, "snapshot scene header is out of range");
    }
    SceneModel scene(static_cast<int>(levels), delta, static_cast<int>(n));
    scene.lod.referenceDistance = r.get<double>();
    scene.lod.bias = r.get<double>();
    scene.lod.frustumMargin = r.get<double>();
    for (std::uint32_t k = 0; k < levels; ++k) {
        const auto count = r.get<std::uint64_t>();
        std::vector<VoxelRecord> voxels;
        for (std::uint64_t i = 0; i < count; ++i) {
            VoxelRecord v;
            v.level = static_cast<int>(k);
            for (int a = 0; a < 3; ++a) {
                v.grid[a] = r.get<std::int32_t>();
            }
            std::memcpy(v.embedding.data(), r.take(sizeof(double) * kEmbeddingDim),
                        sizeof(double) * kEmbeddingDim);
            std::memcpy(v.scale.data(), r.take(sizeof(double) * 3), sizeof(double) * 3);
            v.offsets.resize(n, 3);
            std::memcpy(v.offsets.data(), r.take(sizeof(double) * 3 * n), sizeof(double) * 3 * n);
            v.owner = r.get<std::int32_t>();
            voxels.push_back(std::move(v));
        }
        scene.setLevel(static_cast<int>(k), std::move(voxels));
    }
    return scene;
}

Writer
encodeDecoder(const DecoderParams &params) {
    Writer w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.offsetsPerVoxel()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.hidden()));
    const auto arrays = params.arrays();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
    const auto values = params.values();
    for (const auto &info : arrays) {
        NamedArray a;
        a.name = info.name;
        std::size_t count = 1;
        for (auto d : info.shape) {
            a.shape.push_back(d);
            count *= d;
        }
        a.data.assign(values.begin() + info.offset, values.begin() + info.offset + count);
        w.putArray(a);
    }
    return w;
}

DecoderParams
decodeDecoder(Reader &r) {
    const auto n = r.get<std::uint32_t>();
    const auto hidden = r.get<std::uint32_t>();
    if (n < 1 || n > 255 || hidden < 1 || hidden > 4096) {
        fail(ErrorKind::InvalidInput, "snapshot decoder header is out of range");
    }
    DecoderParams params(static_cast<int>(n), static_cast<int>(hidden));
    const auto expected = params.arrays();
    const auto count = r.get<std::uint32_t>();
    if (count != expected.size()) {
        fail(ErrorKind::InvalidInput, "snapshot decoder has the wrong number of arrays");
    }
    auto values = params.values();
    for (const auto &info : expected) {
        const NamedArray a = r.getArray();
        std::vector<std::uint64_t> shape(info.shape.begin(), info.shape.end());
        if (a.name != info.name || a.shape != shape) {
            fail(ErrorKind::InvalidInput, "snapshot decoder array '" + a.name + "' does not match");
        }
        std::copy(a.data.begin(), a.data.end(), values.begin() + info.offset);
    }
    return params;
}

} // namespace

std::vector<std::uint8_t>
encodeSnapshot(const Snapshot &snapshot) {
    Writer out;
    out.putRaw(kMagic, sizeof(kMagic));
    out.put<std::uint32_t>(kSnapshotVersion);
    out.section("SCN1", encodeScene(snapshot.scene));
    if (snapshot.decoder) {
        out.section("DEC1", encodeDecoder(*snapshot.decoder));
    }
    if (!snapshot.optimizer.empty() || snapshot.iteration != 0) {
        Writer opt;
        opt.put<std::uint64_t>(snapshot.iteration);
        opt.put<std::uint32_t>(static_cast<std::uint32_t>(snapshot.optimizer.size()));
        for (const auto &a : snapshot.optimizer) {
            opt.putArray(a);
        }
        out.section("OPT1", opt);
    }
    return std::move(out.bytes);
}

Snapshot
decodeSnapshot(const std::vector<std::uint8_t> &bytes) {
    Reader r(bytes.data(), bytes.size());
    if (bytes.size() < sizeof(kMagic) + 4 ||
        std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
        fail(ErrorKind::InvalidInput, "not a snapshot (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kSnapshotVersion) {
        fail(ErrorKind::InvalidInput, "unsupported snapshot version " + std::to_string(version));
    }
    Snapshot snap;
    bool haveScene = false;
    while (!r.done()) {
        const auto *tagBytes = r.take(4);
        const std::string tag(reinterpret_cast<const char *>(tagBytes), 4);
        const auto length = r.get<std::uint64_t>();
        const auto *body = r.take(length);
        Reader sec(body, length);
        if (tag == "SCN1") {
            snap.scene = decodeScene(sec);
            haveScene = true;
        } else if (tag == "DEC1") {
            snap.decoder = decodeDecoder(sec);
        } else if (tag == "OPT1") {
            snap.iteration = sec.get<std::uint64_t>();
            const auto count = sec.get<std::uint32_t>();
            for (std::uint32_t i = 0; i < count; ++i) {
                snap.optimizer.push_back(sec.getArray());
            }
        } else {
            continue; // unknown sections are skipped
        }
        if (!sec.done()) {
            fail(ErrorKind::InvalidInput, "snapshot section " + tag + " has trailing bytes");
        }
    }
    if (!haveScene) {
        fail(ErrorKind::InvalidInput, "snapshot has no scene section");
    }
    return snap;
}

void
writeSnapshot(const std::filesystem::path &path, const Snapshot &snapshot) {
    const auto bytes = encodeSnapshot(snapshot);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorKind::IoError, "failed writing " + path.string());
    }
}

Snapshot
readSnapshot(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decodeSnapshot(bytes);
}

} // namespace ph2
