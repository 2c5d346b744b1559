#include "ssc/voxel.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace ssc {

VoxelGrid<uint8_t> downsample_labels(const VoxelGrid<uint8_t>& labels, int64_t factor) {
    if (factor < 1) throw std::invalid_argument("downsample_labels: factor must be positive");
    const SceneSpec& in = labels.spec;
    for (int a = 0; a < 3; ++a)
        if (in.dims[a] % factor != 0)
            throw std::invalid_argument("downsample_labels: dim " + std::to_string(in.dims[a]) +
                                        " on axis " + std::to_string(a) + " not divisible by " +
                                        std::to_string(factor));
    SceneSpec out_spec = in;
    out_spec.voxel_size *= static_cast<double>(factor);
    for (int a = 0; a < 3; ++a) out_spec.dims[a] /= factor;
    VoxelGrid<uint8_t> out(out_spec, kInvalidLabel);

    std::vector<int64_t> votes(256, 0);
    for (int64_t x = 0; x < out_spec.dims[0]; ++x)
        for (int64_t y = 0; y < out_spec.dims[1]; ++y)
            for (int64_t z = 0; z < out_spec.dims[2]; ++z) {
                std::fill(votes.begin(), votes.end(), 0);
                int64_t valid = 0;
                for (int64_t dx = 0; dx < factor; ++dx)
                    for (int64_t dy = 0; dy < factor; ++dy)
                        for (int64_t dz = 0; dz < factor; ++dz) {
                            uint8_t v = labels.at(x * factor + dx, y * factor + dy, z * factor + dz);
                            if (v == kInvalidLabel) continue;
                            ++votes[v];
                            ++valid;
                        }
                if (valid == 0) continue;  // stays invalid
                int64_t best_count = 0;
                for (int c = 0; c < 256; ++c) best_count = std::max(best_count, votes[c]);
                // Smallest non-empty class among those with the top count;
                // empty wins only when it is the sole top scorer.
                int winner = -1;
                for (int c = 1; c < 256; ++c)
                    if (votes[c] == best_count) {
                        winner = c;
                        break;
                    }
                if (winner < 0) winner = 0;
                out.at(x, y, z) = static_cast<uint8_t>(winner);
            }
    return out;
}

namespace {

constexpr char kMagic[4] = {'V', 'G', 'R', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ofstream& f, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(f, u);
}

class Reader {
  public:
    explicit Reader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
        if (!f_) throw std::runtime_error("vgrid: cannot open " + path);
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        if (!f_.read(reinterpret_cast<char*>(b), 4))
            throw std::runtime_error("vgrid: " + path_ + " truncated at offset " +
                                     std::to_string(offset_) + " reading " + what);
        offset_ += 4;
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    float f32(const char* what) {
        uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }

    void bytes(void* dst, size_t n, const char* what) {
        if (!f_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n)))
            throw std::runtime_error("vgrid: " + path_ + " truncated at offset " +
                                     std::to_string(offset_) + " reading " + what);
        offset_ += n;
    }

    size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::ifstream f_;
    size_t offset_ = 0;
};

struct Header {
    uint32_t dtype;
    SceneSpec spec;
};

Header read_header(Reader& r, uint32_t want_dtype, const char* dtype_name) {
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("vgrid: " + r.path() + " has bad magic at offset 0");
    uint32_t version = r.u32("version");
    if (version != kVersion)
        throw std::runtime_error("vgrid: " + r.path() + " has unsupported version " +
                                 std::to_string(version) + " (expected 1)");
    Header h;
    h.dtype = r.u32("dtype");
    if (h.dtype != want_dtype)
        throw std::runtime_error("vgrid: " + r.path() + " holds dtype code " +
                                 std::to_string(h.dtype) + ", expected " + dtype_name);
    h.spec.dims[0] = r.u32("dim x");
    h.spec.dims[1] = r.u32("dim y");
    h.spec.dims[2] = r.u32("dim z");
    for (int a = 0; a < 3; ++a) h.spec.origin[a] = static_cast<double>(r.f32("origin"));
    h.spec.voxel_size = static_cast<double>(r.f32("voxel size"));
    return h;
}

template <typename V>
void write_impl(const std::string& path, const VoxelGrid<V>& g, uint32_t dtype) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("vgrid: cannot write " + path);
    f.write(kMagic, 4);
    put_u32(f, kVersion);
    put_u32(f, dtype);
    for (int a = 0; a < 3; ++a) put_u32(f, static_cast<uint32_t>(g.spec.dims[a]));
    for (int a = 0; a < 3; ++a) put_f32(f, static_cast<float>(g.spec.origin[a]));
    put_f32(f, static_cast<float>(g.spec.voxel_size));
    if constexpr (sizeof(V) == 1) {
        f.write(reinterpret_cast<const char*>(g.values.data()),
                static_cast<std::streamsize>(g.values.size()));
    } else {
        // Serialize element-wise little-endian so files are byte-identical
        // across hosts.
        for (const V& v : g.values) {
            if constexpr (sizeof(V) == 2) {
                uint16_t u;
                std::memcpy(&u, &v, 2);
                unsigned char b[2] = {static_cast<unsigned char>(u),
                                      static_cast<unsigned char>(u >> 8)};
                f.write(reinterpret_cast<const char*>(b), 2);
            } else {
                uint32_t u;
                std::memcpy(&u, &v, 4);
                unsigned char b[4] = {
                    static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                    static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
                f.write(reinterpret_cast<const char*>(b), 4);
            }
        }
    }
    if (!f) throw std::runtime_error("vgrid: write failed for " + path);
}

template <typename V>
VoxelGrid<V> read_impl(const std::string& path, uint32_t dtype, const char* dtype_name) {
    Reader r(path);
    Header h = read_header(r, dtype, dtype_name);
    h.spec.validate();
    VoxelGrid<V> g(h.spec);
    if constexpr (sizeof(V) == 1) {
        r.bytes(g.values.data(), g.values.size(), "payload");
    } else if constexpr (sizeof(V) == 2) {
        for (size_t i = 0; i < g.values.size(); ++i) {
            unsigned char b[2];
            r.bytes(b, 2, "payload");
            uint16_t u = static_cast<uint16_t>(b[0]) | (static_cast<uint16_t>(b[1]) << 8);
            std::memcpy(&g.values[i], &u, 2);
        }
    } else {
        for (size_t i = 0; i < g.values.size(); ++i) {
            unsigned char b[4];
            r.bytes(b, 4, "payload");
            uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
            std::memcpy(&g.values[i], &u, 4);
        }
    }
    return g;
}

}  // namespace

void write_vgrid(const std::string& path, const VoxelGrid<uint8_t>& g) { write_impl(path, g, 0); }
void write_vgrid(const std::string& path, const VoxelGrid<uint16_t>& g) { write_impl(path, g, 1); }
void write_vgrid(const std::string& path, const VoxelGrid<float>& g) { write_impl(path, g, 2); }

VoxelGrid<uint8_t> read_vgrid_u8(const std::string& path) {
    return read_impl<uint8_t>(path, 0, "u8 (code 0)");
}
VoxelGrid<uint16_t> read_vgrid_u16(const std::string& path) {
    return read_impl<uint16_t>(path, 1, "u16 (code 1)");
}
VoxelGrid<float> read_vgrid_f32(const std::string& path) {
    return read_impl<float>(path, 2, "f32 (code 2)");
}

}  // namespace ssc
