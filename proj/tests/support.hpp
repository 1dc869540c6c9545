#pragma once
// Test-only helpers: scratch directories, an independent NIfTI header writer
// and a few brute-force oracles shared by the unit tests and the acceptance
// runner. Nothing here calls into the code under test.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace slant_test {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("slant-" + tag + "-" + std::to_string(gen() % 1000000000ULL));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

// Hand-rolled NIfTI-1 header writer, byte by byte, in either order.
struct RawHeader {
    std::array<int, 3> dims{1, 1, 1};
    std::array<float, 3> pixdim{1.0f, 1.0f, 1.0f};
    int datatype = 16;
    int bitpix = 32;
    float vox_offset = 352.0f;
    float slope = 1.0f;
    float inter = 0.0f;
    std::string magic = std::string("n+1\0", 4);
    int ndim = 3;
    bool big = false;
};

class ByteSink {
public:
    ByteSink(std::vector<std::uint8_t>& b, bool big) : b_(b), big_(big) {}
    void put(std::size_t off, const void* src, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(src);
        for (std::size_t i = 0; i < n; ++i) b_[off + (big_ ? n - 1 - i : i)] = p[i];
    }
    void i16(std::size_t off, int v) {
        const std::int16_t x = static_cast<std::int16_t>(v);
        put(off, &x, 2);
    }
    void i32(std::size_t off, int v) {
        const std::int32_t x = v;
        put(off, &x, 4);
    }
    void f32(std::size_t off, float v) { put(off, &v, 4); }

private:
    std::vector<std::uint8_t>& b_;
    bool big_;
};

// Assumes a little-endian host, which the byte-order tests check separately.
inline std::vector<std::uint8_t> raw_header(const RawHeader& h) {
    std::vector<std::uint8_t> b(348, 0);
    ByteSink s(b, h.big);
    s.i32(0, 348);
    s.i16(40, h.ndim);
    for (int a = 0; a < 7; ++a) s.i16(42 + 2 * a, a < 3 ? h.dims[a] : 1);
    s.i16(70, h.datatype);
    s.i16(72, h.bitpix);
    s.f32(76, 1.0f);
    for (int a = 0; a < 3; ++a) s.f32(80 + 4 * a, h.pixdim[a]);
    s.f32(108, h.vox_offset);
    s.f32(112, h.slope);
    s.f32(116, h.inter);
    std::memcpy(b.data() + 344, h.magic.data(), 4);
    return b;
}

template <class T>
void append_value(std::vector<std::uint8_t>& b, T v, bool big) {
    std::uint8_t tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    if (big) std::reverse(tmp, tmp + sizeof(T));
    b.insert(b.end(), tmp, tmp + sizeof(T));
}

// Every (x, y, z) of a grid in the order the loops visit them, x fastest.
inline std::vector<std::array<int, 3>> enumerate_voxels(std::array<int, 3> d) {
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) out.push_back({x, y, z});
    return out;
}

// Exact two-sided signed-rank p by listing all 2^n sign assignments.
// Ranks are integers (tie-free input); W+ is the sum of positive ranks.
inline double enumerate_signed_rank_p(const std::vector<double>& diffs, double* w_plus_out = nullptr) {
    std::vector<double> nz;
    for (double d : diffs)
        if (d != 0.0) nz.push_back(d);
    const int n = static_cast<int>(nz.size());
    if (n == 0) return 1.0;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(nz[a]) < std::abs(nz[b]); });
    std::vector<int> rank(n);
    for (int r = 0; r < n; ++r) rank[idx[r]] = r + 1;
    int w = 0;
    for (int i = 0; i < n; ++i)
        if (nz[i] > 0) w += rank[i];
    if (w_plus_out) *w_plus_out = w;
    long long lower = 0, upper = 0;
    const long long total = 1LL << n;
    for (long long mask = 0; mask < total; ++mask) {
        int s = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1LL << i)) s += i + 1;
        if (s <= w) ++lower;
        if (s >= w) ++upper;
    }
    const double p = 2.0 * static_cast<double>(std::min(lower, upper)) / static_cast<double>(total);
    return std::min(1.0, p);
}

}  // namespace slant_test
