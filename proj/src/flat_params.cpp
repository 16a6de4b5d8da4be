#include "pfhn/flat_params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pfhn/errors.hpp"

namespace pfhn {

static_assert(std::endian::native == std::endian::little,
              "FlatParams serialization assumes a little-endian host");

namespace {
constexpr std::uint32_t kMagic = 0x42504650;  // "PFPB"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated FlatParams file: " + path);
    return v;
}
}  // namespace

Matrix* FlatParams::find(const std::string& name) {
    for (auto& [n, m] : entries)
        if (n == name) return &m;
    return nullptr;
}

const Matrix* FlatParams::find(const std::string& name) const {
    for (const auto& [n, m] : entries)
        if (n == name) return &m;
    return nullptr;
}

std::size_t FlatParams::total_size() const {
    std::size_t s = 0;
    for (const auto& [n, m] : entries) s += m.size();
    return s;
}

bool FlatParams::same_layout(const FlatParams& o) const {
    if (entries.size() != o.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != o.entries[i].first) return false;
        if (!entries[i].second.same_shape(o.entries[i].second)) return false;
    }
    return true;
}

FlatParams FlatParams::zeros_like(const FlatParams& o) {
    FlatParams z;
    z.entries.reserve(o.entries.size());
    for (const auto& [n, m] : o.entries) z.entries.emplace_back(n, Matrix(m.rows, m.cols));
    return z;
}

void FlatParams::axpy(double a, const FlatParams& x) {
    if (!same_layout(x)) throw ShapeError("FlatParams::axpy layout mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& dst = entries[i].second.data;
        const auto& src = x.entries[i].second.data;
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
    }
}

void FlatParams::scale(double a) {
    for (auto& [n, m] : entries)
        for (double& v : m.data) v *= a;
}

double FlatParams::dot(const FlatParams& o) const {
    if (!same_layout(o)) throw ShapeError("FlatParams::dot layout mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& a = entries[i].second.data;
        const auto& b = o.entries[i].second.data;
        for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    }
    return s;
}

double FlatParams::norm() const {
    double s = 0.0;
    for (const auto& [n, m] : entries)
        for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

std::vector<double> FlatParams::flatten() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& [n, m] : entries) out.insert(out.end(), m.data.begin(), m.data.end());
    return out;
}

void FlatParams::unflatten(const std::vector<double>& v) {
    if (v.size() != total_size()) throw ShapeError("FlatParams::unflatten size mismatch");
    std::size_t off = 0;
    for (auto& [n, m] : entries) {
        std::copy(v.begin() + off, v.begin() + off + m.size(), m.data.begin());
        off += m.size();
    }
}

void save_flat_params(const std::string& path, const FlatParams& fp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for write: " + path);
    write_pod(out, kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(fp.entries.size()));
    for (const auto& [name, m] : fp.entries) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint64_t>(m.rows));
        write_pod(out, static_cast<std::uint64_t>(m.cols));
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    }
    if (!out) throw ParseError("write failed: " + path);
}

FlatParams load_flat_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    if (read_pod<std::uint32_t>(in, path) != kMagic)
        throw ParseError("bad magic in FlatParams file: " + path);
    if (read_pod<std::uint32_t>(in, path) != kVersion)
        throw ParseError("unsupported FlatParams version: " + path);
    const auto count = read_pod<std::uint32_t>(in, path);
    FlatParams fp;
    fp.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<std::uint64_t>(in, path);
        const auto cols = read_pod<std::uint64_t>(in, path);
        Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!in) throw ParseError("truncated FlatParams file: " + path);
        fp.entries.emplace_back(std::move(name), std::move(m));
    }
    return fp;
}

}  // namespace pfhn
