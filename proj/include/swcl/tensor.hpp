#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "swcl/error.hpp"

namespace swcl {

/// Dense row-major tensor of 64-bit floats. On disk tensors are stored as
/// 32-bit floats (F32T format below); all in-memory arithmetic is double.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != count(shape_)) {
            throw ValidationError("Tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape product " +
                                  std::to_string(count(shape_)));
        }
    }

    /// Checked construction: additionally rejects NaN/Inf entries.
    static Tensor checked(std::vector<std::size_t> shape, std::vector<double> values) {
        Tensor t(std::move(shape), std::move(values));
        t.ensure_finite("Tensor::checked");
        return t;
    }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    void ensure_finite(const char* what) const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw NumericalError(std::string(what) + ": non-finite entry at index " +
                                     std::to_string(i));
            }
        }
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Named parameters. std::map keeps iteration lexicographic, which pins the
/// parameter order everywhere (checkpoints, gradient checks, updates).
using NetworkParams = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

inline Gradients zeros_like(const NetworkParams& params) {
    Gradients g;
    for (const auto& [name, t] : params) g.emplace(name, Tensor(t.shape()));
    return g;
}

inline void check_same_keys(const NetworkParams& params, const Gradients& grads,
                            const char* what) {
    if (params.size() != grads.size())
        throw ValidationError(std::string(what) + ": key count mismatch");
    auto pi = params.begin();
    auto gi = grads.begin();
    for (; pi != params.end(); ++pi, ++gi) {
        if (pi->first != gi->first)
            throw ValidationError(std::string(what) + ": key mismatch at '" + pi->first + "'");
    }
}

// ---------------------------------------------------------------------------
// F32T tensor container: magic "F32T", little-endian u32 ndim, ndim u32
// extents, row-major little-endian f32 payload. Checkpoints are a
// length-prefixed sequence of (UTF-8 name, tensor in this format).
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is, const std::string& ctx) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ValidationError("truncated tensor stream: " + ctx);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32_le(os, v);
}

inline float get_f32_le(std::istream& is, const std::string& ctx) {
    std::uint32_t v = get_u32_le(is, ctx);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace detail

inline void write_tensor_f32(std::ostream& os, const Tensor& t) {
    os.write("F32T", 4);
    detail::put_u32_le(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape())
        detail::put_u32_le(os, static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < t.size(); ++i)
        detail::put_f32_le(os, static_cast<float>(t[i]));
}

inline Tensor read_tensor_f32(std::istream& is, const std::string& ctx) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "F32T", 4) != 0)
        throw ValidationError("bad tensor magic (expected F32T): " + ctx);
    std::uint32_t ndim = detail::get_u32_le(is, ctx);
    if (ndim > 8) throw ValidationError("implausible tensor rank in " + ctx);
    std::vector<std::size_t> shape(ndim);
    for (auto& e : shape) e = detail::get_u32_le(is, ctx);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(detail::get_f32_le(is, ctx));
    return t;
}

inline void save_tensor_f32(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path.string());
    write_tensor_f32(os, t);
    if (!os) throw ValidationError("write failed: " + path.string());
}

inline Tensor load_tensor_f32(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("missing tensor file: " + path.string());
    return read_tensor_f32(is, path.string());
}

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path.string());
    detail::put_u32_le(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        detail::put_u32_le(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_f32(os, t);
    }
    if (!os) throw ValidationError("write failed: " + path.string());
}

inline NetworkParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("missing checkpoint: " + path.string());
    std::uint32_t n = detail::get_u32_le(is, path.string());
    NetworkParams params;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t len = detail::get_u32_le(is, path.string());
        std::string name(len, '\0');
        if (!is.read(name.data(), len))
            throw ValidationError("truncated checkpoint name: " + path.string());
        params.emplace(std::move(name), read_tensor_f32(is, path.string()));
    }
    return params;
}

}  // namespace swcl
