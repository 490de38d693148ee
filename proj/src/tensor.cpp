#include "cmma/tensor.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmma {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) {
            throw std::invalid_argument("tensor shape has a zero extent: " + shape_str(shape));
        }
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.shape_ = {};
    t.data_ = {value};
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw std::invalid_argument("item() requires a size-1 tensor, got shape " + shape_str(shape_));
    }
    return data_[0];
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype) {
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(out, e);
    const char dt = static_cast<char>(dtype);
    out.write(&dt, 1);
    if (dtype == Dtype::f64) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            put_u64(out, std::bit_cast<std::uint64_t>(t[i]));
        }
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
        }
    }
    if (!out) throw std::runtime_error("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw std::runtime_error("bad tensor container: missing CMMT magic");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("unsupported tensor container version " + std::to_string(version));
    }
    const std::uint32_t rank = get_u32(in);
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_u64(in));
    char dt;
    in.read(&dt, 1);
    if (dt != 0 && dt != 1) {
        throw std::runtime_error("unknown tensor dtype tag " + std::to_string(int(dt)));
    }
    Tensor t(shape);
    if (dt == 0) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_u64(in));
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(in));
    }
    if (!in) throw std::runtime_error("tensor read truncated");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    write_tensor(f, t, dtype);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return read_tensor(f);
}

}  // namespace cmma
