#include "sdaut/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "sdaut/io.hpp"

namespace sdaut {

namespace {

Precision g_precision = Precision::f64;

constexpr std::array<char, 4> kMagic{'D', 'T', 'N', 'S'};

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("truncated tensor stream");
    return value;
}

}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : Tensor(shape, std::vector<double>(static_cast<std::size_t>(sdaut::numel(shape)), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
    for (Index e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    if (sdaut::numel(shape) != static_cast<Index>(data.size())) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::full(Shape shape, double value) {
    const auto n = static_cast<std::size_t>(sdaut::numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return impl_->shape;
}

Index Tensor::dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + to_string(shape()));
    return shape()[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

Tensor Tensor::grad() const {
    if (impl_->grad.empty()) return Tensor::zeros(impl_->shape);
    return Tensor(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void finalize_values(std::vector<double>& values, const char* op) {
    const bool round = g_precision == Precision::f32;
    for (double& v : values) {
        if (round) v = static_cast<double>(static_cast<float>(v));
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw std::runtime_error("not a DTNS tensor stream");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank == 0 || rank > 16) throw std::runtime_error("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(get_le<std::uint64_t>(in));
    std::vector<double> data(static_cast<std::size_t>(sdaut::numel(shape)));
    for (auto& v : data) v = static_cast<double>(get_le<float>(in));
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::istringstream is(read_file(path), std::ios::binary);
    return read_tensor(is);
}

}  // namespace sdaut
