#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdaut {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Scalar precision of the engine. Storage is always double; in f32 mode every
/// primitive rounds its result to the nearest float so values (and therefore
/// checkpoints) are exactly representable in 32 bits.
enum class Precision { f64, f32 };

void set_precision(Precision p);
Precision precision();

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;
    bool is_leaf = true;
};

/// Dense row-major tensor handle. Copies share the same storage; primitives
/// never mutate their inputs, they always produce a fresh tensor.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    Index rank() const { return static_cast<Index>(shape().size()); }
    /// Extent along `axis`; negative axes count from the end.
    Index dim(Index axis) const;
    Index numel() const { return static_cast<Index>(impl_->data.size()); }

    std::span<const double> data() const { return impl_->data; }
    /// Mutable access for leaves (construction, optimizer updates). Never use
    /// on a tensor that a live tape has recorded.
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }
    double item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    /// Accumulated gradient; zeros of matching shape if none has arrived.
    Tensor grad() const;
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void zero_grad();

    Tensor clone() const;
    Tensor detach() const { return clone(); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Rounds to the active precision and rejects NaN/Inf. Every primitive passes
/// its output through here.
void finalize_values(std::vector<double>& values, const char* op);

// Binary format: "DTNS", u32 rank, u64 extents, f32 payload, all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace sdaut
