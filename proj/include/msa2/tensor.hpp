#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msa2 {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<int>;

// Fixed 64-byte alignment keeps vectorized reductions independent of where
// the allocator happened to place a buffer, so results are reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Feature maps use NHWC layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? static_cast<int>(shape_.size()) + i : i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    Storage& storage() { return data_; }
    const Storage& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // NHWC accessors
    double& at(int n, int y, int x, int c) { return data_[offset(n, y, x, c)]; }
    double at(int n, int y, int x, int c) const { return data_[offset(n, y, x, c)]; }
    double* ptr(int n, int y, int x, int c) { return data_.data() + offset(n, y, x, c); }
    const double* ptr(int n, int y, int x, int c) const { return data_.data() + offset(n, y, x, c); }

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    void add_(const Tensor& other);
    void scale_(double s);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::size_t offset(int n, int y, int x, int c) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
    }

    Shape shape_;
    Storage data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace msa2
