#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcf/errors.hpp"

namespace lcf {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor. Most of the library works on rank-2 matrices
/// (rows = frames); vectors are stored as 1 x n rows.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor row(std::initializer_list<T> values) {
        return Tensor({1, values.size()}, std::vector<T>(values));
    }

    static Tensor row(std::span<const T> values) {
        return Tensor({1, values.size()}, std::vector<T>(values.begin(), values.end()));
    }

    static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const {
        require_matrix();
        return shape_[0];
    }
    std::size_t cols() const {
        require_matrix();
        return shape_[1];
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::span<T> row_span(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
    std::span<const T> row_span(std::size_t r) const {
        return {data_.data() + r * shape_[1], shape_[1]};
    }

    T item() const {
        if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    void require_same_shape(const Tensor& o, const char* op) const {
        if (shape_ != o.shape_) {
            throw DimensionError(std::string(op) + ": shape " + shape_str(shape_) + " vs " +
                                 shape_str(o.shape_));
        }
    }

    void require_matrix() const {
        if (shape_.size() != 2) {
            throw DimensionError("expected a matrix, got shape " + shape_str(shape_));
        }
    }

   private:
    static void check_shape(const Shape& shape) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same_shape(b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename T>
T l2_norm(std::span<const T> v) {
    long double s = 0;
    for (T x : v) s += static_cast<long double>(x) * x;
    return static_cast<T>(std::sqrt(s));
}

}  // namespace lcf
