#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mixpretrain/errors.hpp"

namespace mixpretrain {

/// Dense row-major matrix. Vectors are 1×n matrices.
template <class T>
class Matrix {
  public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data size does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
        }
    }
    static Matrix row_vector(std::initializer_list<T> values) {
        return Matrix(1, values.size(), std::vector<T>(values));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    template <class U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

namespace kernels {

// y += a * x
template <class T>
inline void axpy(T* __restrict y, T a, const T* __restrict x, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// out (n×m) += A (n×k) · B (k×m)
template <class T>
void gemm_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        T* orow = out.data() + i * m;
        const T* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) continue;
            axpy(orow, av, b.data() + p * m, m);
        }
    }
}

// out (k×m) += Aᵀ (k×n) · G (n×m)
template <class T>
void gemm_tn_acc(const Matrix<T>& a, const Matrix<T>& g, Matrix<T>& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a.data() + i * k;
        const T* grow = g.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) continue;
            axpy(out.data() + p * m, av, grow, m);
        }
    }
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

// out (n×k) += G (n×m) · Bᵀ where B is k×m
template <class T>
void gemm_nt_acc(const Matrix<T>& g, const Matrix<T>& b, Matrix<T>& out) {
    gemm_acc(g, transpose(b), out);
}

}  // namespace kernels

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul " + shape_str(a.rows(), a.cols()) + " by " +
                         shape_str(b.rows(), b.cols()));
    }
    Matrix<T> out(a.rows(), b.cols());
    kernels::gemm_acc(a, b, out);
    return out;
}

}  // namespace mixpretrain
