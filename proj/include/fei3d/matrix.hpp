#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fei3d {

/// Dense row-major matrix of doubles. Vectors are stored as N×1 or 1×N.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>> &rows);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }

    void fill(double value) noexcept;

    [[nodiscard]] bool all_finite() const noexcept;
    /// Throws a numeric error naming `what` if any element is NaN or infinite.
    void require_finite(const char *what) const;

    [[nodiscard]] std::string shape_string() const;

    Matrix &operator+=(const Matrix &other);
    Matrix &operator-=(const Matrix &other);
    Matrix &operator*=(double scalar) noexcept;

    friend bool operator==(const Matrix &a, const Matrix &b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix &b);
Matrix operator-(Matrix a, const Matrix &b);
Matrix operator*(Matrix a, double scalar);

/// a·b
Matrix matmul(const Matrix &a, const Matrix &b);
/// a·bᵀ
Matrix matmul_bt(const Matrix &a, const Matrix &b);
/// aᵀ·b
Matrix matmul_at(const Matrix &a, const Matrix &b);

Matrix transpose(const Matrix &a);

/// Column block [first, first + count).
Matrix slice_cols(const Matrix &a, std::size_t first, std::size_t count);
/// Rows selected by index, in the given order.
Matrix gather_rows(const Matrix &a, std::span<const std::size_t> indices);
/// [a ‖ b] per row.
Matrix hconcat(const Matrix &a, const Matrix &b);

double max_abs_diff(const Matrix &a, const Matrix &b);

void require_same_shape(const Matrix &a, const Matrix &b, const char *what);

}  // namespace fei3d
