#include "fei3d/matrix.hpp"

#include "fei3d/error.hpp"

#include <algorithm>
#include <cmath>

namespace fei3d {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw Error(ErrorKind::shape, "matrix data length " + std::to_string(data_.size()) + " does not match " +
                                          std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>> &rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) {
            throw Error(ErrorKind::shape, "ragged rows: row " + std::to_string(r) + " has " +
                                              std::to_string(rows[r].size()) + " columns, expected " +
                                              std::to_string(m.cols()));
        }
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

void Matrix::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::require_finite(const char *what) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw Error(ErrorKind::numeric, std::string("non-finite value in ") + what + " at (" +
                                                std::to_string(i / cols_) + ", " + std::to_string(i % cols_) + ")");
        }
    }
}

std::string Matrix::shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

void require_same_shape(const Matrix &a, const Matrix &b, const char *what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorKind::shape,
                    std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

Matrix &Matrix::operator+=(const Matrix &other) {
    require_same_shape(*this, other, "matrix add");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix &Matrix::operator-=(const Matrix &other) {
    require_same_shape(*this, other, "matrix subtract");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix &Matrix::operator*=(double scalar) noexcept {
    for (double &v : data_) {
        v *= scalar;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix &b) { return a += b; }
Matrix operator-(Matrix a, const Matrix &b) { return a -= b; }
Matrix operator*(Matrix a, double scalar) { return a *= scalar; }

Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows()) {
        throw Error(ErrorKind::shape, "matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    const std::size_t n = a.rows();
    const std::size_t inner = a.cols();
    const std::size_t m = b.cols();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double *out = c.row(i).data();
        const double *lhs = a.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double scale = lhs[k];
            const double *rhs = b.row(k).data();
            for (std::size_t j = 0; j < m; ++j) {
                out[j] += scale * rhs[j];
            }
        }
    }
    return c;
}

Matrix matmul_bt(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.cols()) {
        throw Error(ErrorKind::shape,
                    "matmul_bt: cannot multiply " + a.shape_string() + " by transpose of " + b.shape_string());
    }
    return matmul(a, transpose(b));
}

Matrix matmul_at(const Matrix &a, const Matrix &b) {
    if (a.rows() != b.rows()) {
        throw Error(ErrorKind::shape,
                    "matmul_at: cannot multiply transpose of " + a.shape_string() + " by " + b.shape_string());
    }
    const std::size_t n = a.cols();
    const std::size_t m = b.cols();
    Matrix c(n, m);
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double *lhs = a.row(k).data();
        const double *rhs = b.row(k).data();
        for (std::size_t i = 0; i < n; ++i) {
            const double scale = lhs[i];
            double *out = c.row(i).data();
            for (std::size_t j = 0; j < m; ++j) {
                out[j] += scale * rhs[j];
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix &a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            t(c, r) = a(r, c);
        }
    }
    return t;
}

Matrix slice_cols(const Matrix &a, std::size_t first, std::size_t count) {
    if (first + count > a.cols()) {
        throw Error(ErrorKind::shape, "slice_cols: columns [" + std::to_string(first) + ", " +
                                          std::to_string(first + count) + ") out of range for " + a.shape_string());
    }
    Matrix out(a.rows(), count);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto src = a.row(r).subspan(first, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Matrix gather_rows(const Matrix &a, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), a.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.rows()) {
            throw Error(ErrorKind::shape, "gather_rows: row " + std::to_string(indices[i]) + " out of range for " +
                                              a.shape_string());
        }
        auto src = a.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix hconcat(const Matrix &a, const Matrix &b) {
    if (a.rows() != b.rows()) {
        throw Error(ErrorKind::shape, "hconcat: row counts differ " + a.shape_string() + " vs " + b.shape_string());
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
        std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

double max_abs_diff(const Matrix &a, const Matrix &b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    }
    return worst;
}

}  // namespace fei3d
