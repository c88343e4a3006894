#include "lazyllm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lazyllm/errors.hpp"

namespace lazyllm {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

void Matrix::append_row(std::span<const float> r) {
    if (rows_ == 0 && cols_ == 0) {
        cols_ = r.size();
    } else if (r.size() != cols_) {
        throw ShapeError("append_row: row length " + std::to_string(r.size()) + " != " +
                         std::to_string(cols_));
    }
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("max_abs_diff: shape mismatch");
    }
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

}  // namespace lazyllm
