#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

#include "mmrec/error.hpp"

namespace mmrec {

/// Row-major dense matrix; vectors are stored as 1 x n rows.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable (or frozen) parameter with its gradient buffer.
template <class T>
struct Tensor {
  std::string name;
  Matrix<T> data;
  Matrix<T> grad;
  bool requires_grad = true;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), data(Matrix<T>::Zero(rows, cols)) {}

  Eigen::Index rows() const noexcept { return data.rows(); }
  Eigen::Index cols() const noexcept { return data.cols(); }
  Eigen::Index size() const noexcept { return data.size(); }

  void zero_grad() {
    if (grad.rows() != data.rows() || grad.cols() != data.cols()) {
      grad = Matrix<T>::Zero(data.rows(), data.cols());
    } else {
      grad.setZero();
    }
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.name = name;
    out.data = data.template cast<U>();
    out.requires_grad = requires_grad;
    return out;
  }
};

template <class T, class Rng>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = static_cast<T>(dist(rng));
}

template <class T>
void require_shape(const Matrix<T>& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

/// Softmax along `axis` (1 = across each row, 0 = down each column) with
/// max subtraction. Throws NumericError on non-finite input.
template <class T>
Matrix<T> softmax(const Matrix<T>& x, int axis = 1) {
  if (!x.allFinite()) throw NumericError("softmax: non-finite input");
  if (axis == 0) {
    Matrix<T> t = x.transpose();
    return softmax<T>(t, 1).transpose();
  }
  if (axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace mmrec
