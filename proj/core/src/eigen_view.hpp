#pragma once

#include <Eigen/Dense>

#include "capt/tensor.hpp"

namespace capt::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Views any tensor as [size / last_dim x last_dim].
inline ConstMatrixMap as_matrix(const Tensor& t) {
  const auto c = static_cast<Eigen::Index>(t.shape().back());
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.size()) / c, c);
}

inline MatrixMap as_matrix(Tensor& t) {
  const auto c = static_cast<Eigen::Index>(t.shape().back());
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.size()) / c, c);
}

inline Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

inline Eigen::Map<Eigen::VectorXd> as_vector(Tensor& t) {
  return Eigen::Map<Eigen::VectorXd>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace capt::detail
