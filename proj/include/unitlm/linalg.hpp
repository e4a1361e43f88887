#pragma once

// Matrix aliases. Row-major throughout: a row is one frame / one position /
// one code, which keeps serialization order and Eigen blocks aligned.

#include <Eigen/Dense>

namespace unitlm {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

}  // namespace unitlm
