#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace pufmoe {

/// Dense algebra aliases. Everything numerical runs through Eigen; the
/// templated forms keep the scalar switchable, the project-wide default
/// is double (training stability and the gradient checks depend on it).
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Scalar = double;
using Index = Eigen::Index;

using MatrixX = Matrix<Scalar>;
using VectorX = Vector<Scalar>;
using RowVectorX = RowVector<Scalar>;

/// Binary payloads (challenges, responses) live in byte matrices with one
/// column per sample; each entry is 0 or 1. Packing to real bits happens
/// only at the file-format boundary.
using BinaryMatrix = Matrix<std::uint8_t>;
using BinaryVector = Vector<std::uint8_t>;

}  // namespace pufmoe
