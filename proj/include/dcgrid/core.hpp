#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace dcgrid {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using RowVec3 = Eigen::RowVector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using CVecX = Eigen::VectorXcd;
using CMatX = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Node identifier shared by DGUs and interior bus nodes.
using NodeId = int;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad parameters, bad shapes).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Hamiltonian matrix has eigenvalues on the imaginary axis; no stabilizing ARE solution.
class HyperbolicityError : public Error {
public:
    using Error::Error;
};

/// (A, B) pair failed the controllability test.
class UncontrollableError : public Error {
public:
    using Error::Error;
};

/// Network graph is not connected.
class DisconnectedNetworkError : public Error {
public:
    using Error::Error;
};

/// Configuration document is malformed or fails schema validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Simulation produced non-finite or runaway state.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace dcgrid
