#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace topodetect {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Base of all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: feeder files, configs, measurement files, bad arguments.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: singular systems, power-flow divergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A switch transition that leaves no trace on the measured buses.
class DegenerateSignatureError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Infinity norm (max absolute row sum) of a complex matrix.
inline double inf_norm(const CMatrix& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double max_abs(const CMatrix& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().maxCoeff();
}

} // namespace topodetect
