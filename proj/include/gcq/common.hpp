#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using IVec = std::vector<long long>;
using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

/** Raised when a numerical solver fails to reach its tolerance. */
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
double log_add(double a, double b);

// log(sum exp(v_i)), summed in index order.
double log_sum_exp(const std::vector<double>& v);

}  // namespace gcq
