#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace af {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy, mapped to CLI exit codes: usage/config -> 2, numeric -> 3, I/O -> 4.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

inline void check_finite(const Mat& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + where);
}

inline void check_finite(double x, const std::string& where) {
  if (!std::isfinite(x)) throw NumericError("non-finite value in " + where);
}

// Sinusoidal featurization of a scalar in [0, 1]: 16 geometrically spaced
// frequencies, sin/cos interleaved, 32 values total.
inline constexpr int kTimeEmbedFreqs = 16;
inline constexpr int kTimeEmbedDim = 2 * kTimeEmbedFreqs;

Vec time_embedding(double t);

}  // namespace af
