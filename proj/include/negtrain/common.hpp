#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace negtrain {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved vocabulary indices.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumSpecials = 4;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a loss or gradient turns NaN/inf during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace negtrain
