#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mesde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Axis-aligned parameter box.
struct Box {
  Vec lower;
  Vec upper;

  Box() = default;
  Box(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {}

  static Box uniform(std::size_t dim, double lo, double hi) {
    return Box(Vec::Constant(static_cast<Eigen::Index>(dim), lo),
               Vec::Constant(static_cast<Eigen::Index>(dim), hi));
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(lower.size()); }

  bool contains(const Vec& x) const noexcept {
    if (x.size() != lower.size()) return false;
    for (Eigen::Index k = 0; k < x.size(); ++k)
      if (!(x[k] >= lower[k] && x[k] <= upper[k])) return false;
    return true;
  }

  Vec width() const { return upper - lower; }
};

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace mesde
