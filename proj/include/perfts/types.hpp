#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace perfts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Half-open index range [lo, hi).
struct Range {
    std::size_t lo = 0;
    std::size_t hi = 0;

    std::size_t size() const { return hi > lo ? hi - lo : 0; }
    bool contains(std::size_t i) const { return i >= lo && i < hi; }
    bool operator==(const Range&) const = default;
};

}  // namespace perfts
