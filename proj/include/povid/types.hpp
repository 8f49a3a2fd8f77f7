#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace povid {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using TokenSeq = std::vector<std::int32_t>;

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kBosId = 1;
inline constexpr std::int32_t kEosId = 2;
inline constexpr std::int32_t kSepId = 3;

// Fixed domain sizes. The feature row of one grid cell is a one-hot over
// (kind, color) pairs plus a trailing empty flag.
inline constexpr int kNumKinds = 12;
inline constexpr int kNumColors = 6;
inline constexpr int kGridRows = 4;
inline constexpr int kGridCols = 4;
inline constexpr int kNumCells = kGridRows * kGridCols;
inline constexpr int kMaxInstances = 6;
inline constexpr int kFeatureDim = kNumKinds * kNumColors + 1;

// Image features: kNumCells rows of kFeatureDim values.
template <class Scalar>
using ImageFeatures = Mat<Scalar>;

}  // namespace povid
