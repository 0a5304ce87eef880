#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "knnkb/error.hpp"

namespace knnkb {

/// Dot product of two float vectors. Products are widened to double and summed
/// strictly left to right, so a given pair of inputs always yields the same bits.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

inline double euclidean_norm(std::span<const float> v) noexcept {
  return std::sqrt(dot(v, v));
}

/// Cosine distance between two unit vectors: 1 - <a, b>. Not clamped, so the
/// result may leave [0, 2] by float rounding of the inputs' norms.
inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kInvalidArgument, "dimension mismatch: " + std::to_string(a.size()) +
                                          " vs " + std::to_string(b.size()));
  }
  return 1.0 - dot(a, b);
}

struct Normalized {
  std::vector<float> unit;
  float norm = 0.0f;
};

/// Scales a raw vector to unit length. Zero and non-finite vectors are rejected
/// because cosine distance is undefined for them.
inline Normalized normalize(std::span<const float> raw) {
  if (raw.empty()) fail(ErrorCode::kInvalidArgument, "vector must not be empty");
  const double norm = euclidean_norm(raw);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    fail(ErrorCode::kInvalidArgument, "vector norm must be finite and positive");
  }
  Normalized out;
  out.unit.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.unit[i] = static_cast<float>(static_cast<double>(raw[i]) / norm);
  }
  out.norm = static_cast<float>(norm);
  return out;
}

}  // namespace knnkb
