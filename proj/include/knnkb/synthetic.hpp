#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "knnkb/error.hpp"

namespace knnkb {

/// A labeled feature vector used as support or query input by the harness.
struct LabeledSample {
  std::vector<float> raw;
  std::string label;       // assigned label (possibly noisy for support rows)
  std::string source;
  std::string true_label;  // equals `label` unless the row was corrupted
};

struct LabeledQuerySet {
  std::size_t dimension = 0;
  std::vector<LabeledSample> samples;
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 200;
  std::size_t dimension = 64;
  double cluster_spread = 0.35;
  double label_noise_rate = 0.0;
  std::uint64_t seed = 7;
  // 0 = balanced. Otherwise class c keeps (1 - imbalance * c / (C - 1)) of its samples.
  double imbalance = 0.0;
};

struct SyntheticData {
  LabeledQuerySet support;
  LabeledQuerySet query;
  std::vector<std::size_t> noisy_support;  // indices into support.samples
  std::vector<std::string> class_names;
};

/// Deterministic sampling on top of mt19937_64. The standard distributions are
/// implementation defined, so uniform and normal draws are done here to keep
/// seeded datasets identical across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::string synthetic_class_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03zu", c);
  return buf;
}

/// Gaussian clusters around random unit directions, split 80/20 per class
/// into support and query rows, with a fraction of support labels flipped.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) fail(ErrorCode::kInvalidArgument, "num_classes must be >= 2");
  if (spec.samples_per_class < 2) {
    fail(ErrorCode::kInvalidArgument, "samples_per_class must be >= 2");
  }
  if (spec.dimension == 0) fail(ErrorCode::kInvalidArgument, "dimension must be >= 1");
  if (!(spec.cluster_spread >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "cluster_spread must be nonnegative");
  }
  if (!(spec.label_noise_rate >= 0.0 && spec.label_noise_rate < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "label_noise_rate must be in [0, 1)");
  }
  if (!(spec.imbalance >= 0.0 && spec.imbalance < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "imbalance must be in [0, 1)");
  }

  SeededRng rng(spec.seed);
  SyntheticData data;
  data.support.dimension = spec.dimension;
  data.query.dimension = spec.dimension;
  const std::size_t d = spec.dimension;

  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto name = synthetic_class_name(c);
    data.class_names.push_back(name);

    std::vector<double> mean(d);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& m : mean) {
        m = rng.normal();
        norm += m * m;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& m : mean) m /= norm;

    std::size_t count = spec.samples_per_class;
    if (spec.imbalance > 0.0) {
      const double keep = 1.0 - spec.imbalance * static_cast<double>(c) /
                                    static_cast<double>(spec.num_classes - 1);
      count = std::max<std::size_t>(
          2, static_cast<std::size_t>(std::llround(keep * static_cast<double>(count))));
    }
    const std::size_t support_n = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(count))), 1, count - 1);

    for (std::size_t i = 0; i < count; ++i) {
      LabeledSample s;
      s.raw.resize(d);
      for (std::size_t j = 0; j < d; ++j) {
        s.raw[j] = static_cast<float>(mean[j] + spec.cluster_spread * rng.normal());
      }
      s.label = name;
      s.true_label = name;
      char src[64];
      std::snprintf(src, sizeof src, "%s/%05zu", name.c_str(), i);
      s.source = src;
      (i < support_n ? data.support : data.query).samples.push_back(std::move(s));
    }
  }

  const auto n_support = data.support.samples.size();
  const auto n_noisy = static_cast<std::size_t>(
      std::llround(spec.label_noise_rate * static_cast<double>(n_support)));
  if (n_noisy > 0) {
    std::vector<std::size_t> order(n_support);
    for (std::size_t i = 0; i < n_support; ++i) order[i] = i;
    // Partial Fisher-Yates: the first n_noisy slots are a uniform sample.
    for (std::size_t i = 0; i < n_noisy; ++i) {
      std::swap(order[i], order[i + rng.below(n_support - i)]);
    }
    order.resize(n_noisy);
    std::sort(order.begin(), order.end());
    for (auto idx : order) {
      auto& s = data.support.samples[idx];
      std::size_t truth = 0;
      while (data.class_names[truth] != s.true_label) ++truth;
      const auto wrong = (truth + 1 + rng.below(spec.num_classes - 1)) % spec.num_classes;
      s.label = data.class_names[wrong];
    }
    data.noisy_support = std::move(order);
  }
  return data;
}

}  // namespace knnkb
