// Noisy synthetic support set: measure accuracy, drop the corrupted rows,
// measure again.

#include <cstdio>

#include "knnkb/eval.hpp"

int main() {
  using namespace knnkb;
  SyntheticSpec spec;
  spec.label_noise_rate = 0.2;
  const auto data = generate_synthetic(spec);
  const auto r = run_elimination_experiment(data.support, data.noisy_support, data.query, 10);
  std::printf("support rows   %zu\n", data.support.samples.size());
  std::printf("removed        %zu\n", r.removed);
  std::printf("accuracy before %.4f\n", r.before.aggregates.at("accuracy"));
  std::printf("accuracy after  %.4f\n", r.after.aggregates.at("accuracy"));
}
