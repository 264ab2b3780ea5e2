// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference audit of every loss, the decoder and the encoders.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 100;
  /// Seeds for the (much slower) encoder readout.
  std::size_t encoder_seeds = 5;
  double tol = 1e-4;
  double eps = 1e-4;
  /// Random unit directions per parameter tensor; each is checked with a
  /// central difference along that direction.
  std::size_t directions = 2;
  std::size_t batch = 4;
  std::size_t queue = 16;
  ModelConfig model = ModelConfig::desk();
  /// Multiplies every reverse-mode gradient by (1 + fault); nonzero values
  /// exist to prove the audit can fail.
  double fault = 0.0;
};

struct ComponentResult {
  std::string name;
  double worst = 0.0;
  std::size_t checks = 0;
};

struct GradcheckReport {
  std::vector<ComponentResult> components;
  bool passed(double tol) const;
};

inline constexpr const char* kGradcheckComponents[] = {"itc", "inter", "itm", "intra", "reg", "decoder", "encoder"};

/// Worst per-tensor relative error between reverse-mode and central-difference
/// directional derivatives of `f` for one instance.
double gradient_error(const std::function<Tensor()>& f, const std::vector<Tensor>& params, Rng& rng,
                      const GradcheckOptions& opt);

/// Runs one named component over opt.seeds instances.
ComponentResult check_component(const std::string& name, const GradcheckOptions& opt);
GradcheckReport run_gradcheck(const GradcheckOptions& opt);

}  // namespace eclip
