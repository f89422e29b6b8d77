#pragma once

#include <string>

#include "tg3d/params.hpp"
#include "tg3d/tensor.hpp"

namespace tg3d {

/// Fully connected layer stored as indices into an owning ParamSet, so copies of
/// the owner rebind automatically.
struct Linear {
  size_t weight = 0;  // [in, out]
  size_t bias = 0;    // [out]

  static Linear make(ParamSet& params, const std::string& name, int in, int out, Rng& rng, double gain = 1.0,
                     double bias_init = 0.0);
  Tensor operator()(const ParamSet& params, const Tensor& x) const;
};

/// Same-padded stride-1 convolution.
struct Conv2d {
  size_t weight = 0;  // [out, in, k, k]
  size_t bias = 0;    // [out]
  int pad = 1;

  static Conv2d make(ParamSet& params, const std::string& name, int in, int out, int k, Rng& rng,
                     double gain = 1.0);
  Tensor operator()(const ParamSet& params, const Tensor& x) const;
};

/// Maps images in [0, 1] to [-1, 1].
inline Tensor center_pixels(const Tensor& x) { return x * 2.0 - 1.0; }

}  // namespace tg3d
