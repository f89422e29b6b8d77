#include "tg3d/layers.hpp"

#include <cmath>

namespace tg3d {

Linear Linear::make(ParamSet& params, const std::string& name, int in, int out, Rng& rng, double gain,
                    double bias_init) {
  Linear l;
  l.weight = params.add_normal(name + ".weight", {in, out}, rng, gain / std::sqrt(static_cast<double>(in)));
  l.bias = params.add_constant(name + ".bias", {out}, bias_init);
  return l;
}

Tensor Linear::operator()(const ParamSet& params, const Tensor& x) const {
  return add_bias(matmul(x, params[weight]), params[bias]);
}

Conv2d Conv2d::make(ParamSet& params, const std::string& name, int in, int out, int k, Rng& rng, double gain) {
  Conv2d c;
  c.pad = k / 2;
  c.weight = params.add_normal(name + ".weight", {out, in, k, k}, rng, gain / std::sqrt(static_cast<double>(in * k * k)));
  c.bias = params.add_constant(name + ".bias", {out}, 0.0);
  return c;
}

Tensor Conv2d::operator()(const ParamSet& params, const Tensor& x) const {
  return add_channel_bias(conv2d(x, params[weight], pad), params[bias]);
}

}  // namespace tg3d
