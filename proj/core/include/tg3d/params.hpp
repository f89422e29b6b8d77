#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tg3d/tensor.hpp"

namespace tg3d {

/// xoshiro256** seeded through splitmix64. Bitwise reproducible across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, n).
  int uniform_int(int n);
  std::vector<double> normal_vector(size_t n, double stddev = 1.0);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

uint64_t fnv1a(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Owned collection of trainable leaves. Copying deep-copies values, so a copied
/// network never aliases the original's parameters.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  /// Registers a parameter and returns its index.
  size_t add(std::string name, const Shape& shape, std::vector<double> values);
  size_t add_normal(std::string name, const Shape& shape, Rng& rng, double stddev);
  size_t add_constant(std::string name, const Shape& shape, double value);

  const Tensor& operator[](size_t i) const { return items_[i].tensor; }
  Tensor& operator[](size_t i) { return items_[i].tensor; }
  const Tensor& get(std::string_view name) const;
  size_t size() const { return items_.size(); }
  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<NamedParam>& items() { return items_; }

  void zero_grad();
  void set_trainable(bool trainable);
  int64_t count() const;
  /// Hash of names, shapes, and raw value bytes.
  uint64_t hash() const;
  /// Copies values by name; throws on missing names or shape mismatch.
  void load_values(const std::vector<NamedParam>& src, std::string_view prefix = "");

 private:
  std::vector<NamedParam> items_;
};

/// Aliasing view of parameters from several collections with name prefixes.
std::vector<NamedParam> prefixed(const ParamSet& set, std::string_view prefix);
void append(std::vector<NamedParam>& dst, const std::vector<NamedParam>& src);
uint64_t hash_params(const std::vector<NamedParam>& params);
void zero_grad(std::vector<NamedParam>& params);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Adam over an aliasing parameter list; updates values in place.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamOptions opts);

  void step();
  void zero_grad();
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  int64_t steps() const { return t_; }

  /// Moment buffers as named arrays ("m.<name>", "v.<name>") for checkpoints.
  std::vector<NamedParam> state() const;
  void load_state(const std::vector<NamedParam>& state, int64_t steps);

 private:
  std::vector<NamedParam> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace tg3d
