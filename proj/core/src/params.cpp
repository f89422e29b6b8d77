#include "tg3d/params.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

namespace tg3d {

namespace {
uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& v : s_) v = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

std::vector<double> Rng::normal_vector(size_t n, double stddev) {
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * normal();
  return v;
}

uint64_t fnv1a(std::string_view bytes, uint64_t seed) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- ParamSet

ParamSet::ParamSet(const ParamSet& other) { *this = other; }

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this == &other) return *this;
  items_.clear();
  items_.reserve(other.items_.size());
  for (const auto& p : other.items_) {
    Tensor t = p.tensor.detach();
    t.set_requires_grad(p.tensor.requires_grad());
    items_.push_back({p.name, std::move(t)});
  }
  return *this;
}

size_t ParamSet::add(std::string name, const Shape& shape, std::vector<double> values) {
  for (const auto& p : items_)
    if (p.name == name) throw std::invalid_argument(fmt::format("duplicate parameter '{}'", name));
  items_.push_back({std::move(name), Tensor::parameter(shape, std::move(values))});
  return items_.size() - 1;
}

size_t ParamSet::add_normal(std::string name, const Shape& shape, Rng& rng, double stddev) {
  return add(std::move(name), shape, rng.normal_vector(static_cast<size_t>(numel(shape)), stddev));
}

size_t ParamSet::add_constant(std::string name, const Shape& shape, double value) {
  return add(std::move(name), shape, std::vector<double>(static_cast<size_t>(numel(shape)), value));
}

const Tensor& ParamSet::get(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range(fmt::format("no parameter named '{}'", name));
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void ParamSet::set_trainable(bool trainable) {
  for (auto& p : items_) p.tensor.set_requires_grad(trainable);
}

int64_t ParamSet::count() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.tensor.size();
  return n;
}

uint64_t ParamSet::hash() const { return hash_params(items_); }

void ParamSet::load_values(const std::vector<NamedParam>& src, std::string_view prefix) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : src) by_name[p.name] = &p.tensor;
  for (auto& p : items_) {
    const std::string key = std::string(prefix) + p.name;
    auto it = by_name.find(key);
    if (it == by_name.end()) throw std::runtime_error(fmt::format("missing parameter '{}'", key));
    if (it->second->shape() != p.tensor.shape()) {
      throw std::runtime_error(fmt::format("parameter '{}' has shape {}, expected {}", key,
                                           shape_str(it->second->shape()), shape_str(p.tensor.shape())));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), p.tensor.mutable_data().begin());
  }
}

std::vector<NamedParam> prefixed(const ParamSet& set, std::string_view prefix) {
  std::vector<NamedParam> out;
  out.reserve(set.size());
  for (const auto& p : set.items()) out.push_back({std::string(prefix) + p.name, p.tensor});
  return out;
}

void append(std::vector<NamedParam>& dst, const std::vector<NamedParam>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

uint64_t hash_params(const std::vector<NamedParam>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h = fnv1a(p.name, h);
    const auto& d = p.tensor.data();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double)), h);
  }
  return h;
}

void zero_grad(std::vector<NamedParam>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<NamedParam> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto value = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < value.size(); ++k) {
      m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g[k];
      v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
      const double mhat = bc1 > 0 ? m[k] / bc1 : m[k];
      const double vhat = v[k] / bc2;
      value[k] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

void Adam::zero_grad() { tg3d::zero_grad(params_); }

std::vector<NamedParam> Adam::state() const {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& shape = params_[i].tensor.shape();
    out.push_back({"m." + params_[i].name, Tensor::from(shape, m_[i])});
    out.push_back({"v." + params_[i].name, Tensor::from(shape, v_[i])});
  }
  return out;
}

void Adam::load_state(const std::vector<NamedParam>& state, int64_t steps) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : state) by_name[p.name] = &p.tensor;
  for (size_t i = 0; i < params_.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const std::string key = (which == 0 ? "m." : "v.") + params_[i].name;
      auto it = by_name.find(key);
      if (it == by_name.end()) throw std::runtime_error(fmt::format("missing optimizer state '{}'", key));
      auto& dst = which == 0 ? m_[i] : v_[i];
      if (it->second->size() != static_cast<int64_t>(dst.size())) {
        throw std::runtime_error(fmt::format("optimizer state '{}' has wrong size", key));
      }
      std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
    }
  }
  t_ = steps;
}

}  // namespace tg3d
