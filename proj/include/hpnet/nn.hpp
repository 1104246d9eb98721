#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hpnet/autodiff.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/tensor.hpp"

namespace hpnet::nn {

// Named parameter tensors. Iteration order is the lexicographic name order,
// which is also the checkpoint order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Tensor>& items() const { return params_; }
  std::map<std::string, Tensor>& items() { return params_; }
  std::size_t numel() const;
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Tensor> params_;
};

using GradMap = std::map<std::string, Tensor>;

// Places parameters on a tape on first use. Parameter values are read-only
// here, so several bindings may share one ParamStore across threads.
class Binding {
 public:
  Binding(ad::Tape& tape, const ParamStore& params, bool requires_grad = true)
      : tape_(tape), params_(params), requires_grad_(requires_grad) {}

  ad::Var operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }
  const ParamStore& params() const { return params_; }
  // Gradient per parameter after backward(); unused parameters get zeros.
  GradMap gradients() const;

 private:
  ad::Tape& tape_;
  const ParamStore& params_;
  bool requires_grad_;
  std::unordered_map<std::string, ad::Var> bound_;
};

void init_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                 bool bias = true);
ad::Var linear(Binding& b, const std::string& name, ad::Var x);

// linear -> SiLU -> linear
void init_mlp2(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
               Rng& rng);
ad::Var mlp2(Binding& b, const std::string& name, ad::Var x);

void init_layer_norm(ParamStore& ps, const std::string& name, std::size_t dim);
ad::Var layer_norm(Binding& b, const std::string& name, ad::Var x);

// Dense multi-head attention: query [q x D], keys [s x Dk], vals [s x Dv].
// mask is [q x s] with 1 = attend; empty means every key is visible.
// A query whose keys are all masked raises MaskingError.
void init_mha(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t key_dim, std::size_t val_dim,
              Rng& rng);
ad::Var mha(Binding& b, const std::string& name, ad::Var query, ad::Var keys, ad::Var vals,
            std::span<const std::uint8_t> mask, std::size_t heads);

// Central-difference gradient check. f builds a scalar from the leaves placed
// on a fresh tape. Returns max |analytic - numeric| / max(1, |numeric|) over
// the checked coordinates (all of them when coords is empty).
using ScalarFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;
struct GradCheckOptions {
  double step = 1e-5;
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (leaf, flat index)
};
double grad_check(const ScalarFn& f, const std::vector<Tensor>& point, const GradCheckOptions& opts = {});

}  // namespace hpnet::nn
