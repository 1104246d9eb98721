#include "hpnet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "hpnet/errors.hpp"

namespace hpnet::nn {

void ParamStore::add(const std::string& name, Tensor init) {
  if (!params_.emplace(name, std::move(init)).second) throw Error("duplicate parameter " + name);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

ad::Var Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ad::Var v = tape_.leaf(params_.at(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

GradMap Binding::gradients() const {
  GradMap out;
  for (const auto& [name, t] : params_.items()) {
    auto it = bound_.find(name);
    out.emplace(name, it == bound_.end() ? Tensor(t.shape(), 0.0) : ad::grad_of(it->second));
  }
  return out;
}

void init_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias) {
  // Glorot-uniform weights, zero bias
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(Shape{in, out});
  for (auto& v : w.values()) v = rng.uniform(-limit, limit);
  ps.add(name + ".w", std::move(w));
  if (bias) ps.add(name + ".b", Tensor(Shape{out}, 0.0));
}

ad::Var linear(Binding& b, const std::string& name, ad::Var x) {
  const std::string bias = name + ".b";
  if (b.params().contains(bias)) return ad::linear(x, b(name + ".w"), b(bias));
  return ad::linear(x, b(name + ".w"));
}

void init_mlp2(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
               Rng& rng) {
  init_linear(ps, name + ".l1", in, hidden, rng);
  init_linear(ps, name + ".l2", hidden, out, rng);
}

ad::Var mlp2(Binding& b, const std::string& name, ad::Var x) {
  return linear(b, name + ".l2", ad::silu(linear(b, name + ".l1", x)));
}

void init_layer_norm(ParamStore& ps, const std::string& name, std::size_t dim) {
  ps.add(name + ".g", Tensor(Shape{dim}, 1.0));
  ps.add(name + ".b", Tensor(Shape{dim}, 0.0));
}

ad::Var layer_norm(Binding& b, const std::string& name, ad::Var x) {
  return ad::layer_norm(x, b(name + ".g"), b(name + ".b"));
}

void init_mha(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t key_dim, std::size_t val_dim,
              Rng& rng) {
  init_linear(ps, name + ".q", dim, dim, rng);
  init_linear(ps, name + ".k", key_dim, dim, rng);
  init_linear(ps, name + ".v", val_dim, dim, rng);
  init_linear(ps, name + ".o", dim, dim, rng);
}

ad::Var mha(Binding& b, const std::string& name, ad::Var query, ad::Var keys, ad::Var vals,
            std::span<const std::uint8_t> mask, std::size_t heads) {
  const std::size_t nq = query.value().rows();
  const std::size_t ns = keys.value().rows();
  if (vals.value().rows() != ns) {
    throw DimensionError("mha: keys " + shape_str(keys.shape()) + " and values " + shape_str(vals.shape()) +
                         " are not row-aligned");
  }
  if (!mask.empty() && mask.size() != nq * ns) throw DimensionError("mha: mask must be [queries x keys]");
  ad::EdgeList edges;
  edges.offsets.push_back(0);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ns; ++j) {
      if (mask.empty() || mask[i * ns + j]) edges.src.push_back(static_cast<int>(j));
    }
    if (static_cast<int>(edges.src.size()) == edges.offsets.back()) {
      throw MaskingError("mha: every key is masked for query " + std::to_string(i));
    }
    edges.offsets.push_back(static_cast<int>(edges.src.size()));
  }
  ad::Var q = linear(b, name + ".q", query);
  ad::Var k = linear(b, name + ".k", keys);
  ad::Var v = linear(b, name + ".v", vals);
  ad::Var mixed = ad::graph_attention(q, k, std::nullopt, v, std::nullopt, edges, heads);
  return linear(b, name + ".o", mixed);
}

double grad_check(const ScalarFn& f, const std::vector<Tensor>& point, const GradCheckOptions& opts) {
  auto evaluate = [&f](const std::vector<Tensor>& at) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    leaves.reserve(at.size());
    for (const auto& t : at) leaves.push_back(tape.leaf(t, false));
    return f(tape, leaves).value()[0];
  };

  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : point) leaves.push_back(tape.leaf(t, true));
  ad::Var out = f(tape, leaves);
  if (out.value().size() != 1) throw DimensionError("grad_check: function must return a scalar");
  if (!std::isfinite(out.value()[0])) throw NumericError("grad_check: f(point) is not finite");
  tape.backward(out);

  std::vector<std::pair<std::size_t, std::size_t>> coords = opts.coords;
  if (coords.empty()) {
    for (std::size_t l = 0; l < point.size(); ++l)
      for (std::size_t i = 0; i < point[l].size(); ++i) coords.emplace_back(l, i);
  }

  std::vector<Tensor> analytic;
  for (const auto& leaf : leaves) analytic.push_back(ad::grad_of(leaf));
  double worst = 0.0;
  std::vector<Tensor> probe = point;
  for (auto [l, i] : coords) {
    const double x0 = point[l][i];
    probe[l][i] = x0 + opts.step;
    const double fp = evaluate(probe);
    probe[l][i] = x0 - opts.step;
    const double fm = evaluate(probe);
    probe[l][i] = x0;
    const double numeric = (fp - fm) / (2.0 * opts.step);
    worst = std::max(worst, std::abs(analytic[l][i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace hpnet::nn
