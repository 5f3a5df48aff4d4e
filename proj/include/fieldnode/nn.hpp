#pragma once

// Parameter storage and the small set of layers the model is built from.

#include <cmath>
#include <deque>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fieldnode/autodiff.hpp"

namespace fieldnode::nn {

using ad::Graph;
using ad::Index;
using ad::Matrix;
using ad::Parameter;
using ad::Var;

using Rng = std::mt19937_64;

// Owns parameters keyed by module path ("ssm/gru/wx"). Addresses are stable
// for the store's lifetime, so layers hold raw pointers into it.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& add(std::string name, Index rows, Index cols) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(Parameter<T>{std::move(name), Matrix<T>::Zero(rows, cols), Matrix<T>::Zero(rows, cols)});
    return params_.back();
  }

  [[nodiscard]] Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Every parameter whose name starts with `prefix` (all when empty).
  [[nodiscard]] std::vector<Parameter<T>*> group(std::string_view prefix = {}) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if (p.name.starts_with(prefix)) out.push_back(&p);
    return out;
  }

  [[nodiscard]] std::vector<const Parameter<T>*> group(std::string_view prefix = {}) const {
    std::vector<const Parameter<T>*> out;
    for (const auto& p : params_)
      if (p.name.starts_with(prefix)) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter<T>> params_;
};

template <class T>
void init_uniform(Parameter<T>& p, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

enum class Activation { elu, tanh, none };

template <class T>
Var<T> activate(const Var<T>& x, Activation act) {
  switch (act) {
    case Activation::elu:
      return ad::elu(x);
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::none:
      break;
  }
  return x;
}

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, Index in, Index out, Rng& rng)
      : weight_(&store.add(name + "/weight", in, out)), bias_(&store.add(name + "/bias", 1, out)) {
    init_uniform(*weight_, static_cast<T>(std::sqrt(6.0 / static_cast<double>(in + out))), rng);
  }

  Var<T> operator()(Graph<T>& g, const Var<T>& x) const {
    return ad::add_row(ad::matmul(x, g.parameter(*weight_)), g.parameter(*bias_));
  }

  void zero() {
    weight_->value.setZero();
    bias_->value.setZero();
  }

  [[nodiscard]] Index in_dim() const { return weight_->value.rows(); }
  [[nodiscard]] Index out_dim() const { return weight_->value.cols(); }
  [[nodiscard]] Parameter<T>& weight() const { return *weight_; }
  [[nodiscard]] Parameter<T>& bias() const { return *bias_; }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

// `hidden_layers` hidden layers of width `hidden` with the given activation,
// followed by a linear output layer.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, Index in, Index hidden, int hidden_layers, Index out,
      Rng& rng, Activation act = Activation::elu)
      : act_(act) {
    Index prev = in;
    for (int l = 0; l < hidden_layers; ++l) {
      layers_.emplace_back(store, name + "/fc" + std::to_string(l), prev, hidden, rng);
      prev = hidden;
    }
    layers_.emplace_back(store, name + "/out", prev, out, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) x = activate(layers_[l](g, x), act_);
    return layers_.back()(g, x);
  }

  void zero_output() { layers_.back().zero(); }
  [[nodiscard]] Linear<T>& output() { return layers_.back(); }
  [[nodiscard]] Index in_dim() const { return layers_.front().in_dim(); }
  [[nodiscard]] Index out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<Linear<T>> layers_;
  Activation act_ = Activation::elu;
};

// Gated recurrent unit:
//   r = sig(x Wxr + h Whr + b), u = sig(x Wxu + h Whu + b),
//   n = tanh(x Wxn + r * (h Whn + b)),  h' = n + u * (h - n).
template <class T>
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore<T>& store, const std::string& name, Index in, Index hidden, Rng& rng)
      : hidden_(hidden),
        wx_(&store.add(name + "/wx", in, 3 * hidden)),
        wh_(&store.add(name + "/wh", hidden, 3 * hidden)),
        bx_(&store.add(name + "/bx", 1, 3 * hidden)),
        bh_(&store.add(name + "/bh", 1, 3 * hidden)) {
    init_uniform(*wx_, static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden))), rng);
    init_uniform(*wh_, static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden))), rng);
  }

  Var<T> operator()(Graph<T>& g, const Var<T>& x, const Var<T>& h) const {
    require_shape(h.cols() == hidden_, "gru: hidden state width mismatch");
    Var<T> gx = ad::add_row(ad::matmul(x, g.parameter(*wx_)), g.parameter(*bx_));
    Var<T> gh = ad::add_row(ad::matmul(h, g.parameter(*wh_)), g.parameter(*bh_));
    Var<T> r = ad::sigmoid(ad::slice_cols(gx, 0, hidden_) + ad::slice_cols(gh, 0, hidden_));
    Var<T> u = ad::sigmoid(ad::slice_cols(gx, hidden_, hidden_) + ad::slice_cols(gh, hidden_, hidden_));
    Var<T> n = ad::tanh(ad::slice_cols(gx, 2 * hidden_, hidden_) + ad::mul(r, ad::slice_cols(gh, 2 * hidden_, hidden_)));
    return n + ad::mul(u, h - n);
  }

  [[nodiscard]] Index hidden() const { return hidden_; }
  // Input-side bias block of the update gate (columns [H, 2H) of bx).
  [[nodiscard]] Parameter<T>& input_bias() const { return *bx_; }

 private:
  Index hidden_ = 0;
  Parameter<T>* wx_ = nullptr;
  Parameter<T>* wh_ = nullptr;
  Parameter<T>* bx_ = nullptr;
  Parameter<T>* bh_ = nullptr;
};

}  // namespace fieldnode::nn
