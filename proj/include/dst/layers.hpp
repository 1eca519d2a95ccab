// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks on top of the tape. Every layer owns Parameter
// pointers into a ParameterStore and exposes bind(), which places the
// parameters on a tape once so a long recurrence reuses the same nodes.
//
// Activations are row-batched: a batch of B vectors is a [B×n] matrix.
#pragma once

#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dst/autodiff.hpp"
#include "dst/random.hpp"

namespace dst {

enum class Mode { train, eval };

/// Named parameters in creation order; addresses are stable.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, BasicTensor<T> value) {
    if (find(name)) throw ConfigError("duplicate parameter name " + name);
    params_.emplace_back(name, std::move(value));
    return params_.back();
  }

  /// Matrix initialised uniform(−scale, scale).
  Parameter<T>& add_uniform(const std::string& name, Shape shape, Rng& rng, double scale = 0.1) {
    BasicTensor<T> t(std::move(shape));
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-scale, scale));
    return add(name, std::move(t));
  }

  Parameter<T>& add_zeros(const std::string& name, Shape shape) {
    return add(name, BasicTensor<T>(std::move(shape)));
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter " + name);
  }
  const Parameter<T>* find(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->find(name);
  }
  const Parameter<T>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter<T>> params_;
};

template <class T>
struct Embedding {
  Parameter<T>* weights = nullptr;

  Embedding() = default;
  Embedding(ParameterStore<T>& store, const std::string& name, std::size_t vocab,
            std::size_t dim, Rng& rng)
      : weights(&store.add_uniform(name, {vocab, dim}, rng)) {}

  std::size_t vocab_size() const { return weights->value.shape[0]; }
  std::size_t dim() const { return weights->value.shape[1]; }

  ad::Var<T> bind(ad::Tape<T>& tape, bool trainable) const {
    return tape.param(*weights, trainable);
  }
};

/// Looks up one row per id; [ids.size() × dim]. Out-of-range ids throw.
template <class T>
ad::Var<T> embed(ad::Var<T> table, std::span<const int> ids) {
  return ad::gather_rows(table, ids);
}

/// Gated recurrent unit. Gate convention:
///   z = σ(W_z x + U_z h + b_z)        update gate
///   r = σ(W_r x + U_r h + b_r)        reset gate
///   c = tanh(W_h x + U_h (r ⊙ h) + b_h)
///   h' = (1 − z) ⊙ h + z ⊙ c
template <class T>
struct GruCell {
  Parameter<T>* w_z = nullptr;
  Parameter<T>* w_r = nullptr;
  Parameter<T>* w_h = nullptr;
  Parameter<T>* u_z = nullptr;
  Parameter<T>* u_r = nullptr;
  Parameter<T>* u_h = nullptr;
  Parameter<T>* b_z = nullptr;
  Parameter<T>* b_r = nullptr;
  Parameter<T>* b_h = nullptr;

  struct Bound {
    ad::Var<T> w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h;
  };

  GruCell() = default;
  GruCell(ParameterStore<T>& store, const std::string& prefix, std::size_t input,
          std::size_t hidden, Rng& rng)
      : w_z(&store.add_uniform(prefix + ".W_z", {hidden, input}, rng)),
        w_r(&store.add_uniform(prefix + ".W_r", {hidden, input}, rng)),
        w_h(&store.add_uniform(prefix + ".W_h", {hidden, input}, rng)),
        u_z(&store.add_uniform(prefix + ".U_z", {hidden, hidden}, rng)),
        u_r(&store.add_uniform(prefix + ".U_r", {hidden, hidden}, rng)),
        u_h(&store.add_uniform(prefix + ".U_h", {hidden, hidden}, rng)),
        b_z(&store.add_zeros(prefix + ".b_z", {hidden})),
        b_r(&store.add_zeros(prefix + ".b_r", {hidden})),
        b_h(&store.add_zeros(prefix + ".b_h", {hidden})) {}

  std::size_t input_size() const { return w_z->value.shape[1]; }
  std::size_t hidden_size() const { return w_z->value.shape[0]; }

  Bound bind(ad::Tape<T>& tape, bool trainable) const {
    return {tape.param(*w_z, trainable), tape.param(*w_r, trainable),
            tape.param(*w_h, trainable), tape.param(*u_z, trainable),
            tape.param(*u_r, trainable), tape.param(*u_h, trainable),
            tape.param(*b_z, trainable), tape.param(*b_r, trainable),
            tape.param(*b_h, trainable)};
  }
};

/// One GRU update for a batch: x [B×input], h_prev [B×hidden] -> [B×hidden].
template <class T>
ad::Var<T> gru_step(ad::Var<T> x, ad::Var<T> h_prev, const typename GruCell<T>::Bound& p) {
  using namespace ad;
  if (x.shape().size() != 2 || h_prev.shape().size() != 2 ||
      x.shape()[0] != h_prev.shape()[0]) {
    throw DimensionError("gru_step batch mismatch: x " + shape_string(x.shape()) + ", h " +
                         shape_string(h_prev.shape()));
  }
  const Var<T> z = sigmoid(add_tiled(matmul_nt(x, p.w_z) + matmul_nt(h_prev, p.u_z), p.b_z));
  const Var<T> r = sigmoid(add_tiled(matmul_nt(x, p.w_r) + matmul_nt(h_prev, p.u_r), p.b_r));
  const Var<T> candidate =
      tanh(add_tiled(matmul_nt(x, p.w_h) + matmul_nt(r * h_prev, p.u_h), p.b_h));
  return one_minus(z) * h_prev + z * candidate;
}

/// Additive attention: e_t = vᵀ tanh(W_enc h_t + W_dec s), weights = softmax(e).
template <class T>
struct Attention {
  Parameter<T>* w_enc = nullptr;
  Parameter<T>* w_dec = nullptr;
  Parameter<T>* v = nullptr;

  struct Bound {
    ad::Var<T> w_enc, w_dec, v;
  };

  /// Encoder states stacked step-major ([T·B × hidden]) with their
  /// projections precomputed once per sequence.
  struct Memory {
    ad::Var<T> states;
    ad::Var<T> keys;
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::vector<int> mask;  // [B×T], 1 = real step; empty when nothing is padded
  };

  Attention() = default;
  Attention(ParameterStore<T>& store, const std::string& prefix, std::size_t hidden,
            std::size_t dec_hidden, std::size_t attn_dim, Rng& rng)
      : w_enc(&store.add_uniform(prefix + ".W_enc", {attn_dim, hidden}, rng)),
        w_dec(&store.add_uniform(prefix + ".W_dec", {attn_dim, dec_hidden}, rng)),
        v(&store.add_uniform(prefix + ".v", {1, attn_dim}, rng)) {}

  Bound bind(ad::Tape<T>& tape, bool trainable) const {
    return {tape.param(*w_enc, trainable), tape.param(*w_dec, trainable),
            tape.param(*v, trainable)};
  }
};

/// Stacks per-step encoder states ([B×hidden] each) into attention memory.
template <class T>
typename Attention<T>::Memory make_attention_memory(std::span<const ad::Var<T>> enc_states,
                                                    const typename Attention<T>::Bound& p,
                                                    std::vector<int> mask = {}) {
  if (enc_states.empty()) throw DimensionError("attention over an empty encoder sequence");
  typename Attention<T>::Memory mem;
  mem.steps = enc_states.size();
  mem.batch = enc_states.front().shape()[0];
  mem.states = enc_states.size() == 1 ? enc_states.front() : ad::concat<T>(enc_states, 0);
  mem.keys = ad::matmul_nt(mem.states, p.w_enc);
  if (!mask.empty() && mask.size() != mem.batch * mem.steps) {
    throw DimensionError("attention mask must have B×T entries");
  }
  mem.mask = std::move(mask);
  return mem;
}

template <class T>
struct AttentionResult {
  ad::Var<T> context;  // [B×hidden]
  ad::Var<T> weights;  // [B×T]
};

template <class T>
AttentionResult<T> attention(ad::Var<T> dec_state, const typename Attention<T>::Memory& mem,
                             const typename Attention<T>::Bound& p) {
  using namespace ad;
  const Var<T> query = matmul_nt(dec_state, p.w_dec);
  const Var<T> scores_col = matmul_nt(tanh(add_tiled(mem.keys, query)), p.v);  // [T·B × 1]
  Var<T> scores = reshape(scores_col, {mem.steps, mem.batch});
  scores = mem.batch == 1 ? reshape(scores, {1, mem.steps}) : transpose(scores);
  const Var<T> weights = softmax_rows(scores, std::span<const int>(mem.mask));
  return {attend(weights, mem.states), weights};
}

/// Affine layer followed by a softmax; W is [classes × input].
template <class T>
struct Dense {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  struct Bound {
    ad::Var<T> w, b;
  };

  Dense() = default;
  Dense(ParameterStore<T>& store, const std::string& prefix, std::size_t input,
        std::size_t classes, Rng& rng)
      : w(&store.add_uniform(prefix + ".W", {classes, input}, rng)),
        b(&store.add_zeros(prefix + ".b", {classes})) {}

  std::size_t classes() const { return w->value.shape[0]; }

  Bound bind(ad::Tape<T>& tape, bool trainable) const {
    return {tape.param(*w, trainable), tape.param(*b, trainable)};
  }
};

template <class T>
ad::Var<T> dense_softmax(ad::Var<T> h, const typename Dense<T>::Bound& p) {
  return ad::softmax_rows(ad::add_tiled(ad::matmul_nt(h, p.w), p.b));
}

/// −log p[gold] per row, summed. `weights` zero out padded rows.
template <class T>
ad::Var<T> cross_entropy(ad::Var<T> probs, std::span<const int> gold,
                         std::span<const T> weights = {}) {
  return ad::cross_entropy_rows(probs, gold, weights);
}

/// Inverted dropout: survivors are scaled by 1/keep_prob at train time, so
/// eval mode is the identity and returns `t` itself.
template <class T>
ad::Var<T> dropout(ad::Var<T> t, double keep_prob, Mode mode, Rng& rng) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) {
    throw ConfigError("dropout keep probability must lie in (0, 1], got " +
                      std::to_string(keep_prob));
  }
  if (mode == Mode::eval || keep_prob == 1.0) return t;
  BasicTensor<T> mask(t.shape());
  const T survivor = static_cast<T>(1.0 / keep_prob);
  for (T& m : mask.data) m = rng.bernoulli(keep_prob) ? survivor : T(0);
  return t * t.tape().constant(std::move(mask));
}

}  // namespace dst
