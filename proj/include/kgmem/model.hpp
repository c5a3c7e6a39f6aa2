#pragma once
// Decoder-only transformer trained from scratch: token + learned positional
// embeddings, pre-norm causal multi-head self-attention blocks, a
// position-wise feed-forward with configurable activation, a linear output
// head, masked cross-entropy with exact hand-derived gradients, and Adam.
//
// Everything is templated on the scalar type: training runs in float,
// gradient checking instantiates the same code in double.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgmem/grid.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

template <class Real>
using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using VecR = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

enum class Activation { relu, gelu, rrelu, softmax };
enum class Mode { train, eval };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::rrelu: return "rrelu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "rrelu") return Activation::rrelu;
  if (s == "softmax") return Activation::softmax;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct ModelConfig {
  int vocab_size = 0;  // includes pad id 0
  int d_model = 0;
  int n_layers = 1;
  int n_heads = 4;
  int ffn_dim = 0;  // 0 -> 4 * d_model
  int max_len = 0;
  Activation activation = Activation::softmax;
  double rrelu_lower = 1.0 / 8.0;
  double rrelu_upper = 1.0 / 3.0;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d_model; }

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
    if (d_model < 1) throw std::invalid_argument("ModelConfig: d_model must be >= 1");
    if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
    if (n_heads < 1) throw std::invalid_argument("ModelConfig: n_heads must be >= 1");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (max_len < 1) throw std::invalid_argument("ModelConfig: max_len must be >= 1");
    if (ffn() < 1) throw std::invalid_argument("ModelConfig: ffn_dim must be >= 1");
    if (rrelu_lower > rrelu_upper || rrelu_lower < 0)
      throw std::invalid_argument("ModelConfig: invalid rrelu slope bounds");
  }
};

// embedding_size = floor(base_params / n_layers); the result must be a
// usable width for the configured head count.
inline int derive_embedding_size(int64_t base_params, int n_layers, int n_heads = 4) {
  if (n_layers < 1) throw std::invalid_argument("derive_embedding_size: n_layers must be >= 1");
  if (base_params < n_layers)
    throw std::invalid_argument("derive_embedding_size: base_params must be >= n_layers");
  const int64_t d = base_params / n_layers;
  if (d < n_heads)
    throw std::runtime_error("derive_embedding_size: derived d_model " + std::to_string(d) +
                             " is smaller than n_heads " + std::to_string(n_heads));
  if (d % n_heads != 0)
    throw std::runtime_error("derive_embedding_size: derived d_model " + std::to_string(d) +
                             " is not divisible by n_heads " + std::to_string(n_heads));
  return static_cast<int>(d);
}

template <class Real>
struct LayerParams {
  VecR<Real> ln1_g, ln1_b;
  MatR<Real> wq, wk, wv, wo;
  VecR<Real> bq, bk, bv, bo;
  VecR<Real> ln2_g, ln2_b;
  MatR<Real> w1;
  VecR<Real> b1;
  MatR<Real> w2;
  VecR<Real> b2;
};

template <class Real>
struct Parameters {
  MatR<Real> tok_emb;  // [vocab_size x d_model]
  MatR<Real> pos_emb;  // [max_len x d_model]
  std::vector<LayerParams<Real>> layers;
  MatR<Real> head_w;  // [d_model x vocab_size]
  VecR<Real> head_b;
};

// Visit all tensors in declared order (the checkpoint / Adam order).
template <class Real, class F>
void visit_tensors(Parameters<Real>& p, F&& f) {
  f(p.tok_emb);
  f(p.pos_emb);
  for (auto& L : p.layers) {
    f(L.ln1_g);
    f(L.ln1_b);
    f(L.wq);
    f(L.bq);
    f(L.wk);
    f(L.bk);
    f(L.wv);
    f(L.bv);
    f(L.wo);
    f(L.bo);
    f(L.ln2_g);
    f(L.ln2_b);
    f(L.w1);
    f(L.b1);
    f(L.w2);
    f(L.b2);
  }
  f(p.head_w);
  f(p.head_b);
}

template <class Real, class F>
void visit_tensors(const Parameters<Real>& p, F&& f) {
  visit_tensors(const_cast<Parameters<Real>&>(p), [&](const auto& t) { f(t); });
}

template <class Real>
std::vector<std::pair<Real*, size_t>> tensor_views(Parameters<Real>& p) {
  std::vector<std::pair<Real*, size_t>> views;
  visit_tensors(p, [&](auto& t) { views.emplace_back(t.data(), static_cast<size_t>(t.size())); });
  return views;
}

template <class Real>
Parameters<Real> make_zero_params(const ModelConfig& cfg) {
  Parameters<Real> p;
  const int d = cfg.d_model, f = cfg.ffn(), v = cfg.vocab_size;
  p.tok_emb = MatR<Real>::Zero(v, d);
  p.pos_emb = MatR<Real>::Zero(cfg.max_len, d);
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& L : p.layers) {
    L.ln1_g = VecR<Real>::Zero(d);
    L.ln1_b = VecR<Real>::Zero(d);
    L.wq = MatR<Real>::Zero(d, d);
    L.wk = MatR<Real>::Zero(d, d);
    L.wv = MatR<Real>::Zero(d, d);
    L.wo = MatR<Real>::Zero(d, d);
    L.bq = VecR<Real>::Zero(d);
    L.bk = VecR<Real>::Zero(d);
    L.bv = VecR<Real>::Zero(d);
    L.bo = VecR<Real>::Zero(d);
    L.ln2_g = VecR<Real>::Zero(d);
    L.ln2_b = VecR<Real>::Zero(d);
    L.w1 = MatR<Real>::Zero(d, f);
    L.b1 = VecR<Real>::Zero(f);
    L.w2 = MatR<Real>::Zero(f, d);
    L.b2 = VecR<Real>::Zero(d);
  }
  p.head_w = MatR<Real>::Zero(d, v);
  p.head_b = VecR<Real>::Zero(v);
  return p;
}

inline int64_t count_parameters(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model, f = cfg.ffn(), v = cfg.vocab_size, L = cfg.max_len;
  const int64_t per_layer = 2 * d              // ln1
                            + 4 * (d * d + d)  // q,k,v,o projections + biases
                            + 2 * d            // ln2
                            + d * f + f        // w1 + b1
                            + f * d + d;       // w2 + b2
  return v * d + L * d + cfg.n_layers * per_layer + d * v + v;
}

namespace detail {

template <class Real>
void fill_uniform(MatR<Real>& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<Real>(rng.uniform_real(-bound, bound));
}

}  // namespace detail

// Weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); layer-norm gains 1,
// all biases 0.
template <class Real>
Parameters<Real> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Parameters<Real> p = make_zero_params<Real>(cfg);
  Rng rng = make_stream(seed, Stream::init);
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const double inv_f = 1.0 / std::sqrt(static_cast<double>(cfg.ffn()));
  detail::fill_uniform(p.tok_emb, rng, inv_d);
  detail::fill_uniform(p.pos_emb, rng, inv_d);
  for (auto& L : p.layers) {
    L.ln1_g.setOnes();
    detail::fill_uniform(L.wq, rng, inv_d);
    detail::fill_uniform(L.wk, rng, inv_d);
    detail::fill_uniform(L.wv, rng, inv_d);
    detail::fill_uniform(L.wo, rng, inv_d);
    L.ln2_g.setOnes();
    detail::fill_uniform(L.w1, rng, inv_d);
    detail::fill_uniform(L.w2, rng, inv_f);
  }
  detail::fill_uniform(p.head_w, rng, inv_d);
  return p;
}

// Exact Gaussian-CDF GELU (not the tanh approximation).
template <class Real>
Real gelu_scalar(Real x) {
  return static_cast<Real>(0.5) * x *
         (static_cast<Real>(1) + static_cast<Real>(std::erf(static_cast<double>(x) * 0.7071067811865475)));
}

template <class Real>
Real gelu_grad_scalar(Real x) {
  const double xd = static_cast<double>(x);
  const double phi = std::exp(-0.5 * xd * xd) * 0.3989422804014327;  // N(0,1) pdf
  const double Phi = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
  return static_cast<Real>(Phi + xd * phi);
}

namespace detail {

// Numerically stable softmax over a contiguous span, in place.
template <class Real>
void softmax_inplace(Real* x, int n) {
  Real mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  Real sum = 0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const Real inv = Real(1) / sum;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

}  // namespace detail

// Position-wise feed-forward activation on one hidden vector. relu/gelu/
// rrelu act elementwise; softmax normalizes across the hidden dimension.
// In train mode rrelu draws its negative slopes from rng; in eval mode it
// uses the fixed mean slope.
template <class Real>
VecR<Real> ffn_activation(const VecR<Real>& x, Activation kind, Mode mode, Rng* rng,
                          const ModelConfig& cfg) {
  VecR<Real> y = x;
  switch (kind) {
    case Activation::relu:
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = std::max(Real(0), y[i]);
      break;
    case Activation::gelu:
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = gelu_scalar(y[i]);
      break;
    case Activation::rrelu: {
      if (mode == Mode::train && rng == nullptr)
        throw std::invalid_argument("ffn_activation: rrelu in train mode needs an rng");
      // one slope per element, drawn whether or not it is used: the rng
      // stream depends only on the shape, never on the input values
      const double mean_slope = 0.5 * (cfg.rrelu_lower + cfg.rrelu_upper);
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double s =
            mode == Mode::train ? rng->uniform_real(cfg.rrelu_lower, cfg.rrelu_upper) : mean_slope;
        if (y[i] < Real(0)) y[i] = static_cast<Real>(y[i] * static_cast<Real>(s));
      }
      break;
    }
    case Activation::softmax:
      detail::softmax_inplace(y.data(), static_cast<int>(y.size()));
      break;
  }
  return y;
}

template <class Real>
struct LayerCache {
  MatR<Real> x_in;                 // residual stream entering the layer
  VecR<Real> ln1_mean, ln1_rstd;
  MatR<Real> a;                    // ln1 output
  MatR<Real> q, k, v;
  std::vector<Real> probs;         // [B*H*T*T] causal attention weights
  MatR<Real> att;                  // concatenated head outputs, pre-Wo
  MatR<Real> x_mid;                // after attention residual
  VecR<Real> ln2_mean, ln2_rstd;
  MatR<Real> bnorm;                // ln2 output
  MatR<Real> h1;                   // ffn pre-activation
  MatR<Real> z;                    // ffn post-activation
  MatR<Real> rrelu_slope;          // sampled slopes (rrelu train only)
};

template <class Real>
struct Cache {
  int B = 0, T = 0;
  std::vector<LayerCache<Real>> layers;
  MatR<Real> x_final;
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <class Real>
void layernorm_forward(const MatR<Real>& x, const VecR<Real>& gain, const VecR<Real>& bias,
                       MatR<Real>& out, VecR<Real>& mean, VecR<Real>& rstd) {
  const Eigen::Index n = x.rows(), d = x.cols();
  out.resize(n, d);
  mean.resize(n);
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Real* xr = x.data() + r * d;
    Real mu = 0;
    for (Eigen::Index j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const Real c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(var + static_cast<Real>(kLnEps));
    mean[r] = mu;
    rstd[r] = rs;
    Real* orow = out.data() + r * d;
    for (Eigen::Index j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

template <class Real>
void layernorm_backward(const MatR<Real>& x, const VecR<Real>& mean, const VecR<Real>& rstd,
                        const VecR<Real>& gain, const MatR<Real>& dy, MatR<Real>& dx,
                        VecR<Real>& dgain, VecR<Real>& dbias) {
  const Eigen::Index n = x.rows(), d = x.cols();
  dx.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Real* xr = x.data() + r * d;
    const Real* dyr = dy.data() + r * d;
    Real* dxr = dx.data() + r * d;
    const Real mu = mean[r], rs = rstd[r];
    Real m1 = 0, m2 = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const Real xhat = (xr[j] - mu) * rs;
      const Real dxhat = dyr[j] * gain[j];
      m1 += dxhat;
      m2 += dxhat * xhat;
      dgain[j] += dyr[j] * xhat;
      dbias[j] += dyr[j];
    }
    m1 /= static_cast<Real>(d);
    m2 /= static_cast<Real>(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const Real xhat = (xr[j] - mu) * rs;
      const Real dxhat = dyr[j] * gain[j];
      dxr[j] = rs * (dxhat - m1 - xhat * m2);
    }
  }
}

}  // namespace detail

// Causal forward pass. Logits come back as a [B*T x vocab] matrix (row
// b*T + t holds position t of batch row b). Eval mode never touches the
// rng; train mode consumes it only for rrelu slope sampling.
template <class Real>
MatR<Real> forward(const Parameters<Real>& params, const ModelConfig& cfg,
                   const Grid<int32_t>& tokens, Mode mode, Rng* rng = nullptr,
                   Cache<Real>* cache_out = nullptr) {
  cfg.validate();
  const int B = tokens.rows, T = tokens.cols;
  if (B < 1) throw std::invalid_argument("forward: empty batch");
  if (T > cfg.max_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(T) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  if (cfg.activation == Activation::rrelu && mode == Mode::train && rng == nullptr)
    throw std::invalid_argument("forward: rrelu in train mode needs an rng");
  for (int32_t id : tokens.data)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(id) +
                              " out of range (vocab_size=" + std::to_string(cfg.vocab_size) + ")");

  const int d = cfg.d_model, H = cfg.n_heads, hd = d / H, F = cfg.ffn();
  const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));
  const int N = B * T;

  Cache<Real> local;
  Cache<Real>& cache = cache_out ? *cache_out : local;
  cache.B = B;
  cache.T = T;
  cache.layers.resize(static_cast<size_t>(cfg.n_layers));

  MatR<Real> x(N, d);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      x.row(b * T + t) = params.tok_emb.row(tokens(b, t)) + params.pos_emb.row(t);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = params.layers[static_cast<size_t>(l)];
    auto& C = cache.layers[static_cast<size_t>(l)];
    C.x_in = x;

    detail::layernorm_forward(C.x_in, L.ln1_g, L.ln1_b, C.a, C.ln1_mean, C.ln1_rstd);
    C.q.noalias() = C.a * L.wq;
    C.q.rowwise() += L.bq.transpose();
    C.k.noalias() = C.a * L.wk;
    C.k.rowwise() += L.bk.transpose();
    C.v.noalias() = C.a * L.wv;
    C.v.rowwise() += L.bv.transpose();

    C.att.resize(N, d);
    C.probs.assign(static_cast<size_t>(B) * H * T * T, Real(0));
    std::vector<Real> scores(static_cast<size_t>(T));
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const int col = h * hd;
        for (int t = 0; t < T; ++t) {
          const Real* qrow = C.q.data() + (b * T + t) * d + col;
          for (int k = 0; k <= t; ++k) {
            const Real* krow = C.k.data() + (b * T + k) * d + col;
            Real s = 0;
            for (int j = 0; j < hd; ++j) s += qrow[j] * krow[j];
            scores[static_cast<size_t>(k)] = s * inv_sqrt_hd;
          }
          detail::softmax_inplace(scores.data(), t + 1);
          Real* prow = C.probs.data() + ((static_cast<size_t>(b) * H + h) * T + t) * T;
          for (int k = 0; k <= t; ++k) prow[k] = scores[static_cast<size_t>(k)];
          Real* orow = C.att.data() + (b * T + t) * d + col;
          for (int j = 0; j < hd; ++j) orow[j] = 0;
          for (int k = 0; k <= t; ++k) {
            const Real p = prow[k];
            const Real* vrow = C.v.data() + (b * T + k) * d + col;
            for (int j = 0; j < hd; ++j) orow[j] += p * vrow[j];
          }
        }
      }
    }

    C.x_mid.noalias() = C.att * L.wo;
    C.x_mid.rowwise() += L.bo.transpose();
    C.x_mid += C.x_in;

    detail::layernorm_forward(C.x_mid, L.ln2_g, L.ln2_b, C.bnorm, C.ln2_mean, C.ln2_rstd);
    C.h1.noalias() = C.bnorm * L.w1;
    C.h1.rowwise() += L.b1.transpose();

    C.z = C.h1;
    switch (cfg.activation) {
      case Activation::relu:
        C.z = C.z.cwiseMax(Real(0));
        break;
      case Activation::gelu:
        for (Eigen::Index i = 0; i < C.z.size(); ++i) C.z.data()[i] = gelu_scalar(C.z.data()[i]);
        break;
      case Activation::rrelu: {
        if (mode == Mode::train) {
          C.rrelu_slope.resize(N, F);
          for (Eigen::Index i = 0; i < C.z.size(); ++i) {
            const Real s = static_cast<Real>(rng->uniform_real(cfg.rrelu_lower, cfg.rrelu_upper));
            C.rrelu_slope.data()[i] = s;
            if (C.z.data()[i] < Real(0)) C.z.data()[i] *= s;
          }
        } else {
          const Real s = static_cast<Real>(0.5 * (cfg.rrelu_lower + cfg.rrelu_upper));
          for (Eigen::Index i = 0; i < C.z.size(); ++i)
            if (C.z.data()[i] < Real(0)) C.z.data()[i] *= s;
        }
        break;
      }
      case Activation::softmax:
        for (int r = 0; r < N; ++r) detail::softmax_inplace(C.z.data() + r * F, F);
        break;
    }

    x.noalias() = C.z * L.w2;
    x.rowwise() += L.b2.transpose();
    x += C.x_mid;
  }

  cache.x_final = x;
  MatR<Real> logits;
  logits.noalias() = x * params.head_w;
  logits.rowwise() += params.head_b.transpose();
  return logits;
}

// -log softmax(logits)[target] for one logits row.
template <class Real>
Real nll_from_logits(const Real* logits, int n, int32_t target) {
  Real mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  Real sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  return std::log(sum) + mx - logits[target];
}

// Masked next-token cross-entropy: a true entry of target_mask at (b, t)
// scores the token at t from the logits at t-1. Returns the mean NLL and
// exact gradients for the realized activation slopes.
template <class Real>
Real loss_and_grads(const Parameters<Real>& params, const ModelConfig& cfg,
                    const Grid<int32_t>& tokens, const Grid<uint8_t>& target_mask,
                    Parameters<Real>& grads, Rng* rng = nullptr) {
  const int B = tokens.rows, T = tokens.cols, V = cfg.vocab_size;
  if (target_mask.rows != B || target_mask.cols != T)
    throw std::invalid_argument("loss_and_grads: target_mask shape mismatch");
  int64_t n_masked = 0;
  for (int b = 0; b < B; ++b) {
    if (target_mask(b, 0))
      throw std::invalid_argument("loss_and_grads: target at position 0 has no prefix");
    for (int t = 1; t < T; ++t) n_masked += target_mask(b, t);
  }
  if (n_masked == 0) throw std::invalid_argument("loss_and_grads: empty target mask");

  Cache<Real> cache;
  MatR<Real> logits = forward(params, cfg, tokens, Mode::train, rng, &cache);

  if (grads.tok_emb.size() == 0) grads = make_zero_params<Real>(cfg);
  visit_tensors(grads, [](auto& t) { t.setZero(); });

  const int N = B * T;
  const Real inv_count = Real(1) / static_cast<Real>(n_masked);
  double total = 0;
  MatR<Real> dlogits = MatR<Real>::Zero(N, V);
  for (int b = 0; b < B; ++b) {
    for (int t = 1; t < T; ++t) {
      if (!target_mask(b, t)) continue;
      const int row = b * T + (t - 1);
      const int32_t target = tokens(b, t);
      const Real* lrow = logits.data() + static_cast<size_t>(row) * V;
      total += static_cast<double>(nll_from_logits(lrow, V, target));
      // d(nll)/dlogits = softmax - onehot
      Real* drow = dlogits.data() + static_cast<size_t>(row) * V;
      Real mx = lrow[0];
      for (int i = 1; i < V; ++i) mx = std::max(mx, lrow[i]);
      Real sum = 0;
      for (int i = 0; i < V; ++i) sum += std::exp(lrow[i] - mx);
      const Real inv_sum = Real(1) / sum;
      for (int i = 0; i < V; ++i) drow[i] += std::exp(lrow[i] - mx) * inv_sum * inv_count;
      drow[target] -= inv_count;
    }
  }

  const int d = cfg.d_model, H = cfg.n_heads, hd = d / H, F = cfg.ffn();
  const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));

  // output head
  grads.head_w.noalias() += cache.x_final.transpose() * dlogits;
  grads.head_b += dlogits.colwise().sum().transpose();
  MatR<Real> dx;
  dx.noalias() = dlogits * params.head_w.transpose();

  MatR<Real> dz(N, F), dh1(N, F), dbnorm(N, d), dxm(N, d), datt(N, d), dq(N, d), dk(N, d),
      dv(N, d), da(N, d), dtmp;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = params.layers[static_cast<size_t>(l)];
    auto& G = grads.layers[static_cast<size_t>(l)];
    const auto& C = cache.layers[static_cast<size_t>(l)];

    // ffn block: x_out = x_mid + act(ln2(x_mid) W1 + b1) W2 + b2
    G.w2.noalias() += C.z.transpose() * dx;
    G.b2 += dx.colwise().sum().transpose();
    dz.noalias() = dx * L.w2.transpose();

    switch (cfg.activation) {
      case Activation::relu:
        dh1 = (C.h1.array() > Real(0)).template cast<Real>() * dz.array();
        break;
      case Activation::gelu:
        for (Eigen::Index i = 0; i < dh1.size(); ++i)
          dh1.data()[i] = dz.data()[i] * gelu_grad_scalar(C.h1.data()[i]);
        break;
      case Activation::rrelu: {
        const bool frozen = C.rrelu_slope.size() > 0;
        const Real mean_slope = static_cast<Real>(0.5 * (cfg.rrelu_lower + cfg.rrelu_upper));
        for (Eigen::Index i = 0; i < dh1.size(); ++i) {
          const Real slope = frozen ? C.rrelu_slope.data()[i] : mean_slope;
          dh1.data()[i] = dz.data()[i] * (C.h1.data()[i] > Real(0) ? Real(1) : slope);
        }
        break;
      }
      case Activation::softmax:
        for (int r = 0; r < N; ++r) {
          const Real* zr = C.z.data() + static_cast<size_t>(r) * F;
          const Real* dzr = dz.data() + static_cast<size_t>(r) * F;
          Real dot = 0;
          for (int j = 0; j < F; ++j) dot += zr[j] * dzr[j];
          Real* dhr = dh1.data() + static_cast<size_t>(r) * F;
          for (int j = 0; j < F; ++j) dhr[j] = zr[j] * (dzr[j] - dot);
        }
        break;
    }

    G.w1.noalias() += C.bnorm.transpose() * dh1;
    G.b1 += dh1.colwise().sum().transpose();
    dbnorm.noalias() = dh1 * L.w1.transpose();
    detail::layernorm_backward(C.x_mid, C.ln2_mean, C.ln2_rstd, L.ln2_g, dbnorm, dtmp, G.ln2_g,
                               G.ln2_b);
    dxm = dx + dtmp;

    // attention block: x_mid = x_in + att(ln1(x_in)) Wo + bo
    G.wo.noalias() += C.att.transpose() * dxm;
    G.bo += dxm.colwise().sum().transpose();
    datt.noalias() = dxm * L.wo.transpose();

    dq.setZero();
    dk.setZero();
    dv.setZero();
    std::vector<Real> dprob(static_cast<size_t>(T));
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const int col = h * hd;
        for (int t = 0; t < T; ++t) {
          const Real* dorow = datt.data() + (b * T + t) * d + col;
          const Real* prow = C.probs.data() + ((static_cast<size_t>(b) * H + h) * T + t) * T;
          Real dot_pd = 0;
          for (int k = 0; k <= t; ++k) {
            const Real* vrow = C.v.data() + (b * T + k) * d + col;
            Real s = 0;
            for (int j = 0; j < hd; ++j) s += dorow[j] * vrow[j];
            dprob[static_cast<size_t>(k)] = s;
            dot_pd += prow[k] * s;
            Real* dvrow = dv.data() + (b * T + k) * d + col;
            const Real p = prow[k];
            for (int j = 0; j < hd; ++j) dvrow[j] += p * dorow[j];
          }
          const Real* qrow = C.q.data() + (b * T + t) * d + col;
          Real* dqrow = dq.data() + (b * T + t) * d + col;
          for (int k = 0; k <= t; ++k) {
            const Real dscore = prow[k] * (dprob[static_cast<size_t>(k)] - dot_pd) * inv_sqrt_hd;
            const Real* krow = C.k.data() + (b * T + k) * d + col;
            Real* dkrow = dk.data() + (b * T + k) * d + col;
            for (int j = 0; j < hd; ++j) {
              dqrow[j] += dscore * krow[j];
              dkrow[j] += dscore * qrow[j];
            }
          }
        }
      }
    }

    G.wq.noalias() += C.a.transpose() * dq;
    G.bq += dq.colwise().sum().transpose();
    G.wk.noalias() += C.a.transpose() * dk;
    G.bk += dk.colwise().sum().transpose();
    G.wv.noalias() += C.a.transpose() * dv;
    G.bv += dv.colwise().sum().transpose();
    da.noalias() = dq * L.wq.transpose();
    da.noalias() += dk * L.wk.transpose();
    da.noalias() += dv * L.wv.transpose();
    detail::layernorm_backward(C.x_in, C.ln1_mean, C.ln1_rstd, L.ln1_g, da, dtmp, G.ln1_g, G.ln1_b);
    dx = dxm + dtmp;
  }

  // embeddings
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      grads.tok_emb.row(tokens(b, t)) += dx.row(b * T + t);
      grads.pos_emb.row(t) += dx.row(b * T + t);
    }
  }

  return static_cast<Real>(total / static_cast<double>(n_masked));
}

template <class Real>
struct AdamState {
  Parameters<Real> m, v;
  int64_t step = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState make(const ModelConfig& cfg, double lr = 0.001) {
    AdamState s;
    s.m = make_zero_params<Real>(cfg);
    s.v = make_zero_params<Real>(cfg);
    s.lr = lr;
    return s;
  }
};

// Standard bias-corrected Adam update. Non-finite gradients are an error:
// training is expected to be stable, so we signal rather than clamp.
template <class Real>
void adam_step(Parameters<Real>& params, const Parameters<Real>& grads, AdamState<Real>& state) {
  auto pv = tensor_views(params);
  auto gv = tensor_views(const_cast<Parameters<Real>&>(grads));
  auto mv = tensor_views(state.m);
  auto vv = tensor_views(state.v);
  if (pv.size() != gv.size()) throw std::invalid_argument("adam_step: shape mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Real lr = static_cast<Real>(state.lr);
  const Real b1 = static_cast<Real>(state.beta1), b2 = static_cast<Real>(state.beta2);
  const Real eps = static_cast<Real>(state.epsilon);
  const Real inv_bc1 = static_cast<Real>(1.0 / bc1), inv_bc2 = static_cast<Real>(1.0 / bc2);
  for (size_t i = 0; i < pv.size(); ++i) {
    if (pv[i].second != gv[i].second) throw std::invalid_argument("adam_step: shape mismatch");
    Real* p = pv[i].first;
    const Real* g = gv[i].first;
    Real* m = mv[i].first;
    Real* v = vv[i].first;
    const size_t n = pv[i].second;
    for (size_t j = 0; j < n; ++j) {
      if (!std::isfinite(static_cast<double>(g[j])))
        throw std::runtime_error("adam_step: non-finite gradient encountered");
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      const Real mhat = m[j] * inv_bc1;
      const Real vhat = v[j] * inv_bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpointing: versioned binary container with the config, every tensor in
// declared order (parameters, then Adam first/second moments), and the
// training counters needed for bit-exact resumption.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCkptMagic[8] = {'K', 'G', 'M', 'E', 'M', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <class Real>
struct Checkpoint {
  ModelConfig cfg;
  Parameters<Real> params;
  AdamState<Real> adam;
  uint64_t seed = 0;
  int64_t epoch = 0;
};

template <class Real>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const Parameters<Real>& params, const AdamState<Real>& adam, uint64_t seed,
                     int64_t epoch) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_pod<uint32_t>(os, 1);  // format version
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(sizeof(Real)));
  detail::write_pod<int32_t>(os, cfg.vocab_size);
  detail::write_pod<int32_t>(os, cfg.d_model);
  detail::write_pod<int32_t>(os, cfg.n_layers);
  detail::write_pod<int32_t>(os, cfg.n_heads);
  detail::write_pod<int32_t>(os, cfg.ffn_dim);
  detail::write_pod<int32_t>(os, cfg.max_len);
  detail::write_pod<int32_t>(os, static_cast<int32_t>(cfg.activation));
  detail::write_pod<double>(os, cfg.rrelu_lower);
  detail::write_pod<double>(os, cfg.rrelu_upper);
  detail::write_pod<double>(os, adam.lr);
  detail::write_pod<double>(os, adam.beta1);
  detail::write_pod<double>(os, adam.beta2);
  detail::write_pod<double>(os, adam.epsilon);
  detail::write_pod<int64_t>(os, adam.step);
  detail::write_pod<uint64_t>(os, seed);
  detail::write_pod<int64_t>(os, epoch);
  auto dump = [&](const Parameters<Real>& p) {
    visit_tensors(p, [&](const auto& t) {
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(sizeof(Real) * static_cast<size_t>(t.size())));
    });
  };
  dump(params);
  dump(adam.m);
  dump(adam.v);
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  const uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t real_size = detail::read_pod<uint32_t>(is);
  if (real_size != sizeof(Real))
    throw std::runtime_error("checkpoint: scalar width mismatch");
  Checkpoint<Real> out;
  out.cfg.vocab_size = detail::read_pod<int32_t>(is);
  out.cfg.d_model = detail::read_pod<int32_t>(is);
  out.cfg.n_layers = detail::read_pod<int32_t>(is);
  out.cfg.n_heads = detail::read_pod<int32_t>(is);
  out.cfg.ffn_dim = detail::read_pod<int32_t>(is);
  out.cfg.max_len = detail::read_pod<int32_t>(is);
  out.cfg.activation = static_cast<Activation>(detail::read_pod<int32_t>(is));
  out.cfg.rrelu_lower = detail::read_pod<double>(is);
  out.cfg.rrelu_upper = detail::read_pod<double>(is);
  out.adam.lr = detail::read_pod<double>(is);
  out.adam.beta1 = detail::read_pod<double>(is);
  out.adam.beta2 = detail::read_pod<double>(is);
  out.adam.epsilon = detail::read_pod<double>(is);
  out.adam.step = detail::read_pod<int64_t>(is);
  out.seed = detail::read_pod<uint64_t>(is);
  out.epoch = detail::read_pod<int64_t>(is);
  out.cfg.validate();
  out.params = make_zero_params<Real>(out.cfg);
  out.adam.m = make_zero_params<Real>(out.cfg);
  out.adam.v = make_zero_params<Real>(out.cfg);
  auto slurp = [&](Parameters<Real>& p) {
    visit_tensors(p, [&](auto& t) {
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(sizeof(Real) * static_cast<size_t>(t.size())));
      if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    });
  };
  slurp(out.params);
  slurp(out.adam.m);
  slurp(out.adam.v);
  return out;
}

}  // namespace kgmem
