#pragma once

#include "cenet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cenet {

// Elementwise arithmetic --------------------------------------------------

template <typename S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data + b.value().data));
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    accumulate(self, 0, self.grad.data);
    accumulate(self, 1, self.grad.data);
  });
}

template <typename S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data - b.value().data));
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    accumulate(self, 0, self.grad.data);
    accumulate(self, 1, -self.grad.data);
  });
}

template <typename S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data.cwiseProduct(b.value().data)));
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (wants_grad(self, 0)) accumulate(self, 0, self.grad.data.cwiseProduct(parent_value(self, 1).data));
    if (wants_grad(self, 1)) accumulate(self, 1, self.grad.data.cwiseProduct(parent_value(self, 0).data));
  });
}

template <typename S>
Var<S> operator/(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(), "div: shape mismatch");
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data.cwiseQuotient(b.value().data)));
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    const auto& bv = parent_value(self, 1).data;
    if (wants_grad(self, 0)) accumulate(self, 0, self.grad.data.cwiseQuotient(bv));
    if (wants_grad(self, 1)) {
      const auto& av = parent_value(self, 0).data;
      accumulate(self, 1, -(self.grad.data.array() * av.array() / (bv.array() * bv.array())).matrix());
    }
  });
}

template <typename S>
Var<S> operator*(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data * s));
  return make_result<S>(std::move(out), {a}, [s](Node<S>& self) { accumulate(self, 0, self.grad.data * s); });
}

template <typename S>
Var<S> operator*(S s, const Var<S>& a) {
  return a * s;
}

template <typename S>
Var<S> operator+(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().data.array() + s));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) { accumulate(self, 0, self.grad.data); });
}

template <typename S>
Var<S> operator-(const Var<S>& a, S s) {
  return a + (-s);
}

template <typename S>
Var<S> operator-(S s, const Var<S>& a) {
  return (a * S(-1)) + s;
}

/// Gradient barrier: same value, never differentiated through.
template <typename S>
Var<S> detach(const Var<S>& a) {
  return Var<S>::constant(a.value());
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) { accumulate(self, 0, self.grad.data); });
}

// Unary maps ---------------------------------------------------------------

namespace detail {
template <typename S, typename F, typename D>
Var<S> unary(const Var<S>& a, F f, D dfdx) {
  Tensor<S> out(a.shape());
  const auto& in = a.value().data;
  for (Index i = 0; i < in.size(); ++i) out.data[i] = f(in[i]);
  return make_result<S>(std::move(out), {a}, [dfdx](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    const auto& x = parent_value(self, 0).data;
    auto& g = parent_grad(self, 0).data;
    for (Index i = 0; i < x.size(); ++i) g[i] += self.grad.data[i] * dfdx(x[i], self.value.data[i]);
  });
}
}  // namespace detail

template <typename S>
Var<S> relu(const Var<S>& a) {
  return detail::unary(a, [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); }, [](S, S y) { return y * (S(1) - y); });
}

/// Exact (erf) GELU.
template <typename S>
Var<S> gelu(const Var<S>& a) {
  constexpr S inv_sqrt2 = S(0.70710678118654752440);
  constexpr S inv_sqrt2pi = S(0.39894228040143267794);
  return detail::unary(
      a, [](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [](S x, S) { return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x); });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  return detail::unary(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  return detail::unary(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

/// |x| with subgradient 0 at the kink.
template <typename S>
Var<S> abs(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return std::abs(x); }, [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return detail::unary(a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> sqrt(const Var<S>& a) {
  return detail::unary(a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

// Reductions ---------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.value().data.sum());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    if (wants_grad(self, 0)) parent_grad(self, 0).data.array() += self.grad.data[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  require(a.size() > 0, "mean: empty tensor");
  return sum(a) * (S(1) / static_cast<S>(a.size()));
}

/// Sum of a list of scalars.
template <typename S>
Var<S> add_all(const std::vector<Var<S>>& terms) {
  require(!terms.empty(), "add_all: no terms");
  Var<S> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return acc;
}

// Linear algebra -------------------------------------------------------------

/// x[..., in] * w[in, out] (+ b[out]).
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b = Var<S>()) {
  const Index in = w.dim(0), out_dim = w.dim(1);
  require(x.value().last() == in, "linear: input width " + std::to_string(x.value().last()) + " != " + std::to_string(in));
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor<S> out(shape);
  const Index rows = x.value().rows();
  out.matrix(rows, out_dim).noalias() = x.value().matrix(rows, in) * w.value().matrix(in, out_dim);
  const bool has_bias = b.defined();
  if (has_bias) out.matrix(rows, out_dim).rowwise() += b.value().data.transpose();
  std::vector<Var<S>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<S>(std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node<S>& self) {
    auto g = self.grad.matrix(rows, out_dim);
    if (wants_grad(self, 0))
      parent_grad(self, 0).matrix(rows, in).noalias() += g * parent_value(self, 1).matrix(in, out_dim).transpose();
    if (wants_grad(self, 1))
      parent_grad(self, 1).matrix(in, out_dim).noalias() += parent_value(self, 0).matrix(rows, in).transpose() * g;
    if (has_bias && wants_grad(self, 2)) parent_grad(self, 2).data += g.colwise().sum().transpose();
  });
}

/// a[m,k] * b[n,k]^T.
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1), "matmul_nt: shape mismatch");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<S> out({m, n});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  return make_result<S>(std::move(out), {a, b}, [m, k, n](Node<S>& self) {
    auto g = self.grad.matrix(m, n);
    if (wants_grad(self, 0)) parent_grad(self, 0).matrix(m, k).noalias() += g * parent_value(self, 1).matrix(n, k);
    if (wants_grad(self, 1))
      parent_grad(self, 1).matrix(n, k).noalias() += g.transpose() * parent_value(self, 0).matrix(m, k);
  });
}

/// x[..., D] + v[D] broadcast over every row. More generally `v` may carry
/// any trailing sub-shape of `x` (e.g. a [T, D] position table on [B, T, D]).
template <typename S>
Var<S> add_trailing(const Var<S>& x, const Var<S>& v) {
  const Index block = v.size();
  require(block > 0 && x.size() % block == 0, "add_trailing: incompatible shapes " + shape_string(x.shape()) + " + " +
                                                  shape_string(v.shape()));
  const Shape& xs = x.shape();
  const Shape& vs = v.shape();
  require(vs.size() <= xs.size() && std::equal(vs.rbegin(), vs.rend(), xs.rbegin()),
          "add_trailing: " + shape_string(vs) + " is not a trailing shape of " + shape_string(xs));
  const Index reps = x.size() / block;
  Tensor<S> out(x.shape());
  out.matrix(reps, block) = x.value().matrix(reps, block).rowwise() + v.value().data.transpose();
  return make_result<S>(std::move(out), {x, v}, [reps, block](Node<S>& self) {
    accumulate(self, 0, self.grad.data);
    if (wants_grad(self, 1)) parent_grad(self, 1).data += self.grad.matrix(reps, block).colwise().sum().transpose();
  });
}

/// Adds row `table[index[b]]` to every token of sample b of x[B, T, D].
template <typename S>
Var<S> add_indexed_rows(const Var<S>& x, const Var<S>& table, const std::vector<int>& index, S coefficient) {
  require(x.value().rank() == 3, "add_indexed_rows: expected [B,T,D]");
  const Index B = x.dim(0), T = x.dim(1), D = x.dim(2);
  require(table.value().rank() == 2 && table.dim(1) == D, "add_indexed_rows: table width mismatch");
  require(static_cast<Index>(index.size()) == B, "add_indexed_rows: one index per sample required");
  for (int i : index) require(i >= 0 && i < table.dim(0), "add_indexed_rows: index out of range");
  Tensor<S> out = x.value();
  for (Index b = 0; b < B; ++b)
    out.matrix(B * T, D).middleRows(b * T, T).rowwise() += coefficient * table.value().matrix().row(index[b]);
  return make_result<S>(std::move(out), {x, table}, [index, B, T, D, coefficient](Node<S>& self) {
    accumulate(self, 0, self.grad.data);
    if (!wants_grad(self, 1)) return;
    auto tg = parent_grad(self, 1).matrix();
    auto g = self.grad.matrix(B * T, D);
    for (Index b = 0; b < B; ++b) tg.row(index[b]) += coefficient * g.middleRows(b * T, T).colwise().sum();
  });
}

/// Layer normalization over the last dimension.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-6)) {
  const Index D = x.value().last(), rows = x.value().rows();
  require(gamma.size() == D && beta.size() == D, "layer_norm: parameter width mismatch");
  Tensor<S> out(x.shape());
  // Cache of normalized values and inverse std per row for the backward pass.
  auto xhat = std::make_shared<typename Tensor<S>::Matrix>(rows, D);
  auto inv_std = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(rows);
  auto xm = x.value().matrix(rows, D);
  auto om = out.matrix(rows, D);
  for (Index r = 0; r < rows; ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    xhat->row(r) = (xm.row(r).array() - mu) * is;
    om.row(r) = xhat->row(r).array() * gamma.value().data.transpose().array() + beta.value().data.transpose().array();
  }
  return make_result<S>(std::move(out), {x, gamma, beta}, [xhat, inv_std, rows, D](Node<S>& self) {
    auto g = self.grad.matrix(rows, D);
    if (wants_grad(self, 1)) parent_grad(self, 1).data += (g.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (wants_grad(self, 2)) parent_grad(self, 2).data += g.colwise().sum().transpose();
    if (!wants_grad(self, 0)) return;
    const auto& gam = parent_value(self, 1).data;
    auto gx = parent_grad(self, 0).matrix(rows, D);
    for (Index r = 0; r < rows; ++r) {
      Eigen::Array<S, 1, Eigen::Dynamic> dxhat = g.row(r).array() * gam.transpose().array();
      const S m1 = dxhat.mean();
      const S m2 = (dxhat * xhat->row(r).array()).mean();
      gx.row(r).array() += (*inv_std)[r] * (dxhat - m1 - xhat->row(r).array() * m2);
    }
  });
}

/// Batch normalization of x[B, D] (BNNeck). Training mode uses batch
/// statistics (biased variance for normalization) and updates the running
/// buffers; evaluation mode uses the running buffers only.
template <typename S>
Var<S> batch_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Tensor<S>& running_mean,
                  Tensor<S>& running_var, bool training, S momentum = S(0.1), S eps = S(1e-5)) {
  require(x.value().rank() == 2, "batch_norm: expected [B,D]");
  const Index B = x.dim(0), D = x.dim(1);
  require(gamma.size() == D && beta.size() == D, "batch_norm: parameter width mismatch");
  auto xm = x.value().matrix();
  Tensor<S> out(x.shape());
  auto om = out.matrix();
  const auto g = gamma.value().data.transpose().array();
  const auto bt = beta.value().data.transpose().array();
  if (!training) {
    Eigen::Array<S, 1, Eigen::Dynamic> inv = (running_var.data.transpose().array() + eps).rsqrt();
    auto xhat = std::make_shared<typename Tensor<S>::Matrix>(
        (xm.array().rowwise() - running_mean.data.transpose().array()).rowwise() * inv);
    om = (xhat->array().rowwise() * g).rowwise() + bt;
    // Running statistics are constants in this mode.
    return make_result<S>(std::move(out), {x, gamma, beta}, [B, D, inv, xhat](Node<S>& self) {
      auto gm = self.grad.matrix(B, D);
      if (wants_grad(self, 0))
        parent_grad(self, 0).matrix(B, D).array() +=
            gm.array().rowwise() * (inv * parent_value(self, 1).data.transpose().array());
      if (wants_grad(self, 1)) parent_grad(self, 1).data += (gm.array() * xhat->array()).colwise().sum().transpose().matrix();
      if (wants_grad(self, 2)) parent_grad(self, 2).data += gm.colwise().sum().transpose();
    });
  }
  require(B > 1, "batch_norm: training mode needs at least 2 samples");
  Eigen::Array<S, 1, Eigen::Dynamic> mu = xm.colwise().mean().array();
  Eigen::Array<S, 1, Eigen::Dynamic> var = (xm.array().rowwise() - mu).square().colwise().mean();
  Eigen::Array<S, 1, Eigen::Dynamic> inv = (var + eps).rsqrt();
  auto xhat = std::make_shared<typename Tensor<S>::Matrix>((xm.array().rowwise() - mu).rowwise() * inv);
  om = (xhat->array().rowwise() * g).rowwise() + bt;
  const S unbias = static_cast<S>(B) / static_cast<S>(B - 1);
  running_mean.data = (S(1) - momentum) * running_mean.data + momentum * mu.transpose().matrix();
  running_var.data = (S(1) - momentum) * running_var.data + momentum * unbias * var.transpose().matrix();
  return make_result<S>(std::move(out), {x, gamma, beta}, [B, D, inv, xhat](Node<S>& self) {
    auto gm = self.grad.matrix(B, D);
    if (wants_grad(self, 1)) parent_grad(self, 1).data += (gm.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (wants_grad(self, 2)) parent_grad(self, 2).data += gm.colwise().sum().transpose();
    if (!wants_grad(self, 0)) return;
    Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> dxhat =
        gm.array().rowwise() * parent_value(self, 1).data.transpose().array();
    Eigen::Array<S, 1, Eigen::Dynamic> m1 = dxhat.colwise().mean();
    Eigen::Array<S, 1, Eigen::Dynamic> m2 = (dxhat * xhat->array()).colwise().mean();
    auto gx = parent_grad(self, 0).matrix(B, D);
    gx.array() += ((dxhat.rowwise() - m1) - xhat->array().rowwise() * m2).rowwise() * inv;
  });
}

// Token-sequence ops ([B, T, D]) ---------------------------------------------

/// Multi-head scaled dot-product self-attention on packed projections
/// qkv[B, T, 3D] (query | key | value). Returns [B, T, D].
template <typename S>
Var<S> multi_head_attention(const Var<S>& qkv, Index heads) {
  require(qkv.value().rank() == 3 && qkv.dim(2) % 3 == 0, "attention: expected [B,T,3D]");
  const Index B = qkv.dim(0), T = qkv.dim(1), D = qkv.dim(2) / 3;
  require(heads > 0 && D % heads == 0, "attention: width not divisible by heads");
  const Index dh = D / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  using Mat = typename Tensor<S>::Matrix;
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(B * heads));
  Tensor<S> out({B, T, D});
  const auto in = qkv.value().matrix(B * T, 3 * D);
  auto om = out.matrix(B * T, D);
  for (Index b = 0; b < B; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto q = in.block(b * T, h * dh, T, dh);
      auto k = in.block(b * T, D + h * dh, T, dh);
      auto v = in.block(b * T, 2 * D + h * dh, T, dh);
      Mat& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
      p.noalias() = (q * k.transpose()) * scale;
      for (Index r = 0; r < T; ++r) {
        const S mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      om.block(b * T, h * dh, T, dh).noalias() = p * v;
    }
  }
  return make_result<S>(std::move(out), {qkv}, [probs, B, T, D, heads, dh, scale](Node<S>& self) {
    const auto in = parent_value(self, 0).matrix(B * T, 3 * D);
    auto gin = parent_grad(self, 0).matrix(B * T, 3 * D);
    const auto g = self.grad.matrix(B * T, D);
    Mat dp, ds;
    for (Index b = 0; b < B; ++b) {
      for (Index h = 0; h < heads; ++h) {
        const Mat& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
        auto q = in.block(b * T, h * dh, T, dh);
        auto k = in.block(b * T, D + h * dh, T, dh);
        auto v = in.block(b * T, 2 * D + h * dh, T, dh);
        auto go = g.block(b * T, h * dh, T, dh);
        gin.block(b * T, 2 * D + h * dh, T, dh).noalias() += p.transpose() * go;
        dp.noalias() = go * v.transpose();
        ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        gin.block(b * T, h * dh, T, dh).noalias() += (ds * k) * scale;
        gin.block(b * T, D + h * dh, T, dh).noalias() += (ds.transpose() * q) * scale;
      }
    }
  });
}

/// Prepends `token`[D] to every sequence of x[B, N, D] -> [B, N+1, D].
template <typename S>
Var<S> prepend_token(const Var<S>& x, const Var<S>& token) {
  require(x.value().rank() == 3 && token.size() == x.dim(2), "prepend_token: width mismatch");
  const Index B = x.dim(0), N = x.dim(1), D = x.dim(2);
  Tensor<S> out({B, N + 1, D});
  auto om = out.matrix(B * (N + 1), D);
  const auto xm = x.value().matrix(B * N, D);
  for (Index b = 0; b < B; ++b) {
    om.row(b * (N + 1)) = token.value().data.transpose();
    om.middleRows(b * (N + 1) + 1, N) = xm.middleRows(b * N, N);
  }
  return make_result<S>(std::move(out), {x, token}, [B, N, D](Node<S>& self) {
    const auto g = self.grad.matrix(B * (N + 1), D);
    if (wants_grad(self, 0)) {
      auto gx = parent_grad(self, 0).matrix(B * N, D);
      for (Index b = 0; b < B; ++b) gx.middleRows(b * N, N) += g.middleRows(b * (N + 1) + 1, N);
    }
    if (wants_grad(self, 1)) {
      auto& gt = parent_grad(self, 1).data;
      for (Index b = 0; b < B; ++b) gt += g.row(b * (N + 1)).transpose();
    }
  });
}

/// Tokens [begin, begin+count) of x[B, T, D] -> [B, count, D].
template <typename S>
Var<S> slice_tokens(const Var<S>& x, Index begin, Index count) {
  require(x.value().rank() == 3 && begin >= 0 && count > 0 && begin + count <= x.dim(1), "slice_tokens: range");
  const Index B = x.dim(0), T = x.dim(1), D = x.dim(2);
  Tensor<S> out({B, count, D});
  const auto xm = x.value().matrix(B * T, D);
  auto om = out.matrix(B * count, D);
  for (Index b = 0; b < B; ++b) om.middleRows(b * count, count) = xm.middleRows(b * T + begin, count);
  return make_result<S>(std::move(out), {x}, [B, T, D, begin, count](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    auto gx = parent_grad(self, 0).matrix(B * T, D);
    const auto g = self.grad.matrix(B * count, D);
    for (Index b = 0; b < B; ++b) gx.middleRows(b * T + begin, count) += g.middleRows(b * count, count);
  });
}

/// Mean over tokens: x[B, N, D] -> [B, D].
template <typename S>
Var<S> token_mean(const Var<S>& x) {
  require(x.value().rank() == 3 && x.dim(1) > 0, "token_mean: expected [B,N,D]");
  const Index B = x.dim(0), N = x.dim(1), D = x.dim(2);
  Tensor<S> out({B, D});
  const auto xm = x.value().matrix(B * N, D);
  for (Index b = 0; b < B; ++b) out.matrix().row(b) = xm.middleRows(b * N, N).colwise().mean();
  return make_result<S>(std::move(out), {x}, [B, N, D](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    auto gx = parent_grad(self, 0).matrix(B * N, D);
    const auto g = self.grad.matrix(B, D);
    const S inv = S(1) / static_cast<S>(N);
    for (Index b = 0; b < B; ++b) gx.middleRows(b * N, N).rowwise() += g.row(b) * inv;
  });
}

/// Row-wise L2 normalization of x[B, D].
template <typename S>
Var<S> normalize_rows(const Var<S>& x, S eps = S(1e-12)) {
  require(x.value().rank() == 2, "normalize_rows: expected [B,D]");
  const Index B = x.dim(0), D = x.dim(1);
  auto norms = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(x.value().matrix().rowwise().norm());
  for (Index r = 0; r < B; ++r) (*norms)[r] = std::max((*norms)[r], eps);
  Tensor<S> out(x.shape());
  out.matrix() = x.value().matrix().array().colwise() / norms->array();
  return make_result<S>(std::move(out), {x}, [norms, B, D](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    const auto y = self.value.matrix(B, D);
    const auto g = self.grad.matrix(B, D);
    auto gx = parent_grad(self, 0).matrix(B, D);
    for (Index r = 0; r < B; ++r)
      gx.row(r) += (g.row(r) - y.row(r) * g.row(r).dot(y.row(r))) / (*norms)[r];
  });
}

/// Per-row log-sum-exp of x[B, C] -> [B].
template <typename S>
Var<S> logsumexp_rows(const Var<S>& x) {
  require(x.value().rank() == 2, "logsumexp_rows: expected [B,C]");
  const Index B = x.dim(0), C = x.dim(1);
  Tensor<S> out({B});
  const auto xm = x.value().matrix();
  for (Index r = 0; r < B; ++r) {
    const S mx = xm.row(r).maxCoeff();
    out.data[r] = mx + std::log((xm.row(r).array() - mx).exp().sum());
  }
  return make_result<S>(std::move(out), {x}, [B, C](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    const auto xm = parent_value(self, 0).matrix(B, C);
    auto gx = parent_grad(self, 0).matrix(B, C);
    for (Index r = 0; r < B; ++r)
      gx.row(r).array() += self.grad.data[r] * (xm.row(r).array() - self.value.data[r]).exp();
  });
}

/// Diagonal of a square x[B, B] -> [B].
template <typename S>
Var<S> diagonal(const Var<S>& x) {
  require(x.value().rank() == 2 && x.dim(0) == x.dim(1), "diagonal: expected square matrix");
  const Index B = x.dim(0);
  Tensor<S> out({B});
  out.data = x.value().matrix().diagonal();
  return make_result<S>(std::move(out), {x}, [B](Node<S>& self) {
    if (wants_grad(self, 0)) parent_grad(self, 0).matrix(B, B).diagonal() += self.grad.data;
  });
}

// Image ops ([B, C, H, W]) -------------------------------------------------

namespace detail {
/// im2col for a single image, stride 1, square kernel, zero padding.
template <typename S>
void im2col(const S* img, Index C, Index H, Index W, Index k, Index pad, typename Tensor<S>::Matrix& cols) {
  cols.resize(C * k * k, H * W);
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        S* row = cols.row((c * k + ky) * k + kx).data();
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + ky - pad;
          for (Index x = 0; x < W; ++x) {
            const Index sx = x + kx - pad;
            row[y * W + x] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? img[(c * H + sy) * W + sx] : S(0);
          }
        }
      }
}

template <typename S>
void col2im(const typename Tensor<S>::Matrix& cols, Index C, Index H, Index W, Index k, Index pad, S* img) {
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const S* row = cols.row((c * k + ky) * k + kx).data();
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (Index x = 0; x < W; ++x) {
            const Index sx = x + kx - pad;
            if (sx >= 0 && sx < W) img[(c * H + sy) * W + sx] += row[y * W + x];
          }
        }
      }
}
}  // namespace detail

/// Stride-1 "same" convolution. weight is [Cout, Cin*k*k], bias [Cout].
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index k) {
  require(x.value().rank() == 4, "conv2d: expected [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Cout = weight.dim(0);
  require(weight.dim(1) == C * k * k, "conv2d: weight does not match input channels");
  require(bias.size() == Cout, "conv2d: bias width mismatch");
  const Index pad = k / 2, HW = H * W;
  Tensor<S> out({B, Cout, H, W});
  typename Tensor<S>::Matrix cols;
  const auto wm = weight.value().matrix(Cout, C * k * k);
  for (Index b = 0; b < B; ++b) {
    detail::im2col(x.value().ptr() + b * C * HW, C, H, W, k, pad, cols);
    auto om = out.matrix(B * Cout, HW).middleRows(b * Cout, Cout);
    om.noalias() = wm * cols;
    om.colwise() += bias.value().data;
  }
  return make_result<S>(std::move(out), {x, weight, bias}, [B, C, H, W, Cout, k, pad](Node<S>& self) {
    const Index HW = H * W;
    typename Tensor<S>::Matrix cols, dcols;
    const auto wm = parent_value(self, 1).matrix(Cout, C * k * k);
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1), gb = wants_grad(self, 2);
    for (Index b = 0; b < B; ++b) {
      const auto g = self.grad.matrix(B * Cout, HW).middleRows(b * Cout, Cout);
      if (gb) parent_grad(self, 2).data += g.rowwise().sum();
      if (gw) {
        detail::im2col(parent_value(self, 0).ptr() + b * C * HW, C, H, W, k, pad, cols);
        parent_grad(self, 1).matrix(Cout, C * k * k).noalias() += g * cols.transpose();
      }
      if (gx) {
        dcols.noalias() = wm.transpose() * g;
        detail::col2im<S>(dcols, C, H, W, k, pad, parent_grad(self, 0).ptr() + b * C * HW);
      }
    }
  });
}

/// x[B, N, D] with N = h*w tokens in raster order -> feature map [B, D, h, w].
template <typename S>
Var<S> tokens_to_grid(const Var<S>& x, Index h, Index w) {
  require(x.value().rank() == 3 && x.dim(1) == h * w, "tokens_to_grid: token count does not match grid");
  const Index B = x.dim(0), N = x.dim(1), D = x.dim(2);
  Tensor<S> out({B, D, h, w});
  for (Index b = 0; b < B; ++b)
    out.matrix(B * D, N).middleRows(b * D, D) = x.value().matrix(B * N, D).middleRows(b * N, N).transpose();
  return make_result<S>(std::move(out), {x}, [B, N, D](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    auto gx = parent_grad(self, 0).matrix(B * N, D);
    for (Index b = 0; b < B; ++b)
      gx.middleRows(b * N, N) += self.grad.matrix(B * D, N).middleRows(b * D, D).transpose();
  });
}

namespace detail {
struct LerpTap {
  Index i0, i1;
  double w1;
};

/// Half-pixel-centred bilinear sampling taps (align_corners = false).
inline std::vector<LerpTap> lerp_taps(Index in, Index out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

template <typename S>
void bilinear_plane(const S* src, Index /*h*/, Index w, S* dst, Index H, Index W, const std::vector<LerpTap>& ty,
                    const std::vector<LerpTap>& tx) {
  for (Index y = 0; y < H; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    const S wy = static_cast<S>(a.w1);
    for (Index x = 0; x < W; ++x) {
      const auto& c = tx[static_cast<std::size_t>(x)];
      const S wx = static_cast<S>(c.w1);
      const S top = src[a.i0 * w + c.i0] * (S(1) - wx) + src[a.i0 * w + c.i1] * wx;
      const S bot = src[a.i1 * w + c.i0] * (S(1) - wx) + src[a.i1 * w + c.i1] * wx;
      dst[y * W + x] = top * (S(1) - wy) + bot * wy;
    }
  }
}
}  // namespace detail

/// Bilinear resampling of x[B, C, h, w] to [B, C, H, W].
template <typename S>
Var<S> upsample_bilinear(const Var<S>& x, Index H, Index W) {
  require(x.value().rank() == 4, "upsample_bilinear: expected [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(h, H));
  auto tx = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(w, W));
  Tensor<S> out({B, C, H, W});
  for (Index p = 0; p < B * C; ++p)
    detail::bilinear_plane(x.value().ptr() + p * h * w, h, w, out.ptr() + p * H * W, H, W, *ty, *tx);
  return make_result<S>(std::move(out), {x}, [B, C, h, w, H, W, ty, tx](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    S* gx = parent_grad(self, 0).ptr();
    const S* g = self.grad.ptr();
    for (Index p = 0; p < B * C; ++p) {
      S* dst = gx + p * h * w;
      const S* src = g + p * H * W;
      for (Index y = 0; y < H; ++y) {
        const auto& a = (*ty)[static_cast<std::size_t>(y)];
        const S wy = static_cast<S>(a.w1);
        for (Index xx = 0; xx < W; ++xx) {
          const auto& c = (*tx)[static_cast<std::size_t>(xx)];
          const S wx = static_cast<S>(c.w1);
          const S v = src[y * W + xx];
          dst[a.i0 * w + c.i0] += v * (S(1) - wy) * (S(1) - wx);
          dst[a.i0 * w + c.i1] += v * (S(1) - wy) * wx;
          dst[a.i1 * w + c.i0] += v * wy * (S(1) - wx);
          dst[a.i1 * w + c.i1] += v * wy * wx;
        }
      }
    }
  });
}

/// Channel concatenation of [B, C1, H, W] and [B, C2, H, W].
template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  require(a.value().rank() == 4 && b.value().rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3),
          "concat_channels: shape mismatch");
  const Index B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<S> out({B, C1 + C2, a.dim(2), a.dim(3)});
  for (Index n = 0; n < B; ++n) {
    out.data.segment(n * (C1 + C2) * HW, C1 * HW) = a.value().data.segment(n * C1 * HW, C1 * HW);
    out.data.segment(n * (C1 + C2) * HW + C1 * HW, C2 * HW) = b.value().data.segment(n * C2 * HW, C2 * HW);
  }
  return make_result<S>(std::move(out), {a, b}, [B, C1, C2, HW](Node<S>& self) {
    for (Index n = 0; n < B; ++n) {
      if (wants_grad(self, 0))
        parent_grad(self, 0).data.segment(n * C1 * HW, C1 * HW) += self.grad.data.segment(n * (C1 + C2) * HW, C1 * HW);
      if (wants_grad(self, 1))
        parent_grad(self, 1).data.segment(n * C2 * HW, C2 * HW) +=
            self.grad.data.segment(n * (C1 + C2) * HW + C1 * HW, C2 * HW);
    }
  });
}

/// Per-pixel maximum over channels: [B, C, H, W] -> [B, 1, H, W]. Ties
/// route the gradient to the first maximal channel.
template <typename S>
Var<S> channel_max(const Var<S>& x) {
  require(x.value().rank() == 4, "channel_max: expected [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> out({B, 1, x.dim(2), x.dim(3)});
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * HW));
  const S* in = x.value().ptr();
  for (Index b = 0; b < B; ++b)
    for (Index p = 0; p < HW; ++p) {
      Index best = 0;
      S v = in[(b * C) * HW + p];
      for (Index c = 1; c < C; ++c)
        if (in[(b * C + c) * HW + p] > v) {
          v = in[(b * C + c) * HW + p];
          best = c;
        }
      out.data[b * HW + p] = v;
      (*arg)[static_cast<std::size_t>(b * HW + p)] = best;
    }
  return make_result<S>(std::move(out), {x}, [B, C, HW, arg](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    S* g = parent_grad(self, 0).ptr();
    for (Index b = 0; b < B; ++b)
      for (Index p = 0; p < HW; ++p)
        g[(b * C + (*arg)[static_cast<std::size_t>(b * HW + p)]) * HW + p] += self.grad.data[b * HW + p];
  });
}

/// Mean over channels: [B, C, H, W] -> [B, 1, H, W].
template <typename S>
Var<S> channel_mean(const Var<S>& x) {
  require(x.value().rank() == 4, "channel_mean: expected [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> out({B, 1, x.dim(2), x.dim(3)});
  for (Index b = 0; b < B; ++b) out.data.segment(b * HW, HW) = x.value().matrix(B * C, HW).middleRows(b * C, C).colwise().mean().transpose();
  return make_result<S>(std::move(out), {x}, [B, C, HW](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    auto gx = parent_grad(self, 0).matrix(B * C, HW);
    const S inv = S(1) / static_cast<S>(C);
    for (Index b = 0; b < B; ++b) gx.middleRows(b * C, C).rowwise() += self.grad.data.segment(b * HW, HW).transpose() * inv;
  });
}

/// Spatial mean per channel: [B, C, H, W] -> [B, C].
template <typename S>
Var<S> spatial_mean(const Var<S>& x) {
  require(x.value().rank() == 4, "spatial_mean: expected [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> out({B, C});
  out.data = x.value().matrix(B * C, HW).rowwise().mean();
  return make_result<S>(std::move(out), {x}, [B, C, HW](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    parent_grad(self, 0).matrix(B * C, HW).colwise() += self.grad.data / static_cast<S>(HW);
  });
}

/// Multiplies every channel of x[B, C, H, W] by the single-channel map m[B, 1, H, W].
template <typename S>
Var<S> mul_channels(const Var<S>& x, const Var<S>& m) {
  require(x.value().rank() == 4 && m.value().rank() == 4 && m.dim(1) == 1 && x.dim(0) == m.dim(0) &&
              x.dim(2) == m.dim(2) && x.dim(3) == m.dim(3),
          "mul_channels: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(m.shape()));
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> out(x.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      out.data.segment((b * C + c) * HW, HW) =
          x.value().data.segment((b * C + c) * HW, HW).cwiseProduct(m.value().data.segment(b * HW, HW));
  return make_result<S>(std::move(out), {x, m}, [B, C, HW](Node<S>& self) {
    const auto& xv = parent_value(self, 0).data;
    const auto& mv = parent_value(self, 1).data;
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c) {
        const auto g = self.grad.data.segment((b * C + c) * HW, HW);
        if (wants_grad(self, 0)) parent_grad(self, 0).data.segment((b * C + c) * HW, HW) += g.cwiseProduct(mv.segment(b * HW, HW));
        if (wants_grad(self, 1)) parent_grad(self, 1).data.segment(b * HW, HW) += g.cwiseProduct(xv.segment((b * C + c) * HW, HW));
      }
  });
}

/// Channels [begin, begin+count) of x[B, C, H, W].
template <typename S>
Var<S> slice_channels(const Var<S>& x, Index begin, Index count) {
  require(x.value().rank() == 4 && begin >= 0 && count > 0 && begin + count <= x.dim(1), "slice_channels: range");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> out({B, count, x.dim(2), x.dim(3)});
  for (Index b = 0; b < B; ++b)
    out.data.segment(b * count * HW, count * HW) = x.value().data.segment((b * C + begin) * HW, count * HW);
  return make_result<S>(std::move(out), {x}, [B, C, HW, begin, count](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    for (Index b = 0; b < B; ++b)
      parent_grad(self, 0).data.segment((b * C + begin) * HW, count * HW) += self.grad.data.segment(b * count * HW, count * HW);
  });
}

/// Horizontal forward differences x[..., w+1] - x[..., w] -> [B, C, H, W-1].
template <typename S>
Var<S> diff_x(const Var<S>& x) {
  require(x.value().rank() == 4, "diff_x: expected [B,C,H,W]");
  const Index P = x.dim(0) * x.dim(1) * x.dim(2), W = x.dim(3);
  Tensor<S> out({x.dim(0), x.dim(1), x.dim(2), std::max<Index>(W - 1, 0)});
  if (W > 1) out.matrix(P, W - 1) = x.value().matrix(P, W).rightCols(W - 1) - x.value().matrix(P, W).leftCols(W - 1);
  return make_result<S>(std::move(out), {x}, [P, W](Node<S>& self) {
    if (!wants_grad(self, 0) || W < 2) return;
    auto gx = parent_grad(self, 0).matrix(P, W);
    const auto g = self.grad.matrix(P, W - 1);
    gx.rightCols(W - 1) += g;
    gx.leftCols(W - 1) -= g;
  });
}

/// Vertical forward differences -> [B, C, H-1, W].
template <typename S>
Var<S> diff_y(const Var<S>& x) {
  require(x.value().rank() == 4, "diff_y: expected [B,C,H,W]");
  const Index BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out({x.dim(0), x.dim(1), std::max<Index>(H - 1, 0), W});
  if (H > 1)
    for (Index p = 0; p < BC; ++p)
      out.matrix(BC * (H - 1), W).middleRows(p * (H - 1), H - 1) =
          x.value().matrix(BC * H, W).middleRows(p * H + 1, H - 1) - x.value().matrix(BC * H, W).middleRows(p * H, H - 1);
  return make_result<S>(std::move(out), {x}, [BC, H, W](Node<S>& self) {
    if (!wants_grad(self, 0) || H < 2) return;
    auto gx = parent_grad(self, 0).matrix(BC * H, W);
    for (Index p = 0; p < BC; ++p) {
      const auto g = self.grad.matrix(BC * (H - 1), W).middleRows(p * (H - 1), H - 1);
      gx.middleRows(p * H + 1, H - 1) += g;
      gx.middleRows(p * H, H - 1) -= g;
    }
  });
}

/// Separable "valid" filtering of every plane of x[B, C, H, W] with the
/// 1-d kernels ky (vertical) and kx (horizontal).
template <typename S>
Var<S> separable_filter_valid(const Var<S>& x, const Eigen::Matrix<S, Eigen::Dynamic, 1>& ky,
                              const Eigen::Matrix<S, Eigen::Dynamic, 1>& kx) {
  require(x.value().rank() == 4, "separable_filter_valid: expected [B,C,H,W]");
  const Index P = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index kh = ky.size(), kw = kx.size();
  require(kh <= H && kw <= W, "separable_filter_valid: kernel larger than image");
  const Index Ho = H - kh + 1, Wo = W - kw + 1;
  Tensor<S> out({x.dim(0), x.dim(1), Ho, Wo});
  typename Tensor<S>::Matrix tmp(H, Wo);
  for (Index p = 0; p < P; ++p) {
    const auto img = x.value().matrix(P * H, W).middleRows(p * H, H);
    tmp.setZero();
    for (Index j = 0; j < kw; ++j) tmp += kx[j] * img.middleCols(j, Wo);
    auto o = out.matrix(P * Ho, Wo).middleRows(p * Ho, Ho);
    o.setZero();
    for (Index i = 0; i < kh; ++i) o += ky[i] * tmp.middleRows(i, Ho);
  }
  return make_result<S>(std::move(out), {x}, [P, H, W, Ho, Wo, ky, kx](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    typename Tensor<S>::Matrix tmp(H, Wo);
    auto gx = parent_grad(self, 0).matrix(P * H, W);
    for (Index p = 0; p < P; ++p) {
      const auto g = self.grad.matrix(P * Ho, Wo).middleRows(p * Ho, Ho);
      tmp.setZero();
      for (Index i = 0; i < ky.size(); ++i) tmp.middleRows(i, Ho) += ky[i] * g;
      auto dst = gx.middleRows(p * H, H);
      for (Index j = 0; j < kx.size(); ++j) dst.middleCols(j, Wo) += kx[j] * tmp;
    }
  });
}

}  // namespace cenet
