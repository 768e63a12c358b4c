#include "semfuse/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "semfuse/errors.hpp"

namespace semfuse {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename Real>
using RowMat =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using Map = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMap = Eigen::Map<const RowMat<Real>>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string("shape mismatch in ") + op + ": " +
                   shape_to_string(a) + " vs " + shape_to_string(b));
}

// Size of the repeating block when b broadcasts over the leading dims of a.
std::size_t broadcast_block(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return shape_numel(a);
  if (b.size() <= a.size() &&
      std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    return shape_numel(b);
  }
  shape_fail(op, a, b);
}

}  // namespace

template <typename Real>
Var Graph<Real>::push(Tensor<Real> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Tensor<Real>(n.value.shape);
  }
  return n.grad;
}

template <typename Real>
Var Graph<Real>::constant(Tensor<Real> value) {
  return push(std::move(value), false);
}

template <typename Real>
Var Graph<Real>::param(Parameter<Real>& p) {
  Var v = push(p.value, true);
  node(v).param = &p;
  return v;
}

template <typename Real>
Var Graph<Real>::matmul(Var a, Var b, bool transpose_b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (bv.shape.size() != 2) shape_fail("matmul", av.shape, bv.shape);
  const int k = av.cols();
  const int m = av.rows();
  const int bk = transpose_b ? bv.shape[1] : bv.shape[0];
  const int n = transpose_b ? bv.shape[0] : bv.shape[1];
  if (k != bk) shape_fail("matmul", av.shape, bv.shape);
  Shape out_shape = av.shape;
  out_shape.back() = n;
  Tensor<Real> out(out_shape);
  ConstMap<Real> A(av.data.data(), m, k);
  Map<Real> C(out.data.data(), m, n);
  if (transpose_b) {
    ConstMap<Real> B(bv.data.data(), n, k);
    C.noalias() = A * B.transpose();
  } else {
    ConstMap<Real> B(bv.data.data(), k, n);
    C.noalias() = A * B;
  }
  Var out_v = push(std::move(out), needs(a) || needs(b));
  if (node(out_v).requires_grad) {
    const int ia = a.id, ib = b.id, io = out_v.id;
    node(out_v).backward = [this, ia, ib, io, m, k, n, transpose_b] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      ConstMap<Real> G(g.data.data(), m, n);
      if (nodes_[static_cast<std::size_t>(ia)].requires_grad) {
        const auto& bv = nodes_[static_cast<std::size_t>(ib)].value;
        Map<Real> GA(grad_buffer(ia).data.data(), m, k);
        if (transpose_b) {
          GA.noalias() += G * ConstMap<Real>(bv.data.data(), n, k);
        } else {
          GA.noalias() += G * ConstMap<Real>(bv.data.data(), k, n).transpose();
        }
      }
      if (nodes_[static_cast<std::size_t>(ib)].requires_grad) {
        const auto& av = nodes_[static_cast<std::size_t>(ia)].value;
        ConstMap<Real> A(av.data.data(), m, k);
        if (transpose_b) {
          Map<Real> GB(grad_buffer(ib).data.data(), n, k);
          GB.noalias() += G.transpose() * A;
        } else {
          Map<Real> GB(grad_buffer(ib).data.data(), k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::bmm(Var a, Var b, bool transpose_b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape.size() != 3 || bv.shape.size() != 3 ||
      av.shape[0] != bv.shape[0]) {
    shape_fail("bmm", av.shape, bv.shape);
  }
  const int groups = av.shape[0], m = av.shape[1], k = av.shape[2];
  const int bk = transpose_b ? bv.shape[2] : bv.shape[1];
  const int n = transpose_b ? bv.shape[1] : bv.shape[2];
  if (k != bk) shape_fail("bmm", av.shape, bv.shape);
  Tensor<Real> out({groups, m, n});
  const std::size_t sa = static_cast<std::size_t>(m) * k;
  const std::size_t sb = static_cast<std::size_t>(k) * n;
  const std::size_t sc = static_cast<std::size_t>(m) * n;
  for (int gi = 0; gi < groups; ++gi) {
    ConstMap<Real> A(av.data.data() + gi * sa, m, k);
    Map<Real> C(out.data.data() + gi * sc, m, n);
    if (transpose_b) {
      C.noalias() = A * ConstMap<Real>(bv.data.data() + gi * sb, n, k).transpose();
    } else {
      C.noalias() = A * ConstMap<Real>(bv.data.data() + gi * sb, k, n);
    }
  }
  Var out_v = push(std::move(out), needs(a) || needs(b));
  if (node(out_v).requires_grad) {
    const int ia = a.id, ib = b.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const bool need_a = nodes_[static_cast<std::size_t>(ia)].requires_grad;
      const bool need_b = nodes_[static_cast<std::size_t>(ib)].requires_grad;
      Real* ga = need_a ? grad_buffer(ia).data.data() : nullptr;
      Real* gb = need_b ? grad_buffer(ib).data.data() : nullptr;
      const auto& av = nodes_[static_cast<std::size_t>(ia)].value;
      const auto& bv = nodes_[static_cast<std::size_t>(ib)].value;
      for (int gi = 0; gi < groups; ++gi) {
        ConstMap<Real> G(g.data.data() + gi * sc, m, n);
        if (need_a) {
          Map<Real> GA(ga + gi * sa, m, k);
          if (transpose_b) {
            GA.noalias() += G * ConstMap<Real>(bv.data.data() + gi * sb, n, k);
          } else {
            GA.noalias() +=
                G * ConstMap<Real>(bv.data.data() + gi * sb, k, n).transpose();
          }
        }
        if (need_b) {
          ConstMap<Real> A(av.data.data() + gi * sa, m, k);
          if (transpose_b) {
            Map<Real> GB(gb + gi * sb, n, k);
            GB.noalias() += G.transpose() * A;
          } else {
            Map<Real> GB(gb + gi * sb, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::add(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  const std::size_t block = broadcast_block("add", av.shape, bv.shape);
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % block];
  Var out_v = push(std::move(out), needs(a) || needs(b));
  if (node(out_v).requires_grad) {
    const int ia = a.id, ib = b.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      if (nodes_[static_cast<std::size_t>(ia)].requires_grad) {
        auto& ga = grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[static_cast<std::size_t>(ib)].requires_grad) {
        auto& gb = grad_buffer(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % block] += g[i];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::mul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  const std::size_t block = broadcast_block("mul", av.shape, bv.shape);
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % block];
  Var out_v = push(std::move(out), needs(a) || needs(b));
  if (node(out_v).requires_grad) {
    const int ia = a.id, ib = b.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const auto& av = nodes_[static_cast<std::size_t>(ia)].value;
      const auto& bv = nodes_[static_cast<std::size_t>(ib)].value;
      if (nodes_[static_cast<std::size_t>(ia)].requires_grad) {
        auto& ga = grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % block];
      }
      if (nodes_[static_cast<std::size_t>(ib)].requires_grad) {
        auto& gb = grad_buffer(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % block] += g[i] * av[i];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::scale(Var a, Real factor) {
  return affine(a, factor, Real(0));
}

template <typename Real>
Var Graph<Real>::affine(Var a, Real factor, Real shift) {
  Tensor<Real> out = value(a);
  for (auto& x : out.data) x = factor * x + shift;
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    };
  }
  return out_v;
}

// Elementwise unary op whose derivative is expressed through (x, y).
#define SEMFUSE_UNARY(NAME, FORWARD, DERIV)                                  \
  template <typename Real>                                                   \
  Var Graph<Real>::NAME(Var a) {                                             \
    Tensor<Real> out = value(a);                                             \
    for (auto& x : out.data) x = (FORWARD);                                  \
    Var out_v = push(std::move(out), needs(a));                              \
    if (node(out_v).requires_grad) {                                         \
      const int ia = a.id, io = out_v.id;                                    \
      node(out_v).backward = [=, this] {                                     \
        const auto& g = nodes_[static_cast<std::size_t>(io)].grad;           \
        const auto& yv = nodes_[static_cast<std::size_t>(io)].value;         \
        const auto& xv = nodes_[static_cast<std::size_t>(ia)].value;         \
        auto& ga = grad_buffer(ia);                                          \
        for (std::size_t i = 0; i < g.size(); ++i) {                         \
          const Real x = xv[i];                                              \
          const Real y = yv[i];                                              \
          (void)x;                                                           \
          (void)y;                                                           \
          ga[i] += g[i] * (DERIV);                                           \
        }                                                                    \
      };                                                                     \
    }                                                                        \
    return out_v;                                                            \
  }

SEMFUSE_UNARY(sigmoid, Real(1) / (Real(1) + std::exp(-x)), y * (Real(1) - y))
SEMFUSE_UNARY(tanh, std::tanh(x), Real(1) - y * y)
SEMFUSE_UNARY(relu, x > Real(0) ? x : Real(0), x > Real(0) ? Real(1) : Real(0))
SEMFUSE_UNARY(exp, std::exp(x), y)
SEMFUSE_UNARY(log, std::log(x), Real(1) / x)

#undef SEMFUSE_UNARY

template <typename Real>
Var Graph<Real>::clamp(Var a, Real lo, Real hi) {
  Tensor<Real> out = value(a);
  for (auto& x : out.data) x = std::clamp(x, lo, hi);
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const auto& xv = nodes_[static_cast<std::size_t>(ia)].value;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] >= lo && xv[i] <= hi) ga[i] += g[i];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::softmax(Var a) {
  Tensor<Real> out = value(a);
  const int rows = out.rows(), cols = out.cols();
  for (int r = 0; r < rows; ++r) {
    Real* x = out.data.data() + static_cast<std::size_t>(r) * cols;
    const Real mx = *std::max_element(x, x + cols);
    Real total = 0;
    for (int c = 0; c < cols; ++c) {
      x[c] = std::exp(x[c] - mx);
      total += x[c];
    }
    for (int c = 0; c < cols; ++c) x[c] /= total;
  }
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const auto& y = nodes_[static_cast<std::size_t>(io)].value;
      auto& ga = grad_buffer(ia);
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        Real dot = 0;
        for (int c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
        for (int c = 0; c < cols; ++c) {
          ga[off + c] += y[off + c] * (g[off + c] - dot);
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::log_softmax(Var a) {
  Tensor<Real> out = value(a);
  const int rows = out.rows(), cols = out.cols();
  for (int r = 0; r < rows; ++r) {
    Real* x = out.data.data() + static_cast<std::size_t>(r) * cols;
    const Real mx = *std::max_element(x, x + cols);
    Real total = 0;
    for (int c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const Real lse = mx + std::log(total);
    for (int c = 0; c < cols; ++c) x[c] -= lse;
  }
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const auto& y = nodes_[static_cast<std::size_t>(io)].value;
      auto& ga = grad_buffer(ia);
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        Real gsum = 0;
        for (int c = 0; c < cols; ++c) gsum += g[off + c];
        for (int c = 0; c < cols; ++c) {
          ga[off + c] += g[off + c] - std::exp(y[off + c]) * gsum;
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const auto& xv = value(x);
  const int rows = xv.rows(), cols = xv.cols();
  if (value(gamma).size() != static_cast<std::size_t>(cols) ||
      value(beta).size() != static_cast<std::size_t>(cols)) {
    shape_fail("layer_norm", xv.shape, value(gamma).shape);
  }
  Tensor<Real> out(xv.shape);
  // Normalized input and inverse std per row, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<Real>>(xv.size());
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(rows));
  const auto& gv = value(gamma);
  const auto& bv = value(beta);
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    Real mean = 0;
    for (int c = 0; c < cols; ++c) mean += xv[off + c];
    mean /= cols;
    Real var = 0;
    for (int c = 0; c < cols; ++c) {
      const Real d = xv[off + c] - mean;
      var += d * d;
    }
    var /= cols;
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < cols; ++c) {
      const Real h = (xv[off + c] - mean) * is;
      (*xhat)[off + c] = h;
      out[off + c] = h * gv[static_cast<std::size_t>(c)] + bv[static_cast<std::size_t>(c)];
    }
  }
  Var out_v = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  if (node(out_v).requires_grad) {
    const int ix = x.id, ig = gamma.id, ib = beta.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const auto& gv = nodes_[static_cast<std::size_t>(ig)].value;
      const bool need_x = nodes_[static_cast<std::size_t>(ix)].requires_grad;
      const bool need_g = nodes_[static_cast<std::size_t>(ig)].requires_grad;
      const bool need_b = nodes_[static_cast<std::size_t>(ib)].requires_grad;
      Real* gx = need_x ? grad_buffer(ix).data.data() : nullptr;
      Real* gg = need_g ? grad_buffer(ig).data.data() : nullptr;
      Real* gb = need_b ? grad_buffer(ib).data.data() : nullptr;
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        Real sum_dh = 0, sum_dh_h = 0;
        for (int c = 0; c < cols; ++c) {
          const Real h = (*xhat)[off + c];
          const Real dh = g[off + c] * gv[static_cast<std::size_t>(c)];
          sum_dh += dh;
          sum_dh_h += dh * h;
          if (need_g) gg[c] += g[off + c] * h;
          if (need_b) gb[c] += g[off + c];
        }
        if (need_x) {
          const Real is = (*inv_std)[static_cast<std::size_t>(r)];
          for (int c = 0; c < cols; ++c) {
            const Real h = (*xhat)[off + c];
            const Real dh = g[off + c] * gv[static_cast<std::size_t>(c)];
            gx[off + c] += is * (dh - sum_dh / cols - h * sum_dh_h / cols);
          }
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::dropout(Var a, Real p, Rng& rng) {
  if (p <= Real(0)) return a;
  if (p >= Real(1)) throw NumericError("dropout: probability must be < 1");
  const auto& av = value(a);
  auto keep = std::make_shared<std::vector<Real>>(av.size());
  const Real s = Real(1) / (Real(1) - p);
  for (auto& k : *keep) k = rng.uniform01() < static_cast<double>(p) ? Real(0) : s;
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*keep)[i];
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*keep)[i];
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::masked_fill(Var a, const Mask& mask, Real fill) {
  const auto& av = value(a);
  if (mask.size() != av.size()) {
    shape_fail("masked_fill", av.shape, Shape{static_cast<int>(mask.size())});
  }
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] != 0) out[i] = fill;
  }
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    auto m = std::make_shared<Mask>(mask);
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if ((*m)[i] == 0) ga[i] += g[i];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::gather_rows(Var table, const std::vector<int>& ids) {
  const auto& tv = value(table);
  if (tv.shape.size() != 2) shape_fail("gather_rows", tv.shape, Shape{});
  const int vocab = tv.shape[0], d = tv.shape[1];
  Tensor<Real> out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[i]) +
                       " outside table " + shape_to_string(tv.shape));
    }
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  Var out_v = push(std::move(out), needs(table));
  if (node(out_v).requires_grad) {
    const int it = table.id, io = out_v.id;
    auto idx = std::make_shared<std::vector<int>>(ids);
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& gt = grad_buffer(it);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::size_t src = i * static_cast<std::size_t>(d);
        const std::size_t dst = static_cast<std::size_t>((*idx)[i]) * d;
        for (int c = 0; c < d; ++c) gt[dst + c] += g[src + c];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::gather(Var a, std::vector<int> index, Shape shape) {
  const auto& av = value(a);
  if (shape_numel(shape) != index.size()) {
    shape_fail("gather", shape, Shape{static_cast<int>(index.size())});
  }
  Tensor<Real> out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= av.size()) {
      throw ShapeError("gather: index " + std::to_string(index[i]) +
                       " outside " + shape_to_string(av.shape));
    }
    out[i] = av[static_cast<std::size_t>(index[i])];
  }
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    auto idx = std::make_shared<std::vector<int>>(std::move(index));
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        ga[static_cast<std::size_t>((*idx)[i])] += g[i];
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::concat_last(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.rows() != bv.rows() || av.shape.size() != bv.shape.size()) {
    shape_fail("concat_last", av.shape, bv.shape);
  }
  const int rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Shape shape = av.shape;
  shape.back() = ca + cb;
  Tensor<Real> out(shape);
  for (int r = 0; r < rows; ++r) {
    const std::size_t o = static_cast<std::size_t>(r) * (ca + cb);
    std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(r) * ca, ca,
                out.data.begin() + static_cast<std::ptrdiff_t>(o));
    std::copy_n(bv.data.begin() + static_cast<std::ptrdiff_t>(r) * cb, cb,
                out.data.begin() + static_cast<std::ptrdiff_t>(o + ca));
  }
  Var out_v = push(std::move(out), needs(a) || needs(b));
  if (node(out_v).requires_grad) {
    const int ia = a.id, ib = b.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      const bool need_a = nodes_[static_cast<std::size_t>(ia)].requires_grad;
      const bool need_b = nodes_[static_cast<std::size_t>(ib)].requires_grad;
      for (int r = 0; r < rows; ++r) {
        const std::size_t o = static_cast<std::size_t>(r) * (ca + cb);
        if (need_a) {
          auto& ga = grad_buffer(ia);
          for (int c = 0; c < ca; ++c) ga[static_cast<std::size_t>(r) * ca + c] += g[o + c];
        }
        if (need_b) {
          auto& gb = grad_buffer(ib);
          for (int c = 0; c < cb; ++c) gb[static_cast<std::size_t>(r) * cb + c] += g[o + ca + c];
        }
      }
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::reshape(Var a, Shape shape) {
  const auto& av = value(a);
  if (shape_numel(shape) != av.size()) shape_fail("reshape", av.shape, shape);
  Tensor<Real> out(std::move(shape), av.data);
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::permute(Var a, const std::vector<int>& axes) {
  const auto& av = value(a);
  const int rank = static_cast<int>(av.shape.size());
  if (rank > 4 || static_cast<int>(axes.size()) != rank) {
    shape_fail("permute", av.shape, Shape(axes.begin(), axes.end()));
  }
  // Pad to rank 4 with leading unit dims.
  std::array<int, 4> in_dims{1, 1, 1, 1};
  std::array<int, 4> perm{0, 1, 2, 3};
  const int pad = 4 - rank;
  for (int i = 0; i < rank; ++i) {
    in_dims[static_cast<std::size_t>(pad + i)] = av.shape[static_cast<std::size_t>(i)];
    perm[static_cast<std::size_t>(pad + i)] = pad + axes[static_cast<std::size_t>(i)];
  }
  std::array<std::size_t, 4> in_stride{};
  in_stride[3] = 1;
  for (int i = 2; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] =
        in_stride[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(in_dims[static_cast<std::size_t>(i + 1)]);
  }
  std::array<int, 4> out_dims{};
  for (int i = 0; i < 4; ++i) {
    out_dims[static_cast<std::size_t>(i)] = in_dims[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  // Flat source index of every output element.
  auto src = std::make_shared<std::vector<std::size_t>>(av.size());
  std::size_t o = 0;
  for (int i0 = 0; i0 < out_dims[0]; ++i0)
    for (int i1 = 0; i1 < out_dims[1]; ++i1)
      for (int i2 = 0; i2 < out_dims[2]; ++i2)
        for (int i3 = 0; i3 < out_dims[3]; ++i3) {
          const std::array<int, 4> idx{i0, i1, i2, i3};
          std::size_t s = 0;
          for (int k = 0; k < 4; ++k) {
            s += static_cast<std::size_t>(idx[static_cast<std::size_t>(k)]) *
                 in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
          }
          (*src)[o++] = s;
        }
  Shape shape;
  for (int i = 0; i < rank; ++i) shape.push_back(out_dims[static_cast<std::size_t>(pad + i)]);
  Tensor<Real> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[(*src)[i]];
  Var out_v = push(std::move(out), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const auto& g = nodes_[static_cast<std::size_t>(io)].grad;
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[(*src)[i]] += g[i];
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::sum(Var a) {
  const auto& av = value(a);
  Real total = 0;
  for (Real x : av.data) total += x;
  Var out_v = push(Tensor<Real>(Shape{}, std::vector<Real>{total}), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    node(out_v).backward = [=, this] {
      const Real g = nodes_[static_cast<std::size_t>(io)].grad[0];
      auto& ga = grad_buffer(ia);
      for (auto& x : ga.data) x += g;
    };
  }
  return out_v;
}

template <typename Real>
Var Graph<Real>::weighted_sum(Var a, const std::vector<Real>& weights) {
  const auto& av = value(a);
  if (weights.size() != av.size()) {
    shape_fail("weighted_sum", av.shape, Shape{static_cast<int>(weights.size())});
  }
  Real total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) total += weights[i] * av[i];
  Var out_v = push(Tensor<Real>(Shape{}, std::vector<Real>{total}), needs(a));
  if (node(out_v).requires_grad) {
    const int ia = a.id, io = out_v.id;
    auto w = std::make_shared<std::vector<Real>>(weights);
    node(out_v).backward = [=, this] {
      const Real g = nodes_[static_cast<std::size_t>(io)].grad[0];
      auto& ga = grad_buffer(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (*w)[i];
    };
  }
  return out_v;
}

template <typename Real>
void Graph<Real>::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     shape_to_string(value(loss).shape));
  }
  for (auto& n : nodes_) n.grad = Tensor<Real>();
  grad_buffer(loss.id)[0] = Real(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) {
      auto& pg = n.param->grad.data;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace semfuse
