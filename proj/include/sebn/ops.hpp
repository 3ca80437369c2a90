// sebn/ops.hpp

// Copyright 2026  sebn project

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEBN_OPS_HPP_
#define SEBN_OPS_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sebn/tensor.hpp"

namespace sebn {
namespace ops {

template <class S>
using RowMat =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

namespace detail {

inline void check_same_shape(const char* op, const std::vector<int>& a,
                             const std::vector<int>& b) {
  check_contract(a == b, std::string(op) + ": shape mismatch " + shape_str(a) +
                             " vs " + shape_str(b));
}

// Decomposes shape around `axis` into [outer, n, inner].
inline void split_axis(const char* op, const std::vector<int>& shape, int axis,
                       long& outer, int& n, long& inner) {
  check_contract(axis >= 0 && axis < static_cast<int>(shape.size()),
                 std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(shape));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  n = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    inner *= shape[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary / scalar ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a.shape(), b.shape());
  std::vector<S> out(a.vec());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.vec()[i];
  return sebn::detail::make_op<S>(
      "add", a.shape(), std::move(out), {a, b},
      [](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        for (int k = 0; k < 2; ++k)
          if (gin[k])
            for (size_t i = 0; i < g.size(); ++i) (*gin[k])[i] += g[i];
      });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a.shape(), b.shape());
  std::vector<S> out(a.vec());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.vec()[i];
  return sebn::detail::make_op<S>(
      "sub", a.shape(), std::move(out), {a, b},
      [](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (gin[0])
          for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
          for (size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a.shape(), b.shape());
  std::vector<S> out(a.vec());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.vec()[i];
  return sebn::detail::make_op<S>(
      "mul", a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (gin[0])
          for (size_t i = 0; i < g.size(); ++i)
            (*gin[0])[i] += g[i] * b.vec()[i];
        if (gin[1])
          for (size_t i = 0; i < g.size(); ++i)
            (*gin[1])[i] += g[i] * a.vec()[i];
      });
}

template <class S>
Tensor<S> scalar_mul(const Tensor<S>& x, S c) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v *= c;
  return sebn::detail::make_op<S>(
      "scalar_mul", x.shape(), std::move(out), {x},
      [c](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (gin[0])
          for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
      });
}

template <class S>
Tensor<S> neg(const Tensor<S>& x) {
  return scalar_mul(x, S(-1));
}

template <class S>
Tensor<S> scalar_add(const Tensor<S>& x, S c) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v += c;
  return sebn::detail::make_op<S>(
      "scalar_add", x.shape(), std::move(out), {x},
      [](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (gin[0])
          for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      });
}

/// y = w*x + b with scalar tensors w and b (both shape [1]).
template <class S>
Tensor<S> scale_shift(const Tensor<S>& x, const Tensor<S>& w,
                      const Tensor<S>& b) {
  check_contract(w.numel() == 1 && b.numel() == 1,
                 "scale_shift: w and b must be scalar tensors");
  const S wv = w.vec()[0], bv = b.vec()[0];
  std::vector<S> out(x.vec());
  for (auto& v : out) v = wv * v + bv;
  return sebn::detail::make_op<S>(
      "scale_shift", x.shape(), std::move(out), {x, w, b},
      [x, wv](const std::vector<S>& g,
              const std::vector<std::vector<S>*>& gin) {
        if (gin[0])
          for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * wv;
        if (gin[1]) {
          S acc = 0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * x.vec()[i];
          (*gin[1])[0] += acc;
        }
        if (gin[2]) {
          S acc = 0;
          for (const S gi : g) acc += gi;
          (*gin[2])[0] += acc;
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  return sebn::detail::make_op<S>(
      "relu", x.shape(), std::move(out), {x},
      [x](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i)
          if (x.vec()[i] > S(0)) (*gin[0])[i] += g[i];
      });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v = S(1) / (S(1) + std::exp(-v));
  std::vector<S> saved(out);
  return sebn::detail::make_op<S>(
      "sigmoid", x.shape(), std::move(out), {x},
      [saved = std::move(saved)](const std::vector<S>& g,
                                 const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i) {
          const S s = saved[i];
          (*gin[0])[i] += g[i] * s * (S(1) - s);
        }
      });
}

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v = std::tanh(v);
  std::vector<S> saved(out);
  return sebn::detail::make_op<S>(
      "tanh", x.shape(), std::move(out), {x},
      [saved = std::move(saved)](const std::vector<S>& g,
                                 const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i) {
          const S t = saved[i];
          (*gin[0])[i] += g[i] * (S(1) - t * t);
        }
      });
}

/// Natural log; inputs must be strictly positive.
template <class S>
Tensor<S> log(const Tensor<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) {
    check_contract(v > S(0), "log: input must be strictly positive");
    v = std::log(v);
  }
  return sebn::detail::make_op<S>(
      "log", x.shape(), std::move(out), {x},
      [x](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i)
          (*gin[0])[i] += g[i] / x.vec()[i];
      });
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) {
    check_contract(v >= S(0), "sqrt: input must be non-negative");
    v = std::sqrt(v);
  }
  std::vector<S> saved(out);
  return sebn::detail::make_op<S>(
      "sqrt", x.shape(), std::move(out), {x},
      [saved = std::move(saved)](const std::vector<S>& g,
                                 const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i)
          (*gin[0])[i] += g[i] / (S(2) * saved[i]);
      });
}

/// max(x, floor) elementwise; gradient passes only where x > floor.
template <class S>
Tensor<S> clamp_min(const Tensor<S>& x, S floor) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v = v > floor ? v : floor;
  return sebn::detail::make_op<S>(
      "clamp_min", x.shape(), std::move(out), {x},
      [x, floor](const std::vector<S>& g,
                 const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i)
          if (x.vec()[i] > floor) (*gin[0])[i] += g[i];
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

/// Row-major reinterpretation; one extent may be -1 (inferred).
template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape) {
  long known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      check_contract(infer < 0, "reshape: at most one extent may be -1");
      infer = static_cast<int>(i);
    } else {
      check_contract(shape[i] > 0, "reshape: extents must be positive or -1");
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    check_contract(known > 0 && x.numel() % known == 0,
                   "reshape: cannot infer extent for " + shape_str(x.shape()));
    shape[static_cast<size_t>(infer)] = static_cast<int>(x.numel() / known);
    known *= shape[static_cast<size_t>(infer)];
  }
  check_contract(known == x.numel(),
                 "reshape: element count mismatch " + shape_str(x.shape()) +
                     " -> " + shape_str(shape));
  std::vector<S> out(x.vec());
  return sebn::detail::make_op<S>(
      "reshape", std::move(shape), std::move(out), {x},
      [](const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      });
}

/// General axis permutation (copying).
template <class S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  check_contract(static_cast<int>(perm.size()) == r,
                 "permute: permutation rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  std::vector<int> out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<size_t>(i)];
    check_contract(p >= 0 && p < r && !seen[static_cast<size_t>(p)],
                   "permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    out_shape[static_cast<size_t>(i)] = x.dim(p);
  }

  std::vector<long> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] =
        in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);

  const long n = x.numel();
  std::vector<S> out(static_cast<size_t>(n));
  std::vector<int> idx(static_cast<size_t>(r), 0);
  const S* src = x.data();
  for (long flat = 0; flat < n; ++flat) {
    long src_off = 0;
    for (int i = 0; i < r; ++i)
      src_off += static_cast<long>(idx[static_cast<size_t>(i)]) *
                 in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    out[static_cast<size_t>(flat)] = src[src_off];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)])
        break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }

  const std::vector<int> pshape = out_shape;
  return sebn::detail::make_op<S>(
      "permute", std::move(out_shape), std::move(out), {x},
      [in_strides, perm, pshape, r](const std::vector<S>& g,
                                    const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        // Walk the permuted layout again, scattering into source offsets.
        std::vector<int> idx(static_cast<size_t>(r), 0);
        for (size_t flat = 0; flat < g.size(); ++flat) {
          long src_off = 0;
          for (int i = 0; i < r; ++i)
            src_off +=
                static_cast<long>(idx[static_cast<size_t>(i)]) *
                in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
          (*gin[0])[static_cast<size_t>(src_off)] += g[flat];
          for (int i = r - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < pshape[static_cast<size_t>(i)])
              break;
            idx[static_cast<size_t>(i)] = 0;
          }
        }
      });
}

/// Inserts a new axis of extent n at `axis`, repeating values along it.
template <class S>
Tensor<S> expand_axis(const Tensor<S>& x, int axis, int n) {
  check_contract(axis >= 0 && axis <= x.rank(), "expand_axis: axis out of range");
  check_contract(n > 0, "expand_axis: extent must be positive");
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<int> out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, n);
  std::vector<S> out(static_cast<size_t>(outer * n * inner));
  const S* src = x.data();
  for (long o = 0; o < outer; ++o)
    for (int r = 0; r < n; ++r)
      std::copy(src + o * inner, src + (o + 1) * inner,
                out.begin() + (o * n + r) * inner);

  return sebn::detail::make_op<S>(
      "expand_axis", std::move(out_shape), std::move(out), {x},
      [outer, n, inner](const std::vector<S>& g,
                        const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (long o = 0; o < outer; ++o)
          for (int r = 0; r < n; ++r)
            for (long i = 0; i < inner; ++i)
              (*gin[0])[static_cast<size_t>(o * inner + i)] +=
                  g[static_cast<size_t>((o * n + r) * inner + i)];
      });
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  check_contract(!xs.empty(), "concat: needs at least one input");
  const auto& first = xs.front().shape();
  check_contract(axis >= 0 && axis < static_cast<int>(first.size()),
                 "concat: axis out of range");
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < first.size(); ++i)
    inner *= first[i];

  int total_n = 0;
  std::vector<int> ns;
  for (const auto& x : xs) {
    check_contract(x.rank() == static_cast<int>(first.size()),
                   "concat: rank mismatch");
    for (int i = 0; i < x.rank(); ++i)
      if (i != axis)
        check_contract(x.dim(i) == first[static_cast<size_t>(i)],
                       "concat: non-axis extents must agree");
    ns.push_back(x.dim(axis));
    total_n += x.dim(axis);
  }

  std::vector<int> out_shape = first;
  out_shape[static_cast<size_t>(axis)] = total_n;
  std::vector<S> out(static_cast<size_t>(outer * total_n * inner));
  for (long o = 0; o < outer; ++o) {
    long off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const long blk = static_cast<long>(ns[k]) * inner;
      std::copy(xs[k].data() + o * blk, xs[k].data() + (o + 1) * blk,
                out.begin() + o * total_n * inner + off);
      off += blk;
    }
  }

  return sebn::detail::make_op<S>(
      "concat", std::move(out_shape), std::move(out), xs,
      [outer, inner, ns, total_n](const std::vector<S>& g,
                                  const std::vector<std::vector<S>*>& gin) {
        for (long o = 0; o < outer; ++o) {
          long off = 0;
          for (size_t k = 0; k < ns.size(); ++k) {
            const long blk = static_cast<long>(ns[k]) * inner;
            if (gin[k])
              for (long i = 0; i < blk; ++i)
                (*gin[k])[static_cast<size_t>(o * blk + i)] +=
                    g[static_cast<size_t>(o * total_n * inner + off + i)];
            off += blk;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = 0;
  for (const S v : x.vec()) acc += v;
  return sebn::detail::make_op<S>(
      "sum_all", {1}, {acc}, {x},
      [n = x.numel()](const std::vector<S>& g,
                      const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (long i = 0; i < n; ++i) (*gin[0])[static_cast<size_t>(i)] += g[0];
      });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scalar_mul(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

/// Sum over one axis (the axis is removed from the shape).
template <class S>
Tensor<S> sum_axis(const Tensor<S>& x, int axis) {
  long outer, inner;
  int n;
  detail::split_axis("sum_axis", x.shape(), axis, outer, n, inner);
  std::vector<int> out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};

  std::vector<S> out(static_cast<size_t>(outer * inner), S(0));
  const S* src = x.data();
  for (long o = 0; o < outer; ++o)
    for (int t = 0; t < n; ++t)
      for (long i = 0; i < inner; ++i)
        out[static_cast<size_t>(o * inner + i)] +=
            src[(o * n + t) * inner + i];

  return sebn::detail::make_op<S>(
      "sum_axis", std::move(out_shape), std::move(out), {x},
      [outer, n, inner](const std::vector<S>& g,
                        const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (long o = 0; o < outer; ++o)
          for (int t = 0; t < n; ++t)
            for (long i = 0; i < inner; ++i)
              (*gin[0])[static_cast<size_t>((o * n + t) * inner + i)] +=
                  g[static_cast<size_t>(o * inner + i)];
      });
}

template <class S>
Tensor<S> mean_axis(const Tensor<S>& x, int axis) {
  const S inv = S(1) / static_cast<S>(x.dim(axis));
  return scalar_mul(sum_axis(x, axis), inv);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_contract(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be 2-d");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check_contract(k == k2, "matmul: inner extents disagree " +
                              shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  std::vector<S> out(static_cast<size_t>(m) * n);
  ConstMatMap<S> am(a.data(), m, k), bm(b.data(), k, n);
  MatMap<S>(out.data(), m, n).noalias() = am * bm;

  return sebn::detail::make_op<S>(
      "matmul", {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](const std::vector<S>& g,
                      const std::vector<std::vector<S>*>& gin) {
        ConstMatMap<S> gm(g.data(), m, n);
        if (gin[0]) {
          ConstMatMap<S> bm(b.data(), k, n);
          MatMap<S>(gin[0]->data(), m, k).noalias() += gm * bm.transpose();
        }
        if (gin[1]) {
          ConstMatMap<S> am(a.data(), m, k);
          MatMap<S>(gin[1]->data(), k, n).noalias() += am.transpose() * gm;
        }
      });
}

namespace detail {

template <class S>
Tensor<S> linear_impl(const Tensor<S>& x, const Tensor<S>& w,
                      const Tensor<S>* b) {
  check_contract(x.rank() == 2 && w.rank() == 2, "linear: x and w must be 2-d");
  const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  check_contract(w.dim(1) == din, "linear: inner extents disagree " +
                                      shape_str(x.shape()) + " vs " +
                                      shape_str(w.shape()));
  if (b)
    check_contract(b->rank() == 1 && b->dim(0) == dout,
                   "linear: bias extent mismatch");

  std::vector<S> out(static_cast<size_t>(n) * dout);
  {
    ConstMatMap<S> xm(x.data(), n, din), wm(w.data(), dout, din);
    MatMap<S> om(out.data(), n, dout);
    om.noalias() = xm * wm.transpose();
    if (b) {
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bv(b->data(), dout);
      om.rowwise() += bv.transpose();
    }
  }

  std::vector<Tensor<S>> inputs = {x, w};
  if (b) inputs.push_back(*b);
  const bool has_bias = b != nullptr;
  return sebn::detail::make_op<S>(
      "linear", {n, dout}, std::move(out), std::move(inputs),
      [x, w, n, din, dout, has_bias](const std::vector<S>& g,
                                     const std::vector<std::vector<S>*>& gin) {
        ConstMatMap<S> gm(g.data(), n, dout);
        if (gin[0]) {
          ConstMatMap<S> wm(w.data(), dout, din);
          MatMap<S>(gin[0]->data(), n, din).noalias() += gm * wm;
        }
        if (gin[1]) {
          ConstMatMap<S> xm(x.data(), n, din);
          MatMap<S>(gin[1]->data(), dout, din).noalias() +=
              gm.transpose() * xm;
        }
        if (has_bias && gin[2]) {
          Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> bg(gin[2]->data(),
                                                             dout);
          bg += gm.colwise().sum().transpose();
        }
      });
}

}  // namespace detail

/// y = x wT + b with x:[N,Din], w:[Dout,Din], b:[Dout].
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return detail::linear_impl(x, w, &b);
}

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w) {
  return detail::linear_impl<S>(x, w, nullptr);
}

/// Multiplies x:[N,C,rest...] by a per-(sample, channel) scale s:[N,C].
template <class S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& s) {
  check_contract(x.rank() >= 2 && s.rank() == 2,
                 "scale_channels: x must have rank >= 2 and s rank 2");
  const int n = x.dim(0), c = x.dim(1);
  check_contract(s.dim(0) == n && s.dim(1) == c,
                 "scale_channels: scale shape " + shape_str(s.shape()) +
                     " does not match " + shape_str(x.shape()));
  long rest = 1;
  for (int i = 2; i < x.rank(); ++i) rest *= x.dim(i);

  std::vector<S> out(x.vec());
  for (long nc = 0; nc < static_cast<long>(n) * c; ++nc) {
    const S sv = s.vec()[static_cast<size_t>(nc)];
    for (long i = 0; i < rest; ++i) out[static_cast<size_t>(nc * rest + i)] *= sv;
  }

  return sebn::detail::make_op<S>(
      "scale_channels", x.shape(), std::move(out), {x, s},
      [x, s, n, c, rest](const std::vector<S>& g,
                         const std::vector<std::vector<S>*>& gin) {
        for (long nc = 0; nc < static_cast<long>(n) * c; ++nc) {
          const S sv = s.vec()[static_cast<size_t>(nc)];
          if (gin[0])
            for (long i = 0; i < rest; ++i)
              (*gin[0])[static_cast<size_t>(nc * rest + i)] +=
                  g[static_cast<size_t>(nc * rest + i)] * sv;
          if (gin[1]) {
            S acc = 0;
            for (long i = 0; i < rest; ++i)
              acc += g[static_cast<size_t>(nc * rest + i)] *
                     x.vec()[static_cast<size_t>(nc * rest + i)];
            (*gin[1])[static_cast<size_t>(nc)] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization-style ops
// ---------------------------------------------------------------------------

/// Numerically stable softmax along `axis`.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  long outer, inner;
  int n;
  detail::split_axis("softmax", x.shape(), axis, outer, n, inner);
  std::vector<S> out(x.vec());
  for (long o = 0; o < outer; ++o) {
    for (long i = 0; i < inner; ++i) {
      S mx = out[static_cast<size_t>(o * n * inner + i)];
      for (int t = 1; t < n; ++t)
        mx = std::max(mx, out[static_cast<size_t>((o * n + t) * inner + i)]);
      S denom = 0;
      for (int t = 0; t < n; ++t) {
        auto& v = out[static_cast<size_t>((o * n + t) * inner + i)];
        v = std::exp(v - mx);
        denom += v;
      }
      for (int t = 0; t < n; ++t)
        out[static_cast<size_t>((o * n + t) * inner + i)] /= denom;
    }
  }

  std::vector<S> saved(out);
  return sebn::detail::make_op<S>(
      "softmax", x.shape(), std::move(out), {x},
      [saved = std::move(saved), outer, n, inner](
          const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (long o = 0; o < outer; ++o) {
          for (long i = 0; i < inner; ++i) {
            S dot = 0;
            for (int t = 0; t < n; ++t) {
              const size_t k = static_cast<size_t>((o * n + t) * inner + i);
              dot += g[k] * saved[k];
            }
            for (int t = 0; t < n; ++t) {
              const size_t k = static_cast<size_t>((o * n + t) * inner + i);
              (*gin[0])[k] += saved[k] * (g[k] - dot);
            }
          }
        }
      });
}

/// x / ||x||_2 along `axis`, with a tiny floor guarding zero slices.
template <class S>
Tensor<S> l2_normalize(const Tensor<S>& x, int axis) {
  long outer, inner;
  int n;
  detail::split_axis("l2_normalize", x.shape(), axis, outer, n, inner);
  constexpr S kFloor = S(1e-12);

  std::vector<S> norms(static_cast<size_t>(outer * inner));
  std::vector<S> out(x.vec());
  for (long o = 0; o < outer; ++o) {
    for (long i = 0; i < inner; ++i) {
      S ss = 0;
      for (int t = 0; t < n; ++t) {
        const S v = x.vec()[static_cast<size_t>((o * n + t) * inner + i)];
        ss += v * v;
      }
      const S nv = std::max(std::sqrt(ss), kFloor);
      norms[static_cast<size_t>(o * inner + i)] = nv;
      for (int t = 0; t < n; ++t)
        out[static_cast<size_t>((o * n + t) * inner + i)] /= nv;
    }
  }

  std::vector<S> saved(out);
  return sebn::detail::make_op<S>(
      "l2_normalize", x.shape(), std::move(out), {x},
      [saved = std::move(saved), norms = std::move(norms), outer, n, inner](
          const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (long o = 0; o < outer; ++o) {
          for (long i = 0; i < inner; ++i) {
            const S nv = norms[static_cast<size_t>(o * inner + i)];
            S dot = 0;
            for (int t = 0; t < n; ++t) {
              const size_t k = static_cast<size_t>((o * n + t) * inner + i);
              dot += g[k] * saved[k];
            }
            for (int t = 0; t < n; ++t) {
              const size_t k = static_cast<size_t>((o * n + t) * inner + i);
              (*gin[0])[k] += (g[k] - saved[k] * dot) / nv;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// z[n,c] = mean over the (F,T) map of x[n,c,:,:].
template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  check_contract(x.rank() == 4, "global_avg_pool: input must be [N,C,F,T]");
  const int n = x.dim(0), c = x.dim(1);
  const long map = static_cast<long>(x.dim(2)) * x.dim(3);
  check_contract(map >= 1, "global_avg_pool: empty map");
  std::vector<S> out(static_cast<size_t>(n) * c, S(0));
  for (long nc = 0; nc < static_cast<long>(n) * c; ++nc) {
    S acc = 0;
    for (long i = 0; i < map; ++i)
      acc += x.vec()[static_cast<size_t>(nc * map + i)];
    out[static_cast<size_t>(nc)] = acc / static_cast<S>(map);
  }
  return sebn::detail::make_op<S>(
      "global_avg_pool", {n, c}, std::move(out), {x},
      [n, c, map](const std::vector<S>& g,
                  const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        const S inv = S(1) / static_cast<S>(map);
        for (long nc = 0; nc < static_cast<long>(n) * c; ++nc)
          for (long i = 0; i < map; ++i)
            (*gin[0])[static_cast<size_t>(nc * map + i)] +=
                g[static_cast<size_t>(nc)] * inv;
      });
}

// ---------------------------------------------------------------------------
// Row gather / scatter (labels are graph constants)
// ---------------------------------------------------------------------------

/// y[r] = x[r, index[r]] for x:[R,K].
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& index) {
  check_contract(x.rank() == 2, "gather_rows: input must be 2-d");
  const int r = x.dim(0), k = x.dim(1);
  check_contract(static_cast<int>(index.size()) == r,
                 "gather_rows: index length must equal row count");
  std::vector<S> out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    check_contract(index[static_cast<size_t>(i)] >= 0 &&
                       index[static_cast<size_t>(i)] < k,
                   "gather_rows: index out of range");
    out[static_cast<size_t>(i)] =
        x.vec()[static_cast<size_t>(i) * k + index[static_cast<size_t>(i)]];
  }
  return sebn::detail::make_op<S>(
      "gather_rows", {r}, std::move(out), {x},
      [index, k](const std::vector<S>& g,
                 const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        for (size_t i = 0; i < g.size(); ++i)
          (*gin[0])[i * static_cast<size_t>(k) +
                    static_cast<size_t>(index[i])] += g[i];
      });
}

/// Copy of x:[R,K] with x[r, index[r]] replaced by v[r].
template <class S>
Tensor<S> replace_rows(const Tensor<S>& x, const Tensor<S>& v,
                       const std::vector<int>& index) {
  check_contract(x.rank() == 2 && v.rank() == 1,
                 "replace_rows: x must be 2-d and v 1-d");
  const int r = x.dim(0), k = x.dim(1);
  check_contract(v.dim(0) == r && static_cast<int>(index.size()) == r,
                 "replace_rows: row counts disagree");
  std::vector<S> out(x.vec());
  for (int i = 0; i < r; ++i) {
    check_contract(index[static_cast<size_t>(i)] >= 0 &&
                       index[static_cast<size_t>(i)] < k,
                   "replace_rows: index out of range");
    out[static_cast<size_t>(i) * k + index[static_cast<size_t>(i)]] =
        v.vec()[static_cast<size_t>(i)];
  }
  return sebn::detail::make_op<S>(
      "replace_rows", {r, k}, std::move(out), {x, v},
      [index, r, k](const std::vector<S>& g,
                    const std::vector<std::vector<S>*>& gin) {
        for (int i = 0; i < r; ++i) {
          const size_t hit =
              static_cast<size_t>(i) * k + static_cast<size_t>(index[i]);
          if (gin[0])
            for (int j = 0; j < k; ++j) {
              const size_t p = static_cast<size_t>(i) * k + j;
              if (p != hit) (*gin[0])[p] += g[p];
            }
          if (gin[1]) (*gin[1])[static_cast<size_t>(i)] += g[hit];
        }
      });
}

/// Mean cross-entropy of logits:[R,K] against integer labels (stable
/// log-softmax fused with the NLL).
template <class S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits,
                               const std::vector<int>& labels) {
  check_contract(logits.rank() == 2, "cross_entropy_logits: logits must be 2-d");
  const int r = logits.dim(0), k = logits.dim(1);
  check_contract(static_cast<int>(labels.size()) == r,
                 "cross_entropy_logits: label count mismatch");

  std::vector<S> probs(logits.vec());
  S loss = 0;
  for (int i = 0; i < r; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    check_contract(y >= 0 && y < k, "cross_entropy_logits: invalid label " +
                                        std::to_string(y));
    S* row = probs.data() + static_cast<size_t>(i) * k;
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    loss += std::log(denom) -
            (logits.vec()[static_cast<size_t>(i) * k + y] - mx);
    for (int j = 0; j < k; ++j) row[j] /= denom;
  }
  loss /= static_cast<S>(r);

  return sebn::detail::make_op<S>(
      "cross_entropy_logits", {1}, {loss}, {logits},
      [probs = std::move(probs), labels, r, k](
          const std::vector<S>& g, const std::vector<std::vector<S>*>& gin) {
        if (!gin[0]) return;
        const S scale = g[0] / static_cast<S>(r);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < k; ++j) {
            const size_t p = static_cast<size_t>(i) * k + j;
            const S onehot = j == labels[static_cast<size_t>(i)] ? S(1) : S(0);
            (*gin[0])[p] += scale * (probs[p] - onehot);
          }
      });
}

}  // namespace ops
}  // namespace sebn

#endif  // SEBN_OPS_HPP_
