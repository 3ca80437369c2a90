// sebn/conv.hpp

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

#ifndef SEBN_CONV_HPP_
#define SEBN_CONV_HPP_

#include <vector>

#include "sebn/ops.hpp"
#include "sebn/tensor.hpp"

namespace sebn {
namespace ops {

namespace detail {

struct ConvDims {
  int n, cin, f, t;       // input
  int cout, k;            // kernel
  int stride, pad;
  int f2, t2;             // output spatial extents
  long patch;             // cin * k * k
  long cols;              // f2 * t2
};

inline ConvDims conv_dims(const std::vector<int>& xs,
                          const std::vector<int>& ws, int stride, int pad) {
  check_contract(xs.size() == 4, "conv2d: input must be [N,Cin,F,T]");
  check_contract(ws.size() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.f = xs[2];
  d.t = xs[3];
  d.cout = ws[0];
  d.k = ws[2];
  check_contract(ws[1] == d.cin, "conv2d: channel mismatch, input " +
                                     shape_str(xs) + " weight " +
                                     shape_str(ws));
  check_contract(ws[3] == d.k, "conv2d: kernel must be square");
  check_contract(d.k == 1 || d.k == 3, "conv2d: kernel size must be 1 or 3");
  check_contract(pad == d.k / 2, "conv2d: pad must equal k/2");
  check_contract(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  d.stride = stride;
  d.pad = pad;
  d.f2 = (d.f + 2 * pad - d.k) / stride + 1;
  d.t2 = (d.t + 2 * pad - d.k) / stride + 1;
  check_contract(d.f2 >= 1 && d.t2 >= 1, "conv2d: output would be empty");
  d.patch = static_cast<long>(d.cin) * d.k * d.k;
  d.cols = static_cast<long>(d.f2) * d.t2;
  return d;
}

// Lowers all samples into one [patch, n*cols] matrix (columns sample-major).
template <class S>
void im2col(const S* x, const ConvDims& d, S* col) {
  const long fmap = static_cast<long>(d.f) * d.t;
  const long total_cols = static_cast<long>(d.n) * d.cols;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int u = 0; u < d.k; ++u) {
      for (int v = 0; v < d.k; ++v) {
        S* row = col + ((static_cast<long>(ci) * d.k + u) * d.k + v) * total_cols;
        for (int n = 0; n < d.n; ++n) {
          const S* src = x + (static_cast<long>(n) * d.cin + ci) * fmap;
          S* dst = row + static_cast<long>(n) * d.cols;
          for (int i = 0; i < d.f2; ++i) {
            const int fi = i * d.stride + u - d.pad;
            if (fi < 0 || fi >= d.f) {
              for (int j = 0; j < d.t2; ++j) dst[i * d.t2 + j] = S(0);
              continue;
            }
            for (int j = 0; j < d.t2; ++j) {
              const int tj = j * d.stride + v - d.pad;
              dst[i * d.t2 + j] =
                  (tj < 0 || tj >= d.t) ? S(0) : src[static_cast<long>(fi) * d.t + tj];
            }
          }
        }
      }
    }
  }
}

// Scatter-adds a [patch, n*cols] gradient back onto the input layout.
template <class S>
void col2im_add(const S* col, const ConvDims& d, S* gx) {
  const long fmap = static_cast<long>(d.f) * d.t;
  const long total_cols = static_cast<long>(d.n) * d.cols;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int u = 0; u < d.k; ++u) {
      for (int v = 0; v < d.k; ++v) {
        const S* row =
            col + ((static_cast<long>(ci) * d.k + u) * d.k + v) * total_cols;
        for (int n = 0; n < d.n; ++n) {
          S* dst = gx + (static_cast<long>(n) * d.cin + ci) * fmap;
          const S* src = row + static_cast<long>(n) * d.cols;
          for (int i = 0; i < d.f2; ++i) {
            const int fi = i * d.stride + u - d.pad;
            if (fi < 0 || fi >= d.f) continue;
            for (int j = 0; j < d.t2; ++j) {
              const int tj = j * d.stride + v - d.pad;
              if (tj >= 0 && tj < d.t)
                dst[static_cast<long>(fi) * d.t + tj] += src[i * d.t2 + j];
            }
          }
        }
      }
    }
  }
}

template <class S>
Tensor<S> conv2d_impl(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b,
                      int stride, int pad) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  if (b)
    check_contract(b->rank() == 1 && b->dim(0) == d.cout,
                   "conv2d: bias extent must equal Cout");

  const long total_cols = static_cast<long>(d.n) * d.cols;
  std::vector<S> col(static_cast<size_t>(d.patch * total_cols));
  im2col(x.data(), d, col.data());

  // [cout, patch] x [patch, n*cols]
  std::vector<S> prod(static_cast<size_t>(d.cout) * total_cols);
  {
    ConstMatMap<S> wm(w.data(), d.cout, d.patch);
    ConstMatMap<S> cm(col.data(), d.patch, total_cols);
    MatMap<S>(prod.data(), d.cout, total_cols).noalias() = wm * cm;
  }

  // Transpose the sample axis out: out[n,co,i,j] = prod(co, n*cols + ij).
  std::vector<S> out(static_cast<size_t>(d.n) * d.cout * d.cols);
  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.cout; ++co) {
      const S bias = b ? b->vec()[static_cast<size_t>(co)] : S(0);
      const S* src = prod.data() + static_cast<long>(co) * total_cols +
                     static_cast<long>(n) * d.cols;
      S* dst = out.data() + (static_cast<long>(n) * d.cout + co) * d.cols;
      for (long i = 0; i < d.cols; ++i) dst[i] = src[i] + bias;
    }

  std::vector<Tensor<S>> inputs = {x, w};
  if (b) inputs.push_back(*b);
  const bool has_bias = b != nullptr;
  return sebn::detail::make_op<S>(
      "conv2d", {d.n, d.cout, d.f2, d.t2}, std::move(out), std::move(inputs),
      [x, w, d, has_bias](const std::vector<S>& g,
                          const std::vector<std::vector<S>*>& gin) {
        const long total_cols = static_cast<long>(d.n) * d.cols;

        // Regroup the output gradient as [cout, n*cols].
        std::vector<S> gm(static_cast<size_t>(d.cout) * total_cols);
        for (int n = 0; n < d.n; ++n)
          for (int co = 0; co < d.cout; ++co) {
            const S* src = g.data() + (static_cast<long>(n) * d.cout + co) * d.cols;
            S* dst = gm.data() + static_cast<long>(co) * total_cols +
                     static_cast<long>(n) * d.cols;
            for (long i = 0; i < d.cols; ++i) dst[i] = src[i];
          }
        ConstMatMap<S> gmat(gm.data(), d.cout, total_cols);

        if (has_bias && gin[2]) {
          for (int co = 0; co < d.cout; ++co)
            (*gin[2])[static_cast<size_t>(co)] += gmat.row(co).sum();
        }
        if (gin[1]) {
          std::vector<S> col(static_cast<size_t>(d.patch * total_cols));
          im2col(x.data(), d, col.data());
          ConstMatMap<S> cm(col.data(), d.patch, total_cols);
          MatMap<S>(gin[1]->data(), d.cout, d.patch).noalias() +=
              gmat * cm.transpose();
        }
        if (gin[0]) {
          std::vector<S> gcol(static_cast<size_t>(d.patch * total_cols));
          ConstMatMap<S> wm(w.data(), d.cout, d.patch);
          MatMap<S>(gcol.data(), d.patch, total_cols).noalias() =
              wm.transpose() * gmat;
          col2im_add(gcol.data(), d, gin[0]->data());
        }
      });
}

}  // namespace detail

/// 2-d convolution over [N,Cin,F,T] maps; k in {1,3}, pad = k/2, stride 1|2.
/// Output spatial extents follow floor((X + 2*pad - k)/stride) + 1.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride, int pad) {
  return detail::conv2d_impl(x, w, &b, stride, pad);
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  return detail::conv2d_impl<S>(x, w, nullptr, stride, pad);
}

}  // namespace ops
}  // namespace sebn

#endif  // SEBN_CONV_HPP_
