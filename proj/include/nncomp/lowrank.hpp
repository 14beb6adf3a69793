#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

// Thin SVD of a small dense matrix, singular values descending.
struct SmallSvd {
  std::vector<double> sigma;         // min(m,n) values, descending
  std::vector<std::vector<double>> u;   // left vectors, u[i] has m entries
  std::vector<std::vector<double>> v;   // right vectors, v[i] has n entries
};

namespace detail {

// One-sided Jacobi on the columns of a (m x n, m >= n handled by caller via
// transposition). Rotations orthogonalize column pairs until all pairwise
// inner products vanish relative to the column norms.
inline SmallSvd jacobi_svd(const Tensor& a) {
  const size_t m = a.dim(0), n = a.dim(1);
  const bool flip = m < n;
  const size_t rows = flip ? n : m;
  const size_t cols = flip ? m : n;

  // work[j] = column j
  std::vector<std::vector<double>> work(cols, std::vector<double>(rows));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      const double val = a[i * n + j];
      if (flip)
        work[i][j] = val;
      else
        work[j][i] = val;
    }

  std::vector<std::vector<double>> vt(cols, std::vector<double>(cols, 0.0));
  for (size_t j = 0; j < cols; ++j) vt[j][j] = 1.0;

  const double eps = 1e-15;
  for (size_t sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (size_t p = 0; p + 1 < cols; ++p) {
      for (size_t q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (size_t i = 0; i < rows; ++i) {
          alpha += work[p][i] * work[p][i];
          beta += work[q][i] * work[q][i];
          gamma += work[p][i] * work[q][i];
        }
        if (std::fabs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (size_t i = 0; i < rows; ++i) {
          const double wp = work[p][i];
          work[p][i] = c * wp - s * work[q][i];
          work[q][i] = s * wp + c * work[q][i];
        }
        for (size_t i = 0; i < cols; ++i) {
          const double vp = vt[p][i];
          vt[p][i] = c * vp - s * vt[q][i];
          vt[q][i] = s * vp + c * vt[q][i];
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<size_t> order(cols);
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> norms(cols);
  for (size_t j = 0; j < cols; ++j) {
    double sq = 0.0;
    for (double v : work[j]) sq += v * v;
    norms[j] = std::sqrt(sq);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&norms](size_t x, size_t y) { return norms[x] > norms[y]; });

  SmallSvd out;
  for (size_t r = 0; r < cols; ++r) {
    const size_t j = order[r];
    const double sig = norms[j];
    out.sigma.push_back(sig);
    std::vector<double> left(rows, 0.0);
    if (sig > 0.0)
      for (size_t i = 0; i < rows; ++i) left[i] = work[j][i] / sig;
    if (flip) {
      out.u.push_back(vt[j]);
      out.v.push_back(std::move(left));
    } else {
      out.u.push_back(std::move(left));
      out.v.push_back(vt[j]);
    }
  }
  return out;
}

}  // namespace detail

// SVD of a small 2-D tensor (kernel slices, a few dozen entries).
inline SmallSvd svd_small(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("svd_small: expected a 2-D tensor");
  return detail::jacobi_svd(a);
}

struct LowRankDecomposition {
  std::unique_ptr<LowRankConv2dLayer> layer;
  double reconstruction_error = 0.0;   // sum over slices of ||K - K_hat||_F^2
  size_t original_weights = 0;
  size_t factored_weights = 0;
};

// Rank-r separable approximation of a conv kernel: each (out, in) kernel
// slice is factored into r vertical (w x 1) and horizontal (1 x h) pairs via
// SVD, realizing the best rank-r approximation slice by slice.
inline LowRankDecomposition decompose_conv_lowrank(const Conv2dLayer& conv, size_t rank) {
  if (rank == 0) throw ConfigError("decompose: rank must be >= 1");
  const size_t kh = conv.kernel_h(), kw = conv.kernel_w();
  if (kh < 2 || kw < 2) throw ConfigError("decompose: kernel must be at least 2x2");
  if (rank > std::min(kh, kw)) throw ConfigError("decompose: rank exceeds min kernel dim");
  if (conv.stride() != 1) throw ConfigError("decompose: only stride-1 convolutions");

  const size_t cin = conv.in_channels(), cout = conv.out_channels();
  LowRankDecomposition out;
  out.layer = std::make_unique<LowRankConv2dLayer>(cin, cout, kh, kw, rank, conv.pad_h(),
                                                   conv.pad_w(), conv.has_bias());
  Tensor& u = out.layer->vertical_factors();
  Tensor& v = out.layer->horizontal_factors();
  const Tensor& w = conv.weights();

  for (size_t o = 0; o < cout; ++o) {
    for (size_t c = 0; c < cin; ++c) {
      Tensor slice({kh, kw});
      for (size_t i = 0; i < kh * kw; ++i) slice[i] = w[(o * cin + c) * kh * kw + i];
      SmallSvd svd = svd_small(slice);

      for (size_t r = 0; r < rank; ++r) {
        const double scale = std::sqrt(svd.sigma[r]);
        for (size_t i = 0; i < kh; ++i)
          u[((o * cin + c) * rank + r) * kh + i] = scale * svd.u[r][i];
        for (size_t j = 0; j < kw; ++j)
          v[((o * cin + c) * rank + r) * kw + j] = scale * svd.v[r][j];
      }

      for (size_t i = 0; i < kh; ++i) {
        for (size_t j = 0; j < kw; ++j) {
          double rec = 0.0;
          for (size_t r = 0; r < rank; ++r)
            rec += u[((o * cin + c) * rank + r) * kh + i] *
                   v[((o * cin + c) * rank + r) * kw + j];
          const double d = slice[i * kw + j] - rec;
          out.reconstruction_error += d * d;
        }
      }
    }
  }

  if (conv.has_bias()) out.layer->bias() = conv.bias();
  out.original_weights = conv.weight_count();
  out.factored_weights = out.layer->weight_count();
  return out;
}

}  // namespace nncomp
