// Copyright 2026 The trfam Authors.
//
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

#include "trfam/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

namespace trf {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
ConstMatMap<T> as_matrix(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) {
    return false;
  }
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) {
      return true;
    }
  }
  return false;
}

// Registers fn(out_grad) on the active tape. The closure runs only if the
// output was reached from the loss.
template <typename T, typename F>
void record(Tensor<T>& out, F fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->record([out, fn = std::move(fn)]() mutable {
    if (!out.has_grad()) {
      return;
    }
    std::span<const T> g = std::as_const(out).grad();
    fn(g);
  });
}

template <typename T>
bool wants(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

void require(bool cond, const std::string& what) {
  if (!cond) {
    throw ShapeError(what);
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  require(x.rank() == rank, std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " +
                                to_string(x.shape()));
}

}  // namespace

KeepMask KeepMask::all(std::size_t rows, std::size_t cols) {
  return KeepMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = x[i] + y[i];
  }
  if (tracking({&a, &b})) {
    record(out, [a = a, b = b](std::span<const T> g) mutable {
      for (auto* t : {&a, &b}) {
        if (wants(*t)) {
          auto gt = t->grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            gt[i] += g[i];
          }
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = v[i] * factor;
  }
  if (tracking({&x})) {
    record(out, [x = x, factor](std::span<const T> g) mutable {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * factor;
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) {
    total += v;
  }
  auto out = Tensor<T>::scalar(total);
  if (tracking({&x})) {
    record(out, [x = x](std::span<const T> g) mutable {
      for (auto& gx : x.grad()) {
        gx += g[0];
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: inner dimensions differ: " + to_string(a.shape()) + " x " +
              to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  as_matrix(out.data(), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  if (tracking({&a, &b})) {
    record(out, [a = a, b = b, m, k, n](std::span<const T> g) mutable {
      auto dc = as_matrix(g, m, n);
      if (wants(a)) {
        as_matrix(a.grad(), m, k).noalias() +=
            dc * as_matrix(std::as_const(b).data(), k, n).transpose();
      }
      if (wants(b)) {
        as_matrix(b.grad(), k, n).noalias() +=
            as_matrix(std::as_const(a).data(), m, k).transpose() * dc;
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: inner dimensions differ: " + to_string(a.shape()) +
              " x " + to_string(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> out(Shape{m, n});
  as_matrix(out.data(), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), n, k).transpose();
  if (tracking({&a, &b})) {
    record(out, [a = a, b = b, m, k, n](std::span<const T> g) mutable {
      auto dc = as_matrix(g, m, n);
      if (wants(a)) {
        as_matrix(a.grad(), m, k).noalias() +=
            dc * as_matrix(std::as_const(b).data(), n, k);
      }
      if (wants(b)) {
        as_matrix(b.grad(), n, k).noalias() +=
            dc.transpose() * as_matrix(std::as_const(a).data(), m, k);
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "linear: input " + to_string(x.shape()) + " does not match weight " +
              to_string(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  if (bias.defined()) {
    require(bias.size() == outd, "linear: bias " + to_string(bias.shape()) +
                                     " does not match weight " +
                                     to_string(w.shape()));
  }
  Tensor<T> out(Shape{n, outd});
  auto y = as_matrix(out.data(), n, outd);
  y.noalias() = as_matrix(x.data(), n, in) * as_matrix(w.data(), outd, in).transpose();
  if (bias.defined()) {
    y.rowwise() += ConstVecMap<T>(bias.data().data(), outd).transpose();
  }
  if (tracking({&x, &w, &bias})) {
    record(out, [x = x, w = w, bias = bias, n, in, outd](std::span<const T> g) mutable {
      auto dy = as_matrix(g, n, outd);
      if (wants(x)) {
        as_matrix(x.grad(), n, in).noalias() +=
            dy * as_matrix(std::as_const(w).data(), outd, in);
      }
      if (wants(w)) {
        as_matrix(w.grad(), outd, in).noalias() +=
            dy.transpose() * as_matrix(std::as_const(x).data(), n, in);
      }
      if (wants(bias)) {
        VecMap<T>(bias.grad().data(), outd) += dy.colwise().sum().transpose();
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = v[i] > T(0) ? v[i] : T(0);
  }
  if (tracking({&x})) {
    record(out, [x = x](std::span<const T> g) mutable {
      auto v = std::as_const(x).data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (v[i] > T(0)) {
          gx[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = T(0.5) * v[i] * (T(1) + std::erf(v[i] * kInvSqrt2));
  }
  if (tracking({&x})) {
    record(out, [x = x](std::span<const T> g) mutable {
      constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
      auto v = std::as_const(x).data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(v[i] * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v[i] * v[i]);
        gx[i] += g[i] * (cdf + v[i] * pdf);
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1, "layernorm: scalar input");
  const std::size_t d = x.shape().back();
  require(gamma.size() == d && beta.size() == d,
          "layernorm: affine parameters " + to_string(gamma.shape()) + "/" +
              to_string(beta.shape()) + " do not match input " +
              to_string(x.shape()));
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  auto v = x.data();
  auto o = out.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) {
      mean += row[i];
    }
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mean) * inv;
      (*xhat)[r * d + i] = h;
      o[r * d + i] = h * gm[i] + bt[i];
    }
  }
  if (tracking({&x, &gamma, &beta})) {
    record(out, [x = x, gamma = gamma, beta = beta, xhat, rstd, rows, d]
        (std::span<const T> g) mutable {
      const auto& h = *xhat;
      if (wants(gamma) || wants(beta)) {
        std::vector<T> dg(d, T(0)), db(d, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < d; ++i) {
            dg[i] += g[r * d + i] * h[r * d + i];
            db[i] += g[r * d + i];
          }
        }
        if (wants(gamma)) {
          auto gg = gamma.grad();
          for (std::size_t i = 0; i < d; ++i) gg[i] += dg[i];
        }
        if (wants(beta)) {
          auto gb = beta.grad();
          for (std::size_t i = 0; i < d; ++i) gb[i] += db[i];
        }
      }
      if (wants(x)) {
        auto gm = std::as_const(gamma).data();
        auto gx = x.grad();
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t i = 0; i < d; ++i) {
            dh[i] = g[r * d + i] * gm[i];
            mean_dh += dh[i];
            mean_dh_h += dh[i] * h[r * d + i];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            gx[r * d + i] +=
                (*rstd)[r] * (dh[i] - mean_dh - h[r * d + i] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> softmax_masked(const Tensor<T>& logits, const KeepMask& mask) {
  require(logits.rank() >= 1, "softmax_masked: scalar input");
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = logits.size() / cols;
  require(mask.rows == rows && mask.cols == cols && mask.keep.size() == rows * cols,
          "softmax_masked: mask [" + std::to_string(mask.rows) + "x" +
              std::to_string(mask.cols) + "] does not match logits " +
              to_string(logits.shape()));
  Tensor<T> out(logits.shape());
  auto z = logits.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* keep = mask.keep.data() + r * cols;
    T peak = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep[c]) {
        peak = std::max(peak, z[r * cols + c]);
        any = true;
      }
    }
    if (!any) {
      throw std::domain_error("softmax_masked: row " + std::to_string(r) +
                              " has no unmasked position");
    }
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T e = keep[c] ? std::exp(z[r * cols + c] - peak) : T(0);
      y[r * cols + c] = e;
      total += e;
    }
    const T inv = T(1) / total;
    for (std::size_t c = 0; c < cols; ++c) {
      y[r * cols + c] *= inv;
    }
  }
  if (tracking({&logits})) {
    Tensor<T> probs = out;
    record(out, [logits = logits, probs, rows, cols](std::span<const T> g) mutable {
      auto p = std::as_const(probs).data();
      auto gz = logits.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          dot += g[r * cols + c] * p[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
          gz[r * cols + c] += p[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, RngKey key) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: probability must be in [0, 1), got " +
                                std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) {
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto multiplier = std::make_shared<std::vector<T>>(x.size());
  Tensor<T> out(x.shape());
  auto v = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T m = key.uniform(i) < p ? T(0) : keep_scale;
    (*multiplier)[i] = m;
    o[i] = v[i] * m;
  }
  if (tracking({&x})) {
    record(out, [x = x, multiplier](std::span<const T> g) mutable {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * (*multiplier)[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> valid) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(targets.size() == n, "cross_entropy: " + std::to_string(targets.size()) +
                                   " targets for logits " + to_string(logits.shape()));
  require(valid.empty() || valid.size() == n,
          "cross_entropy: frame mask length " + std::to_string(valid.size()) +
              " for " + std::to_string(n) + " rows");
  auto is_valid = [&](std::size_t r) { return valid.empty() || valid[r] != 0; };
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!is_valid(r)) {
      continue;
    }
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                              " at row " + std::to_string(r) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("cross_entropy: no unpadded frames");
  }
  auto z = logits.data();
  auto lse = std::make_shared<std::vector<T>>(n, T(0));
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!is_valid(r)) {
      continue;
    }
    const T* row = z.data() + r * k;
    const T peak = *std::max_element(row, row + k);
    T s = 0;
    for (std::size_t c = 0; c < k; ++c) {
      s += std::exp(row[c] - peak);
    }
    (*lse)[r] = peak + std::log(s);
    total += static_cast<double>((*lse)[r] - row[targets[r]]);
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
  if (tracking({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> mask(valid.begin(), valid.end());
    record(out, [logits = logits, lse, tgt = std::move(tgt), mask = std::move(mask), n, k, count]
        (std::span<const T> g) mutable {
      const T w = g[0] / static_cast<T>(count);
      auto zz = std::as_const(logits).data();
      auto gz = logits.grad();
      for (std::size_t r = 0; r < n; ++r) {
        if (!mask.empty() && mask[r] == 0) {
          continue;
        }
        for (std::size_t c = 0; c < k; ++c) {
          gz[r * k + c] += w * std::exp(zz[r * k + c] - (*lse)[r]);
        }
        gz[r * k + static_cast<std::size_t>(tgt[r])] -= w;
      }
    });
  }
  return out;
}

namespace {

// Maps a possibly out-of-range coordinate to a source index, or -1 for a
// zero-padded position.
inline long padded_index(long i, long extent, PadMode mode) {
  if (i >= 0 && i < extent) {
    return i;
  }
  if (mode == PadMode::kZero) {
    return -1;
  }
  return i < 0 ? 0 : extent - 1;
}

template <typename T>
void im2col(std::span<const T> x, std::size_t ci, std::size_t f, std::size_t t,
            PadMode fpad, PadMode tpad, AlignedVector<T>& cols) {
  const std::size_t plane = f * t;
  cols.assign(ci * 9 * plane, T(0));
  for (std::size_t c = 0; c < ci; ++c) {
    for (long kf = 0; kf < 3; ++kf) {
      for (long kt = 0; kt < 3; ++kt) {
        T* dst = cols.data() + ((c * 9) + static_cast<std::size_t>(kf * 3 + kt)) * plane;
        for (long fi = 0; fi < static_cast<long>(f); ++fi) {
          const long sf = padded_index(fi + kf - 1, static_cast<long>(f), fpad);
          if (sf < 0) {
            continue;
          }
          const T* src = x.data() + c * plane + static_cast<std::size_t>(sf) * t;
          T* drow = dst + static_cast<std::size_t>(fi) * t;
          for (long ti = 0; ti < static_cast<long>(t); ++ti) {
            const long st = padded_index(ti + kt - 1, static_cast<long>(t), tpad);
            if (st >= 0) {
              drow[ti] = src[st];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(std::span<const T> cols, std::size_t ci, std::size_t f, std::size_t t,
            PadMode fpad, PadMode tpad, std::span<T> gx) {
  const std::size_t plane = f * t;
  for (std::size_t c = 0; c < ci; ++c) {
    for (long kf = 0; kf < 3; ++kf) {
      for (long kt = 0; kt < 3; ++kt) {
        const T* src = cols.data() + ((c * 9) + static_cast<std::size_t>(kf * 3 + kt)) * plane;
        for (long fi = 0; fi < static_cast<long>(f); ++fi) {
          const long sf = padded_index(fi + kf - 1, static_cast<long>(f), fpad);
          if (sf < 0) {
            continue;
          }
          T* drow = gx.data() + c * plane + static_cast<std::size_t>(sf) * t;
          const T* srow = src + static_cast<std::size_t>(fi) * t;
          for (long ti = 0; ti < static_cast<long>(t); ++ti) {
            const long st = padded_index(ti + kt - 1, static_cast<long>(t), tpad);
            if (st >= 0) {
              drow[st] += srow[ti];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 PadMode freq_pad, PadMode time_pad) {
  require_rank(x, 3, "conv2d");
  require(w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3,
          "conv2d: kernel must be [C_out x C_in x 3 x 3], got " + to_string(w.shape()));
  require(w.dim(1) == x.dim(0), "conv2d: kernel " + to_string(w.shape()) +
                                    " expects " + std::to_string(w.dim(1)) +
                                    " input channels, input is " +
                                    to_string(x.shape()));
  require(bias.defined() && bias.size() == w.dim(0),
          "conv2d: bias must have " + std::to_string(w.dim(0)) + " entries");
  const std::size_t ci = x.dim(0), f = x.dim(1), t = x.dim(2), co = w.dim(0);
  const std::size_t plane = f * t, kdim = ci * 9;
  auto cols = std::make_shared<AlignedVector<T>>();
  im2col<T>(x.data(), ci, f, t, freq_pad, time_pad, *cols);
  Tensor<T> out(Shape{co, f, t});
  auto y = as_matrix(out.data(), co, plane);
  y.noalias() = as_matrix(w.data(), co, kdim) *
                as_matrix(std::span<const T>(*cols), kdim, plane);
  y.colwise() += ConstVecMap<T>(bias.data().data(), co);
  if (tracking({&x, &w, &bias})) {
    record(out, [x = x, w = w, bias = bias, cols, ci, f, t, co, plane, kdim, freq_pad, time_pad]
        (std::span<const T> g) mutable {
      auto dy = as_matrix(g, co, plane);
      if (wants(w)) {
        as_matrix(w.grad(), co, kdim).noalias() +=
            dy * as_matrix(std::span<const T>(*cols), kdim, plane).transpose();
      }
      if (wants(bias)) {
        VecMap<T>(bias.grad().data(), co) += dy.rowwise().sum();
      }
      if (wants(x)) {
        AlignedVector<T> dcols(kdim * plane);
        as_matrix(std::span<T>(dcols), kdim, plane).noalias() =
            as_matrix(std::as_const(w).data(), co, kdim).transpose() * dy;
        col2im<T>(dcols, ci, f, t, freq_pad, time_pad, x.grad());
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t stride_f, std::size_t stride_t) {
  require_rank(x, 3, "maxpool2d");
  if (stride_f < 1 || stride_f > 2 || stride_t < 1 || stride_t > 2) {
    throw std::invalid_argument("maxpool2d: strides must be 1 or 2");
  }
  const std::size_t c = x.dim(0), f = x.dim(1), t = x.dim(2);
  require(f >= 2 && t >= 2, "maxpool2d: input " + to_string(x.shape()) +
                                " is smaller than the 2x2 grid");
  const std::size_t fo = (f - 2) / stride_f + 1, to = (t - 2) / stride_t + 1;
  Tensor<T> out(Shape{c, fo, to});
  auto argmax = std::make_shared<std::vector<std::size_t>>(c * fo * to);
  auto v = x.data();
  auto o = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < fo; ++i) {
      for (std::size_t j = 0; j < to; ++j) {
        const std::size_t base = ch * f * t + i * stride_f * t + j * stride_t;
        std::size_t best = base;
        for (std::size_t idx : {base, base + 1, base + t, base + t + 1}) {
          if (v[idx] > v[best]) {
            best = idx;
          }
        }
        const std::size_t oi = (ch * fo + i) * to + j;
        o[oi] = v[best];
        (*argmax)[oi] = best;
      }
    }
  }
  if (tracking({&x})) {
    record(out, [x = x, argmax](std::span<const T> g) mutable {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[(*argmax)[i]] += g[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> pad_replicate(const Tensor<T>& x, std::size_t axis, std::size_t before,
                        std::size_t after) {
  require_rank(x, 3, "pad_replicate");
  require(axis == 1 || axis == 2, "pad_replicate: axis must be 1 or 2");
  const std::size_t c = x.dim(0), f = x.dim(1), t = x.dim(2);
  const std::size_t fo = axis == 1 ? f + before + after : f;
  const std::size_t to = axis == 2 ? t + before + after : t;
  auto source = [=](std::size_t i, std::size_t j) {
    std::size_t si = i, sj = j;
    if (axis == 1) {
      si = std::clamp<long>(static_cast<long>(i) - static_cast<long>(before), 0,
                            static_cast<long>(f) - 1);
    } else {
      sj = std::clamp<long>(static_cast<long>(j) - static_cast<long>(before), 0,
                            static_cast<long>(t) - 1);
    }
    return si * t + sj;
  };
  Tensor<T> out(Shape{c, fo, to});
  auto v = x.data();
  auto o = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < fo; ++i) {
      for (std::size_t j = 0; j < to; ++j) {
        o[(ch * fo + i) * to + j] = v[ch * f * t + source(i, j)];
      }
    }
  }
  if (tracking({&x})) {
    record(out, [x = x, source, c, f, t, fo, to](std::span<const T> g) mutable {
      auto gx = x.grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < fo; ++i) {
          for (std::size_t j = 0; j < to; ++j) {
            gx[ch * f * t + source(i, j)] += g[(ch * fo + i) * to + j];
          }
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> frames_from_channels(const Tensor<T>& x) {
  require_rank(x, 3, "frames_from_channels");
  const std::size_t c = x.dim(0), f = x.dim(1), t = x.dim(2);
  const std::size_t width = c * f;
  Tensor<T> out(Shape{t, width});
  // [C*F x T] row-major transposed to [T x C*F].
  as_matrix(out.data(), t, width) = as_matrix(x.data(), width, t).transpose();
  if (tracking({&x})) {
    record(out, [x = x, t, width](std::span<const T> g) mutable {
      as_matrix(x.grad(), width, t) += as_matrix(g, t, width).transpose();
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& x, std::size_t r0, std::size_t nr, std::size_t c0,
                std::size_t nc) {
  require_rank(x, 2, "slice");
  require(r0 + nr <= x.dim(0) && c0 + nc <= x.dim(1),
          "slice: block exceeds " + to_string(x.shape()));
  const std::size_t cols = x.dim(1);
  Tensor<T> out(Shape{nr, nc});
  as_matrix(out.data(), nr, nc) =
      as_matrix(x.data(), x.dim(0), cols).block(r0, c0, nr, nc);
  if (tracking({&x})) {
    const std::size_t rows = x.dim(0);
    record(out, [x = x, r0, nr, c0, nc, rows, cols](std::span<const T> g) mutable {
      as_matrix(x.grad(), rows, cols).block(r0, c0, nr, nc) += as_matrix(g, nr, nc);
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> assemble(std::size_t rows, std::size_t cols,
                   const std::vector<Block<T>>& blocks) {
  Tensor<T> out(Shape{rows, cols});
  auto o = as_matrix(out.data(), rows, cols);
  std::vector<std::uint8_t> owned(rows * cols, 0);
  bool track = false;
  for (const auto& b : blocks) {
    require_rank(b.value, 2, "assemble");
    const std::size_t br = b.value.dim(0), bc = b.value.dim(1);
    require(b.row + br <= rows && b.col + bc <= cols,
            "assemble: block " + to_string(b.value.shape()) + " at (" +
                std::to_string(b.row) + "," + std::to_string(b.col) +
                ") exceeds [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
    for (std::size_t r = b.row; r < b.row + br; ++r) {
      for (std::size_t c = b.col; c < b.col + bc; ++c) {
        if (owned[r * cols + c]++) {
          throw ShapeError("assemble: blocks overlap at (" + std::to_string(r) + "," +
                           std::to_string(c) + ")");
        }
      }
    }
    o.block(b.row, b.col, br, bc) = as_matrix(b.value.data(), br, bc);
    track = track || tracking({&b.value});
  }
  if (track) {
    record(out, [blocks = blocks, rows, cols](std::span<const T> g) mutable {
      auto gm = as_matrix(g, rows, cols);
      for (auto& b : blocks) {
        if (!wants(b.value)) {
          continue;
        }
        const std::size_t br = b.value.dim(0), bc = b.value.dim(1);
        as_matrix(b.value.grad(), br, bc) += gm.block(b.row, b.col, br, bc);
      }
    });
  }
  return out;
}

#define TRF_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> relu(const Tensor<T>&);                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                       \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&,                 \
                               const Tensor<T>&, T);                               \
  template Tensor<T> softmax_masked(const Tensor<T>&, const KeepMask&);            \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, RngKey);              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>,         \
                                   std::span<const std::uint8_t>);                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                            PadMode, PadMode);                                     \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);        \
  template Tensor<T> pad_replicate(const Tensor<T>&, std::size_t, std::size_t,     \
                                   std::size_t);                                   \
  template Tensor<T> frames_from_channels(const Tensor<T>&);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t,             \
                           std::size_t, std::size_t);                              \
  template Tensor<T> assemble(std::size_t, std::size_t, const std::vector<Block<T>>&);

TRF_INSTANTIATE_OPS(float)
TRF_INSTANTIATE_OPS(double)

#undef TRF_INSTANTIATE_OPS

}  // namespace trf
