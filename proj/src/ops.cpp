#include "mdg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace mdg::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Impl = std::shared_ptr<detail::TensorImpl>;

enum class Broadcast { Same, Batch };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.ndim() == b.ndim() + 1 && std::equal(b.shape().begin(), b.shape().end(), a.shape().begin() + 1)) {
    return Broadcast::Batch;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  check_binary(op, a, b);
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i], y[i % nb]);
  Impl ai = a.impl(), bi = b.impl();
  return make_result(op, a.shape(), std::move(out), {a, b},
                     [ai, bi, da, db](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& xa = ai->data;
                       const auto& xb = bi->data;
                       const std::size_t nb = xb.size();
                       if (gi[0]) {
                         auto& ga = *gi[0];
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(xa[i], xb[i % nb]);
                       }
                       if (gi[1]) {
                         auto& gb = *gi[1];
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * db(xa[i], xb[i % nb]);
                       }
                     });
}

// Elementwise unary op whose derivative is expressed through input and output.
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  Impl xi = x.impl();
  std::vector<double> saved = out;
  return make_result(op, x.shape(), std::move(out), {x},
                     [xi, saved = std::move(saved), deriv](std::span<const double> g,
                                                           std::span<std::vector<double>*> gi) {
                       auto& gx = *gi[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->data[i], saved[i]);
                     });
}

struct ConvGeom {
  std::size_t channels, height, width, k, stride, pad, out_h, out_w;
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* img) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_bias(const char* op, const Tensor* bias, std::size_t channels) {
  if (bias && (bias->ndim() != 1 || bias->dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(channels) + "], got " +
                     shape_str(bias->shape()));
  }
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("convolution stride must be positive");
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary(
      "leaky_relu", x, [alpha](double v) { return v > 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  const auto d = x.data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  return make_result("sum", {1}, {s}, {x}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (auto& v : *gi[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto d = x.data();
  const double n = static_cast<double>(d.size());
  const double s = std::accumulate(d.begin(), d.end(), 0.0) / n;
  return make_result("mean", {1}, {s}, {x}, [n](std::span<const double> g, std::span<std::vector<double>*> gi) {
    for (auto& v : *gi[0]) v += g[0] / n;
  });
}

Tensor l1_norm(const Tensor& x) {
  const auto d = x.data();
  double s = 0.0;
  for (double v : d) s += std::abs(v);
  Impl xi = x.impl();
  return make_result("l1_norm", {1}, {s}, {x}, [xi](std::span<const double> g, std::span<std::vector<double>*> gi) {
    auto& gx = *gi[0];
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xi->data[i];
      gx[i] += g[0] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       auto& gx = *gi[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor flatten(const Tensor& x) {
  const std::size_t n = x.dim(0);
  return reshape(x, {n, x.numel() / n});
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: mismatched shape " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  shape[0] = rows;
  return make_result("concat", shape, std::move(out), parts,
                     [sizes](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < sizes.size(); ++p) {
                         if (gi[p]) {
                           for (std::size_t i = 0; i < sizes[p]; ++i) (*gi[p])[i] += g[off + i];
                         }
                         off += sizes[p];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m);
  MapMat(out.data(), n, m).noalias() = CMapMat(a.data().data(), n, k) * CMapMat(b.data().data(), k, m);
  Impl ai = a.impl(), bi = b.impl();
  return make_result("matmul", {n, m}, std::move(out), {a, b},
                     [ai, bi, n, k, m](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       CMapMat gm(g.data(), n, m);
                       if (gi[0]) MapMat(gi[0]->data(), n, k).noalias() += gm * CMapMat(bi->data.data(), k, m).transpose();
                       if (gi[1]) MapMat(gi[1]->data(), k, m).noalias() += CMapMat(ai->data.data(), n, k).transpose() * gm;
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, Conv2dOptions opt) {
  if (x.ndim() != 4 || weight.ndim() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: incompatible input " + shape_str(x.shape()) + " and kernel " +
                     shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  check_bias("conv2d", bias, o);
  const ConvGeom geom{c, h, w, k, opt.stride, opt.pad, conv_out_size(h, k, opt.stride, opt.pad),
                      conv_out_size(w, k, opt.stride, opt.pad)};
  if (geom.out_h == 0 || geom.out_w == 0) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " + std::to_string(k));
  }
  const std::size_t ckk = c * k * k, hw = geom.out_h * geom.out_w;
  std::vector<double> out(n * o * hw);
  std::vector<double> cols(ckk * hw);
  CMapMat wm(weight.data().data(), o, ckk);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data().data() + s * c * h * w, geom, cols.data());
    MapMat ys(out.data() + s * o * hw, o, hw);
    ys.noalias() = wm * CMapMat(cols.data(), ckk, hw);
    if (bias) {
      for (std::size_t oc = 0; oc < o; ++oc) ys.row(oc).array() += (*bias)[oc];
    }
  }
  Impl xi = x.impl(), wi = weight.impl();
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result("conv2d", {n, o, geom.out_h, geom.out_w}, std::move(out), inputs,
                     [xi, wi, geom, n, o, ckk, hw](std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const std::size_t in_size = geom.channels * geom.height * geom.width;
                       std::vector<double> cols(ckk * hw);
                       CMapMat wm(wi->data.data(), o, ckk);
                       for (std::size_t s = 0; s < n; ++s) {
                         CMapMat gs(g.data() + s * o * hw, o, hw);
                         if (gi[1]) {
                           im2col(xi->data.data() + s * in_size, geom, cols.data());
                           MapMat(gi[1]->data(), o, ckk).noalias() += gs * CMapMat(cols.data(), ckk, hw).transpose();
                         }
                         if (gi[0]) {
                           MapMat(cols.data(), ckk, hw).noalias() = wm.transpose() * gs;
                           col2im(cols.data(), geom, gi[0]->data() + s * in_size);
                         }
                         if (gi.size() > 2 && gi[2]) {
                           // Plain loop: Eigen's vectorized sum peels by buffer alignment,
                           // which would make results vary from run to run.
                           const double* gp = g.data() + s * o * hw;
                           for (std::size_t oc = 0; oc < o; ++oc) {
                             double acc = 0.0;
                             for (std::size_t p = 0; p < hw; ++p) acc += gp[oc * hw + p];
                             (*gi[2])[oc] += acc;
                           }
                         }
                       }
                     });
}

Tensor conv2d_transposed(const Tensor& x, const Tensor& weight, const Tensor* bias, Conv2dOptions opt) {
  if (x.ndim() != 4 || weight.ndim() != 4 || weight.dim(0) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d_transposed: incompatible input " + shape_str(x.shape()) + " and kernel " +
                     shape_str(weight.shape()));
  }
  if (opt.stride == 0) throw ShapeError("conv2d_transposed: stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(1), k = weight.dim(2);
  check_bias("conv2d_transposed", bias, o);
  if ((h - 1) * opt.stride + k <= 2 * opt.pad || (w - 1) * opt.stride + k <= 2 * opt.pad) {
    throw ShapeError("conv2d_transposed: padding consumes the whole output");
  }
  const std::size_t out_h = (h - 1) * opt.stride + k - 2 * opt.pad;
  const std::size_t out_w = (w - 1) * opt.stride + k - 2 * opt.pad;
  // The output plays the role of the image of an ordinary convolution whose columns are x.
  const ConvGeom geom{o, out_h, out_w, k, opt.stride, opt.pad, h, w};
  const std::size_t okk = o * k * k, hw = h * w, out_size = o * out_h * out_w;
  std::vector<double> out(n * out_size, 0.0);
  std::vector<double> cols(okk * hw);
  CMapMat wm(weight.data().data(), c, okk);
  for (std::size_t s = 0; s < n; ++s) {
    MapMat(cols.data(), okk, hw).noalias() = wm.transpose() * CMapMat(x.data().data() + s * c * hw, c, hw);
    double* dst = out.data() + s * out_size;
    col2im(cols.data(), geom, dst);
    if (bias) {
      for (std::size_t oc = 0; oc < o; ++oc) {
        const double b = (*bias)[oc];
        for (std::size_t i = 0; i < out_h * out_w; ++i) dst[oc * out_h * out_w + i] += b;
      }
    }
  }
  Impl xi = x.impl(), wi = weight.impl();
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result(
      "conv2d_transposed", {n, o, out_h, out_w}, std::move(out), inputs,
      [xi, wi, geom, n, c, o, okk, hw, out_size](std::span<const double> g, std::span<std::vector<double>*> gi) {
        std::vector<double> cols(okk * hw);
        CMapMat wm(wi->data.data(), c, okk);
        const std::size_t plane = geom.height * geom.width;
        for (std::size_t s = 0; s < n; ++s) {
          const double* gs = g.data() + s * out_size;
          im2col(gs, geom, cols.data());
          CMapMat gc(cols.data(), okk, hw);
          if (gi[0]) MapMat(gi[0]->data() + s * c * hw, c, hw).noalias() += wm * gc;
          if (gi[1]) {
            MapMat(gi[1]->data(), c, okk).noalias() += CMapMat(xi->data.data() + s * c * hw, c, hw) * gc.transpose();
          }
          if (gi.size() > 2 && gi[2]) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += gs[oc * plane + i];
              (*gi[2])[oc] += acc;
            }
          }
        }
      });
}

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() != 4) throw ShapeError("instance_norm: expected N×C×H×W, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw ShapeError("instance_norm: gain/bias must have shape [" + std::to_string(c) + "]");
  }
  std::vector<double> xhat(x.numel()), inv_std(n * c), out(x.numel());
  const auto in = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * m;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += in[base + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (in[base + i] - mu) * (in[base + i] - mu);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[s * c + ch] = is;
      for (std::size_t i = 0; i < m; ++i) {
        xhat[base + i] = (in[base + i] - mu) * is;
        out[base + i] = gain[ch] * xhat[base + i] + bias[ch];
      }
    }
  }
  Impl gi_impl = gain.impl();
  return make_result("instance_norm", x.shape(), std::move(out), {x, gain, bias},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), gi_impl, n, c, m](
                         std::span<const double> g, std::span<std::vector<double>*> gi) {
                       const auto& gamma = gi_impl->data;
                       const double md = static_cast<double>(m);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t base = (s * c + ch) * m;
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (std::size_t i = 0; i < m; ++i) {
                             sum_g += g[base + i];
                             sum_gx += g[base + i] * xhat[base + i];
                           }
                           if (gi[1]) (*gi[1])[ch] += sum_gx;
                           if (gi[2]) (*gi[2])[ch] += sum_g;
                           if (gi[0]) {
                             const double k = gamma[ch] * inv_std[s * c + ch] / md;
                             auto& gx = *gi[0];
                             for (std::size_t i = 0; i < m; ++i) {
                               gx[base + i] += k * (md * g[base + i] - sum_g - xhat[base + i] * sum_gx);
                             }
                           }
                         }
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be N×K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  const auto z = logits.data();
  std::vector<double> prob(n * k);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(lab[i]) + " outside [0, " +
                              std::to_string(k) + ")");
    }
    const double* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(row[j] - mx) / denom;
    loss += mx + std::log(denom) - row[lab[i]];
  }
  loss /= static_cast<double>(n);
  return make_result("softmax_cross_entropy", {1}, {loss}, {logits},
                     [prob = std::move(prob), lab = std::move(lab), n, k](std::span<const double> g,
                                                                          std::span<std::vector<double>*> gi) {
                       auto& gz = *gi[0];
                       const double f = g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double t = (static_cast<int>(j) == lab[i]) ? 1.0 : 0.0;
                           gz[i * k + j] += f * (prob[i * k + j] - t);
                         }
                       }
                     });
}

}  // namespace mdg::ops
