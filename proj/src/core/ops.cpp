#include "hanet/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "hanet/core/errors.hpp"

namespace hanet::core {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Gradient buffer of the i-th parent, or nullptr if it needs none.
Tensor* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Tensor& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, dil, pad_h, pad_w, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv: input has " + std::to_string(g.cin) + " channels, kernel expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != g.cout) throw ShapeError("conv: bias length does not match output channels");
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv: kernel extents must be odd");
  if (opts.stride == 0 || opts.dilation == 0) throw ShapeError("conv: stride and dilation must be positive");
  g.stride = opts.stride;
  g.dil = opts.dilation;
  g.pad_h = g.dil * (g.kh - 1) / 2;
  g.pad_w = g.dil * (g.kw - 1) / 2;
  g.ho = (g.h + 2 * g.pad_h - g.dil * (g.kh - 1) - 1) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad_w - g.dil * (g.kw - 1) - 1) / g.stride + 1;
  return g;
}

// Unfolds sample n of x into a patch x pixels matrix.
void im2col(const ConvGeometry& g, const double* x, RowMat& cols) {
  cols.setZero(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols.row(static_cast<Eigen::Index>((c * g.kh + ky) * g.kw + kx)).data();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky * g.dil) - static_cast<long>(g.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          double* dst = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx * g.dil) - static_cast<long>(g.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const RowMat& cols, double* gx) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = gx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols.row(static_cast<Eigen::Index>((c * g.kh + ky) * g.kw + kx)).data();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky * g.dil) - static_cast<long>(g.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx * g.dil) - static_cast<long>(g.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- convolution ---------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts) {
  const ConvGeometry g = conv_geometry(x.value(), weight.value(), bias.value(), opts);
  Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto pixels = static_cast<Eigen::Index>(g.pixels());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  ConstMapMat wmat(weight.value().data(), cout, patch);
  Eigen::Map<const Eigen::VectorXd> b(bias.value().data(), cout);

  auto cols = std::make_shared<std::vector<RowMat>>(g.n);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x.value().data() + n * g.cin * g.h * g.w, (*cols)[n]);
    MapMat o(out.data() + n * g.cout * g.pixels(), cout, pixels);
    o.noalias() = wmat * (*cols)[n];
    o.colwise() += b;
  }

  return make_result(std::move(out), {x, weight, bias}, [g, cols, patch, pixels, cout](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* gw = parent_grad(self, 1);
    Tensor* gb = parent_grad(self, 2);
    ConstMapMat wmat(parent_value(self, 1).data(), cout, patch);
    RowMat gcols;
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMapMat go(self.grad.data() + n * g.cout * g.pixels(), cout, pixels);
      if (gw) {
        MapMat gwm(gw->data(), cout, patch);
        gwm.noalias() += go * (*cols)[n].transpose();
      }
      if (gb) {
        Eigen::Map<Eigen::VectorXd> gbv(gb->data(), cout);
        gbv += go.rowwise().sum();
      }
      if (gx) {
        gcols.noalias() = wmat.transpose() * go;
        col2im(g, gcols, gx->data() + n * g.cin * g.h * g.w);
      }
    }
  });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x.value(), 3, "conv1d input");
  require_rank(weight.value(), 3, "conv1d weight");
  if (x.dim(2) == 0) throw ShapeError("conv1d: empty sequence");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  Var x4 = reshape(x, {xs[0], xs[1], 1, xs[2]});
  Var w4 = reshape(weight, {ws[0], ws[1], 1, ws[2]});
  Var y = conv2d(x4, w4, bias);
  return reshape(y, {xs[0], ws[0], xs[2]});
}

// ---- pooling and resampling ----------------------------------------------

Var pool_width(const Var& x, PoolMode mode) {
  require_rank(x.value(), 4, "pool_width input");
  const Shape& s = x.shape();
  const std::size_t rows = s[0] * s[1] * s[2];
  const std::size_t w = s[3];
  if (w == 0) throw ShapeError("pool_width: width must be at least 1");
  Tensor out(Shape{s[0], s[1], s[2], 1});
  const double* in = x.value().data();

  if (mode == PoolMode::Avg) {
    // Summed in sorted order: the mean is bitwise independent of column order.
    std::vector<double> row(w);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(in + r * w, w, row.begin());
      std::sort(row.begin(), row.end());
      double acc = 0.0;
      for (double v : row) acc += v;
      out[r] = acc / static_cast<double>(w);
    }
    return make_result(std::move(out), {x}, [rows, w](Node& self) {
      Tensor* gx = parent_grad(self, 0);
      const double inv = 1.0 / static_cast<double>(w);
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = self.grad[r] * inv;
        for (std::size_t i = 0; i < w; ++i) (*gx)[r * w + i] += g;
      }
    });
  }

  std::vector<std::size_t> argmax(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < w; ++i) {
      if (in[r * w + i] > in[r * w + best]) best = i;
    }
    argmax[r] = best;
    out[r] = in[r * w + best];
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax), w](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t r = 0; r < argmax.size(); ++r) (*gx)[r * w + argmax[r]] += self.grad[r];
  });
}

ResampleMap adaptive_average_map(std::size_t source, std::size_t target) {
  if (source == 0 || target == 0) throw ShapeError("resample: extents must be at least 1");
  ResampleMap map{source, {}};
  map.taps.resize(target);
  for (std::size_t j = 0; j < target; ++j) {
    const std::size_t begin = (j * source) / target;
    const std::size_t end = ((j + 1) * source + target - 1) / target;
    const double w = 1.0 / static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) map.taps[j].emplace_back(i, w);
  }
  return map;
}

ResampleMap linear_map(std::size_t source, std::size_t target) {
  if (source == 0 || target == 0) throw ShapeError("resample: extents must be at least 1");
  ResampleMap map{source, {}};
  map.taps.resize(target);
  const double ratio = static_cast<double>(source) / static_cast<double>(target);
  const double last = static_cast<double>(source - 1);
  for (std::size_t j = 0; j < target; ++j) {
    const double pos = std::clamp((static_cast<double>(j) + 0.5) * ratio - 0.5, 0.0, last);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const std::size_t i1 = std::min(i0 + 1, source - 1);
    const double frac = pos - static_cast<double>(i0);
    if (i1 == i0 || frac == 0.0) {
      map.taps[j].emplace_back(i0, 1.0);
    } else {
      map.taps[j].emplace_back(i0, 1.0 - frac);
      map.taps[j].emplace_back(i1, frac);
    }
  }
  return map;
}

ResampleMap height_map(std::size_t source, std::size_t target) {
  if (target < source) return adaptive_average_map(source, target);
  return linear_map(source, target);  // identity taps when target == source
}

Var resample_axis(const Var& x, std::size_t axis, const ResampleMap& map) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("resample: axis out of range");
  if (s[axis] != map.source) {
    throw ShapeError("resample: axis has extent " + std::to_string(s[axis]) + ", map expects " +
                     std::to_string(map.source));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_len = map.source;
  const std::size_t dst_len = map.taps.size();
  Shape out_shape = s;
  out_shape[axis] = dst_len;
  Tensor out(out_shape);
  const double* in = x.value().data();
  // Weights of each target sum to one, so the result is written as the first
  // tap plus weighted differences; constant inputs then map back exactly.
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < dst_len; ++j) {
      double* dst = out.data() + (o * dst_len + j) * inner;
      const auto& taps = map.taps[j];
      const double* anchor = in + (o * src_len + taps.front().first) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        double acc = 0.0;
        for (std::size_t t = 1; t < taps.size(); ++t) {
          acc += taps[t].second * (in[(o * src_len + taps[t].first) * inner + k] - anchor[k]);
        }
        dst[k] = anchor[k] + acc;
      }
    }
  }
  return make_result(std::move(out), {x}, [map, outer, inner](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    const std::size_t src_len = map.source;
    const std::size_t dst_len = map.taps.size();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < dst_len; ++j) {
        const double* g = self.grad.data() + (o * dst_len + j) * inner;
        for (const auto& [i, w] : map.taps[j]) {
          double* dst = gx->data() + (o * src_len + i) * inner;
          for (std::size_t k = 0; k < inner; ++k) dst[k] += w * g[k];
        }
      }
    }
  });
}

Var resample_height(const Var& x, std::size_t target) {
  if (x.value().rank() != 2 && x.value().rank() != 3) {
    throw ShapeError("resample_height expects C x H or N x C x H, got " + to_string(x.shape()));
  }
  const std::size_t axis = x.value().rank() - 1;
  if (x.dim(axis) == target) return make_result(x.value(), {x}, [](Node& self) {
      Tensor* gx = parent_grad(self, 0);
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    });
  return resample_axis(x, axis, height_map(x.dim(axis), target));
}

Var upsample_bilinear(const Var& x, std::size_t height, std::size_t width) {
  require_rank(x.value(), 4, "upsample_bilinear input");
  Var y = x.dim(2) == height ? x : resample_axis(x, 2, linear_map(x.dim(2), height));
  return y.dim(3) == width ? y : resample_axis(y, 3, linear_map(y.dim(3), width));
}

// ---- elementwise -----------------------------------------------------------

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    const Tensor& in = parent_value(self, 0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) (*gx)[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) {
    // Split by sign so exp never overflows.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    // Keep the open interval (0, 1) even where double rounding saturates.
    v = std::clamp(v, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2);
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double s = self.value[i];
      (*gx)[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = parent_value(self, 0);
    const Tensor& bv = parent_value(self, 1);
    if (Tensor* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += factor * self.grad[i];
  });
}

Var gate_rows(const Var& gate, const Var& x) {
  require_rank(gate.value(), 3, "gate_rows gate");
  require_rank(x.value(), 4, "gate_rows input");
  const Shape& gs = gate.shape();
  const Shape& xs = x.shape();
  if (gs[0] != xs[0] || gs[1] != xs[1] || gs[2] != xs[2]) {
    throw ShapeError("gate_rows: gate " + to_string(gs) + " does not match map " + to_string(xs));
  }
  const std::size_t rows = xs[0] * xs[1] * xs[2];
  const std::size_t w = xs[3];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double a = gate.value()[r];
    for (std::size_t i = 0; i < w; ++i) out[r * w + i] *= a;
  }
  return make_result(std::move(out), {gate, x}, [rows, w](Node& self) {
    const Tensor& gv = parent_value(self, 0);
    const Tensor& xv = parent_value(self, 1);
    Tensor* gg = parent_grad(self, 0);
    Tensor* gx = parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w; ++i) {
        const double g = self.grad[r * w + i];
        acc += g * xv[r * w + i];
        if (gx) (*gx)[r * w + i] += g * gv[r];
      }
      if (gg) (*gg)[r] += acc;
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Shape& first = parts.front().shape();
  if (first.size() != 4) throw ShapeError("concat_channels expects N x C x H x W maps");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: " + to_string(s) + " incompatible with " + to_string(first));
    }
    channels += s[1];
  }
  const std::size_t n = first[0];
  const std::size_t plane = first[2] * first[3];
  Tensor out(Shape{n, channels, first[2], first[3]});
  std::vector<std::size_t> sizes;
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = out.data() + b * channels * plane;
    for (const auto& p : parts) {
      const std::size_t chunk = p.dim(1) * plane;
      std::copy_n(p.value().data() + b * chunk, chunk, dst);
      dst += chunk;
    }
  }
  for (const auto& p : parts) sizes.push_back(p.dim(1) * plane);
  return make_result(std::move(out), parts, [sizes, n, channels, plane](Node& self) {
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = self.grad.data() + b * channels * plane;
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (Tensor* g = parent_grad(self, k)) {
          double* dst = g->data() + b * sizes[k];
          for (std::size_t i = 0; i < sizes[k]; ++i) dst[i] += src[i];
        }
        src += sizes[k];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

// ---- normalization and regularization -------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  require_rank(x.value(), 3, "batch_norm input");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c) {
    throw ShapeError("batch_norm: parameter length does not match " + std::to_string(c) + " channels");
  }
  const std::size_t m = n * l;
  const Tensor& in = x.value();
  Tensor out = Tensor::zeros_like(in);
  std::vector<double> mu(c), inv_std(c);

  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < l; ++i) s += in[(b * c + ch) * l + i];
      const double mean_v = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < l; ++i) {
          const double d = in[(b * c + ch) * l + i] - mean_v;
          v += d * d;
        }
      const double var_b = v / static_cast<double>(m);
      mu[ch] = mean_v;
      inv_std[ch] = 1.0 / std::sqrt(var_b + state.eps);
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var_b;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean_v;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  Tensor xhat = Tensor::zeros_like(in);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < l; ++i) {
        const std::size_t k = (b * c + ch) * l + i;
        xhat[k] = (in[k] - mu[ch]) * inv_std[ch];
        out[k] = gamma.value()[ch] * xhat[k] + beta.value()[ch];
      }

  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, n, c, l, m, train = mode == Mode::Train](Node& self) {
                       Tensor* gx = parent_grad(self, 0);
                       Tensor* gg = parent_grad(self, 1);
                       Tensor* gb = parent_grad(self, 2);
                       const Tensor& gamma_v = parent_value(self, 1);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < l; ++i) {
                             const std::size_t k = (b * c + ch) * l + i;
                             sum_g += self.grad[k];
                             sum_gx += self.grad[k] * xhat[k];
                           }
                         if (gg) (*gg)[ch] += sum_gx;
                         if (gb) (*gb)[ch] += sum_g;
                         if (!gx) continue;
                         const double scale_v = gamma_v[ch] * inv_std[ch];
                         const double md = static_cast<double>(m);
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < l; ++i) {
                             const std::size_t k = (b * c + ch) * l + i;
                             if (train) {
                               (*gx)[k] += scale_v * (self.grad[k] - sum_g / md - xhat[k] * sum_gx / md);
                             } else {
                               (*gx)[k] += scale_v * self.grad[k];
                             }
                           }
                       }
                     });
}

Var dropout(const Var& x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (auto& v : mask) v = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) (*gx)[i] += mask[i] * self.grad[i];
  });
}

// ---- losses ----------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels) {
  require_rank(logits.value(), 4, "softmax_cross_entropy logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * plane) throw ShapeError("softmax_cross_entropy: label count does not match logits");
  const Tensor& z = logits.value();
  Tensor probs = Tensor::zeros_like(z);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t label = labels[b * plane + p];
      auto idx = [&](std::size_t cls) { return (b * k + cls) * plane + p; };
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t cls = 0; cls < k; ++cls) zmax = std::max(zmax, z[idx(cls)]);
      double denom = 0.0;
      for (std::size_t cls = 0; cls < k; ++cls) {
        probs[idx(cls)] = std::exp(z[idx(cls)] - zmax);
        denom += probs[idx(cls)];
      }
      for (std::size_t cls = 0; cls < k; ++cls) probs[idx(cls)] /= denom;
      if (label == kIgnoreLabel) continue;
      if (label >= k) throw DataError("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
      loss -= z[idx(label)] - zmax - std::log(denom);
      ++count;
    }
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  std::vector<std::uint8_t> kept(labels.begin(), labels.end());
  return make_result(Tensor(Shape{1}, loss * inv), {logits},
                     [probs = std::move(probs), kept = std::move(kept), n, k, plane, inv](Node& self) {
                       Tensor* gz = parent_grad(self, 0);
                       const double g = self.grad[0] * inv;
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t p = 0; p < plane; ++p) {
                           const std::uint8_t label = kept[b * plane + p];
                           if (label == kIgnoreLabel) continue;
                           for (std::size_t cls = 0; cls < k; ++cls) {
                             const std::size_t i = (b * k + cls) * plane + p;
                             (*gz)[i] += g * (probs[i] - (cls == label ? 1.0 : 0.0));
                           }
                         }
                     });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Tensor(Shape{1}, s), {x}, [](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_square_error(const Var& x, const Tensor& target) {
  require_same_shape(x.value(), target, "mean_square_error");
  const std::size_t count = target.size();
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = x.value()[i] - target[i];
    s += d * d;
  }
  return make_result(Tensor(Shape{1}, s / static_cast<double>(count)), {x}, [target, count](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    const Tensor& xv = parent_value(self, 0);
    const double g = 2.0 * self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) (*gx)[i] += g * (xv[i] - target[i]);
  });
}

}  // namespace hanet::core
