#include "mef/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

#include "mef/error.hpp"

namespace mef::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, pad, stride, h_out, w_out;

  std::size_t rows() const { return c_in * k * k; }
  std::size_t cols() const { return h_out * w_out; }
  // A 1x1 stride-1 convolution reads the input plane directly.
  bool direct() const { return k == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t pad,
                           std::size_t stride) {
  if (input.size() != 3) throw InvalidArgument("conv2d: input must be [C,H,W], got " + shape_string(input));
  if (kernel.size() != 4) {
    throw InvalidArgument("conv2d: kernel must be [C_out,C_in,k,k], got " + shape_string(kernel));
  }
  if (kernel[1] != input[0]) {
    throw InvalidArgument("conv2d: kernel " + shape_string(kernel) + " does not accept input " +
                          shape_string(input));
  }
  if (kernel[2] != kernel[3]) throw InvalidArgument("conv2d: kernel must be square, got " + shape_string(kernel));
  const std::size_t k = kernel[2];
  if (k % 2 == 0) throw InvalidArgument("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (pad != (k - 1) / 2) {
    throw InvalidArgument("conv2d: pad must be (k-1)/2 = " + std::to_string((k - 1) / 2) + ", got " +
                          std::to_string(pad));
  }
  if (stride == 0) throw InvalidArgument("conv2d: stride must be >= 1");
  if (input[1] + 2 * pad < k || input[2] + 2 * pad < k) {
    throw InvalidArgument("conv2d: input " + shape_string(input) + " smaller than kernel");
  }
  ConvGeometry g{input[0], input[1], input[2], kernel[0], k, pad, stride, 0, 0};
  g.h_out = (g.h + 2 * pad - k) / stride + 1;
  g.w_out = (g.w + 2 * pad - k) / stride + 1;
  return g;
}

// Output rows [y0, y1) of the column matrix:
// col[(ci*k+ky)*k+kx][(oy-y0)*w_out+ox] = input[ci][oy*s+ky-p][ox*s+kx-p] (0 outside).
void im2col(const Grid& input, const ConvGeometry& g, std::size_t y0, std::size_t y1, std::vector<double>& col) {
  const std::size_t n = (y1 - y0) * g.w_out;
  col.assign(g.rows() * n, 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = col.data() + ((ci * g.k + ky) * g.k + kx) * n;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = input.row(ci, static_cast<std::size_t>(iy));
          double* out = dst + (oy - y0) * g.w_out;
          if (g.stride == 1) {
            // Valid ox satisfy 0 <= ox + kx - pad < w.
            const auto shift = static_cast<std::ptrdiff_t>(kx) - pad;
            const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -shift));
            const auto hi = static_cast<std::size_t>(
                std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w) - shift, 0,
                                           static_cast<std::ptrdiff_t>(g.w_out)));
            if (lo < hi) std::copy(src + lo + shift, src + hi + shift, out + lo);
            continue;
          }
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) out[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, const ConvGeometry& g, std::size_t y0, std::size_t y1,
                Grid& grad_input) {
  const std::size_t n = (y1 - y0) * g.w_out;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col.data() + ((ci * g.k + ky) * g.k + kx) * n;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = grad_input.row(ci, static_cast<std::size_t>(iy));
          const double* in = src + (oy - y0) * g.w_out;
          if (g.stride == 1) {
            const auto shift = static_cast<std::ptrdiff_t>(kx) - pad;
            const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -shift));
            const auto hi = static_cast<std::size_t>(
                std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w) - shift, 0,
                                           static_cast<std::ptrdiff_t>(g.w_out)));
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox + shift] += in[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Output rows per im2col band, keeping the column buffer near 256 KiB.
std::size_t band_rows(const ConvGeometry& g) {
  const std::size_t per_row = std::max<std::size_t>(1, g.rows() * g.w_out);
  return std::clamp<std::size_t>((32 * 1024) / per_row, 1, g.h_out);
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

template <typename F>
Grid map_unary(const Grid& a, F f) {
  std::vector<double> out;
  out.reserve(a.size());
  std::transform(a.vec().begin(), a.vec().end(), std::back_inserter(out), f);
  return Grid(a.shape(), std::move(out));
}

template <typename F>
Grid map_binary(const Grid& a, const Grid& b, F f, const char* what) {
  if (a.shape() == b.shape()) {
    std::vector<double> out;
    out.reserve(a.size());
    std::transform(a.vec().begin(), a.vec().end(), b.vec().begin(), std::back_inserter(out), f);
    return Grid(a.shape(), std::move(out));
  }
  if (!is_channel_broadcast(a, b)) {
    throw InvalidArgument(std::string(what) + ": incompatible shapes " + shape_string(a.shape()) +
                          " and " + shape_string(b.shape()));
  }
  Grid out(a.shape());
  const std::size_t plane = a.height() * a.width();
  for (std::size_t c = 0; c < a.channels(); ++c) {
    const double bc = b[c];
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) out[i] = f(a[i], bc);
  }
  return out;
}

}  // namespace

Grid conv2d(const Grid& input, const Grid& kernel, std::size_t pad, std::size_t stride) {
  const auto g = conv_geometry(input.shape(), kernel.shape(), pad, stride);
  Grid out({g.c_out, g.h_out, g.w_out});
  ConstMapMat w(kernel.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows()));
  MapMat y(out.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.cols()));
  if (g.direct()) {
    y.noalias() = w * ConstMapMat(input.vec().data(), static_cast<Eigen::Index>(g.rows()),
                                  static_cast<Eigen::Index>(g.cols()));
    return out;
  }
  std::vector<double> col;
  const std::size_t band = band_rows(g);
  for (std::size_t y0 = 0; y0 < g.h_out; y0 += band) {
    const std::size_t y1 = std::min(g.h_out, y0 + band);
    const std::size_t n = (y1 - y0) * g.w_out;
    im2col(input, g, y0, y1, col);
    y.middleCols(idx(y0 * g.w_out), idx(n)).noalias() = w * ConstMapMat(col.data(), idx(g.rows()), idx(n));
  }
  return out;
}

Grid conv2d_input_grad(const Grid& grad_out, const Grid& kernel, const Shape& input_shape,
                       std::size_t pad, std::size_t stride) {
  const auto g = conv_geometry(input_shape, kernel.shape(), pad, stride);
  if (grad_out.shape() != Shape{g.c_out, g.h_out, g.w_out}) {
    throw InvalidArgument("conv2d_input_grad: gradient shape " + shape_string(grad_out.shape()));
  }
  ConstMapMat w(kernel.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows()));
  ConstMapMat gy(grad_out.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.cols()));
  Grid grad_in(input_shape);
  if (g.direct()) {
    MapMat(grad_in.vec().data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()))
        .noalias() = w.transpose() * gy;
    return grad_in;
  }
  std::vector<double> col;
  const std::size_t band = band_rows(g);
  for (std::size_t y0 = 0; y0 < g.h_out; y0 += band) {
    const std::size_t y1 = std::min(g.h_out, y0 + band);
    const std::size_t n = (y1 - y0) * g.w_out;
    col.resize(g.rows() * n);
    MapMat(col.data(), idx(g.rows()), idx(n)).noalias() = w.transpose() * gy.middleCols(idx(y0 * g.w_out), idx(n));
    col2im_add(col, g, y0, y1, grad_in);
  }
  return grad_in;
}

Grid conv2d_kernel_grad(const Grid& grad_out, const Grid& input, const Shape& kernel_shape,
                        std::size_t pad, std::size_t stride) {
  const auto g = conv_geometry(input.shape(), kernel_shape, pad, stride);
  if (grad_out.shape() != Shape{g.c_out, g.h_out, g.w_out}) {
    throw InvalidArgument("conv2d_kernel_grad: gradient shape " + shape_string(grad_out.shape()));
  }
  ConstMapMat gy(grad_out.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.cols()));
  Grid grad_k(kernel_shape);
  MapMat gk(grad_k.vec().data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows()));
  if (g.direct()) {
    gk.noalias() = gy * ConstMapMat(input.vec().data(), static_cast<Eigen::Index>(g.rows()),
                                    static_cast<Eigen::Index>(g.cols()))
                            .transpose();
    return grad_k;
  }
  std::vector<double> col;
  const std::size_t band = band_rows(g);
  for (std::size_t y0 = 0; y0 < g.h_out; y0 += band) {
    const std::size_t y1 = std::min(g.h_out, y0 + band);
    const std::size_t n = (y1 - y0) * g.w_out;
    im2col(input, g, y0, y1, col);
    gk.noalias() += gy.middleCols(idx(y0 * g.w_out), idx(n)) * ConstMapMat(col.data(), idx(g.rows()), idx(n)).transpose();
  }
  return grad_k;
}

Grid pool_avg2(const Grid& input) {
  require_rank(input, 3, "pool_avg2");
  const std::size_t h = input.height(), w = input.width();
  if (h % 2 != 0 || w % 2 != 0) {
    throw InvalidArgument("pool_avg2: extents must be even, got " + shape_string(input.shape()));
  }
  Grid out({input.channels(), h / 2, w / 2});
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      const double* r0 = input.row(c, 2 * y);
      const double* r1 = input.row(c, 2 * y + 1);
      double* dst = out.row(c, y);
      for (std::size_t x = 0; x < w / 2; ++x) {
        dst[x] = 0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
      }
    }
  }
  return out;
}

Grid pool_avg2_grad(const Grid& grad_out) {
  require_rank(grad_out, 3, "pool_avg2_grad");
  Grid out({grad_out.channels(), grad_out.height() * 2, grad_out.width() * 2});
  for (std::size_t c = 0; c < out.channels(); ++c) {
    for (std::size_t y = 0; y < out.height(); ++y) {
      const double* src = grad_out.row(c, y / 2);
      double* dst = out.row(c, y);
      for (std::size_t x = 0; x < out.width(); ++x) dst[x] = 0.25 * src[x / 2];
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double t;  // weight of i1
};

// Align-corners-false source positions for one axis.
std::vector<Tap> bilinear_taps(std::size_t n_in, std::size_t factor) {
  std::vector<Tap> taps(n_in * factor);
  for (std::size_t i = 0; i < taps.size(); ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Grid upsample(const Grid& input, std::size_t factor, Upsample mode) {
  require_rank(input, 3, "upsample");
  if (factor == 0) throw InvalidArgument("upsample: factor must be >= 1");
  if (factor == 1) return input;
  const std::size_t h = input.height(), w = input.width();
  Grid out({input.channels(), h * factor, w * factor});
  if (mode == Upsample::nearest) {
    for (std::size_t c = 0; c < input.channels(); ++c) {
      for (std::size_t y = 0; y < out.height(); ++y) {
        const double* src = input.row(c, y / factor);
        double* dst = out.row(c, y);
        for (std::size_t x = 0; x < out.width(); ++x) dst[x] = src[x / factor];
      }
    }
    return out;
  }
  const auto ty = bilinear_taps(h, factor);
  const auto tx = bilinear_taps(w, factor);
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t y = 0; y < out.height(); ++y) {
      const double* r0 = input.row(c, ty[y].i0);
      const double* r1 = input.row(c, ty[y].i1);
      const double wy = ty[y].t;
      double* dst = out.row(c, y);
      for (std::size_t x = 0; x < out.width(); ++x) {
        const auto& t = tx[x];
        const double top = r0[t.i0] + t.t * (r0[t.i1] - r0[t.i0]);
        const double bottom = r1[t.i0] + t.t * (r1[t.i1] - r1[t.i0]);
        dst[x] = top + wy * (bottom - top);
      }
    }
  }
  return out;
}

Grid upsample_grad(const Grid& grad_out, std::size_t factor, Upsample mode) {
  require_rank(grad_out, 3, "upsample_grad");
  if (factor == 0) throw InvalidArgument("upsample_grad: factor must be >= 1");
  if (factor == 1) return grad_out;
  const std::size_t h = grad_out.height() / factor, w = grad_out.width() / factor;
  Grid out({grad_out.channels(), h, w});
  if (mode == Upsample::nearest) {
    for (std::size_t c = 0; c < out.channels(); ++c) {
      for (std::size_t y = 0; y < grad_out.height(); ++y) {
        const double* src = grad_out.row(c, y);
        double* dst = out.row(c, y / factor);
        for (std::size_t x = 0; x < grad_out.width(); ++x) dst[x / factor] += src[x];
      }
    }
    return out;
  }
  const auto ty = bilinear_taps(h, factor);
  const auto tx = bilinear_taps(w, factor);
  for (std::size_t c = 0; c < out.channels(); ++c) {
    for (std::size_t y = 0; y < grad_out.height(); ++y) {
      double* r0 = out.row(c, ty[y].i0);
      double* r1 = out.row(c, ty[y].i1);
      const double wy = ty[y].t;
      const double* src = grad_out.row(c, y);
      for (std::size_t x = 0; x < grad_out.width(); ++x) {
        const auto& t = tx[x];
        const double top = (1.0 - wy) * src[x];
        const double bottom = wy * src[x];
        r0[t.i0] += (1.0 - t.t) * top;
        r0[t.i1] += t.t * top;
        r1[t.i0] += (1.0 - t.t) * bottom;
        r1[t.i1] += t.t * bottom;
      }
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_channel_broadcast(const Grid& a, const Grid& b) {
  return a.rank() == 3 && b.rank() == 3 && b.channels() == a.channels() && b.height() == 1 &&
         b.width() == 1;
}

Grid add(const Grid& a, const Grid& b) {
  return map_binary(a, b, [](double x, double y) { return x + y; }, "add");
}

Grid mul(const Grid& a, const Grid& b) {
  return map_binary(a, b, [](double x, double y) { return x * y; }, "mul");
}

Grid reduce_to_channels(const Grid& grad, const Shape& channel_shape) {
  Grid out(channel_shape);
  const std::size_t plane = grad.height() * grad.width();
  for (std::size_t c = 0; c < grad.channels(); ++c) {
    double s = 0.0;
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) s += grad[i];
    out[c] = s;
  }
  return out;
}

Grid sigmoid(const Grid& a) {
  return map_unary(a, [](double x) { return sigmoid(x); });
}

Grid tanh(const Grid& a) {
  return map_unary(a, [](double x) { return std::tanh(x); });
}

Grid leaky_relu(const Grid& a, double alpha) {
  return map_unary(a, [alpha](double x) { return x > 0 ? x : alpha * x; });
}

}  // namespace mef::ops
