#include "glam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "glam/error.hpp"

namespace glam {
namespace {

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<Scalar>>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMajorMatrix<Scalar>>;

template <typename Scalar>
ConstMatrixMap<Scalar> as_matrix(std::span<const Scalar> data, std::size_t rows,
                                 std::size_t cols) {
  return ConstMatrixMap<Scalar>(data.data(), static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(cols));
}

template <typename Scalar>
MatrixMap<Scalar> as_matrix(std::span<Scalar> data, std::size_t rows, std::size_t cols) {
  return MatrixMap<Scalar>(data.data(), static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(cols));
}

template <typename Scalar>
Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> plane_of(std::span<const Scalar> data, std::size_t offset,
                                                                   std::size_t length) {
  return {data.data() + offset, static_cast<Eigen::Index>(length)};
}

std::string pair_of(const Shape& a, const Shape& b) { return to_string(a) + " vs " + to_string(b); }

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     to_string(shape));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> elementwise_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                  BinaryKind kind) {
  const bool same = a.shape() == b.shape();
  const bool a_bcast = !same && a.size() == 1;
  const bool b_bcast = !same && b.size() == 1;
  if (!same && !a_bcast && !b_bcast) {
    throw ShapeError("elementwise operands differ: " + pair_of(a.shape(), b.shape()));
  }
  const Shape out_shape = a_bcast ? b.shape() : a.shape();
  const std::size_t n = element_count(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  Buffer<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar av = ad[a_bcast ? 0 : i];
    const Scalar bv = bd[b_bcast ? 0 : i];
    out[i] = kind == BinaryKind::add ? av + bv : av * bv;
  }
  return Tensor<Scalar>::record(
      out_shape, std::move(out), kind == BinaryKind::add ? "add" : "mul", {a, b},
      [a, b, kind, a_bcast, b_bcast](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto ad = a.data();
        const auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ia = a_bcast ? 0 : i;
          const std::size_t ib = b_bcast ? 0 : i;
          if (!grads[0].empty()) grads[0][ia] += kind == BinaryKind::add ? g[i] : g[i] * bd[ib];
          if (!grads[1].empty()) grads[1][ib] += kind == BinaryKind::add ? g[i] : g[i] * ad[ia];
        }
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  return Tensor<Scalar>::record(Shape{}, {total}, "sum", {x},
                                [](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
                                  for (Scalar& v : grads[0]) v += g[0];
                                });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul inner dimensions differ: " + pair_of(a.shape(), b.shape()));
  Buffer<Scalar> out(m * n);
  as_matrix(std::span<Scalar>(out), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  return Tensor<Scalar>::record(
      {m, n}, std::move(out), "matmul", {a, b},
      [a, b, m, k, n](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto G = as_matrix(g, m, n);
        if (!grads[0].empty())
          as_matrix(grads[0], m, k).noalias() += G * as_matrix(b.data(), k, n).transpose();
        if (!grads[1].empty())
          as_matrix(grads[1], k, n).noalias() += as_matrix(a.data(), m, k).transpose() * G;
      });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(w.shape(), 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) throw ShapeError("linear weight does not match input: " + pair_of(x.shape(), w.shape()));
  if (bias.shape() != Shape{out_dim}) {
    throw ShapeError("linear bias must be " + to_string(Shape{out_dim}) + ", got " + to_string(bias.shape()));
  }
  Buffer<Scalar> out(batch * out_dim);
  auto Y = as_matrix(std::span<Scalar>(out), batch, out_dim);
  Y.noalias() = as_matrix(x.data(), batch, in) * as_matrix(w.data(), in, out_dim);
  Y.rowwise() += as_matrix(bias.data(), 1, out_dim).row(0);
  return Tensor<Scalar>::record(
      {batch, out_dim}, std::move(out), "linear", {x, w, bias},
      [x, w, batch, in, out_dim](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto G = as_matrix(g, batch, out_dim);
        if (!grads[0].empty())
          as_matrix(grads[0], batch, in).noalias() += G * as_matrix(w.data(), in, out_dim).transpose();
        if (!grads[1].empty())
          as_matrix(grads[1], in, out_dim).noalias() += as_matrix(x.data(), batch, in).transpose() * G;
        if (!grads[2].empty()) as_matrix(grads[2], 1, out_dim) += G.colwise().sum();
      });
}

namespace {

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, kh, kw;
  std::size_t col_rows() const { return c_in * kh * kw; }
  std::size_t plane() const { return h * w; }
};

// col[(c*kh + i)*kw + j][y*W + x] = img[c][y + i - kh/2][x + j - kw/2], zero outside.
template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g, Scalar* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const Scalar* src = img + c * g.plane();
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Scalar* dst = col + ((c * g.kh + i) * g.kw + j) * g.plane();
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          Scalar* row = dst + y * W;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H || x0 >= x1) {
            std::fill(row, row + W, Scalar(0));
            continue;
          }
          std::fill(row, row + x0, Scalar(0));
          std::copy(src + sy * W + x0 + dx, src + sy * W + x1 + dx, row + x0);
          std::fill(row + x1, row + W, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* img) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c_in; ++c) {
    Scalar* dst = img + c * g.plane();
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Scalar* src = col + ((c * g.kh + i) * g.kw + j) * g.plane();
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          Scalar* out = dst + sy * W;
          const Scalar* row = src + y * W;
          for (std::ptrdiff_t x = x0; x < x1; ++x) out[x + dx] += row[x];
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d_same(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                           const Tensor<Scalar>& bias) {
  require_rank(x.shape(), 4, "conv2d_same input");
  require_rank(kernel.shape(), 4, "conv2d_same kernel");
  const ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3)};
  if (geo.kh % 2 == 0 || geo.kw % 2 == 0) {
    throw ConfigError("conv2d_same needs odd kernel sizes, got " + to_string(kernel.shape()));
  }
  if (kernel.dim(1) != geo.c_in) {
    throw ShapeError("conv2d_same channel mismatch: " + pair_of(x.shape(), kernel.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{geo.c_out}) {
    throw ShapeError("conv2d_same bias must be " + to_string(Shape{geo.c_out}) + ", got " +
                     to_string(bias.shape()));
  }

  const std::size_t col_size = geo.col_rows() * geo.plane();
  Buffer<Scalar> cols(geo.n * col_size);
  Buffer<Scalar> out(geo.n * geo.c_out * geo.plane());
  const auto K = as_matrix(kernel.data(), geo.c_out, geo.col_rows());
  for (std::size_t s = 0; s < geo.n; ++s) {
    Scalar* col = cols.data() + s * col_size;
    im2col(x.data().data() + s * geo.c_in * geo.plane(), geo, col);
    auto Y = as_matrix(std::span<Scalar>(out.data() + s * geo.c_out * geo.plane(), geo.c_out * geo.plane()),
                       geo.c_out, geo.plane());
    Y.noalias() = K * as_matrix(std::span<const Scalar>(col, col_size), geo.col_rows(), geo.plane());
    if (has_bias) Y.colwise() += as_matrix(bias.data(), geo.c_out, 1).col(0);
  }

  std::vector<Tensor<Scalar>> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return Tensor<Scalar>::record(
      {geo.n, geo.c_out, geo.h, geo.w}, std::move(out), "conv2d_same", std::move(inputs),
      [kernel, geo, col_size, has_bias, cols = std::move(cols)](std::span<const Scalar> g,
                                                                std::span<std::span<Scalar>> grads) {
        const auto K = as_matrix(kernel.data(), geo.c_out, geo.col_rows());
        Buffer<Scalar> dcol(grads[0].empty() ? 0 : col_size);
        for (std::size_t s = 0; s < geo.n; ++s) {
          const auto G = as_matrix(g.subspan(s * geo.c_out * geo.plane(), geo.c_out * geo.plane()),
                                   geo.c_out, geo.plane());
          const auto C = as_matrix(std::span<const Scalar>(cols.data() + s * col_size, col_size),
                                   geo.col_rows(), geo.plane());
          if (!grads[1].empty()) as_matrix(grads[1], geo.c_out, geo.col_rows()).noalias() += G * C.transpose();
          if (has_bias && !grads[2].empty()) as_matrix(grads[2], geo.c_out, 1) += G.rowwise().sum();
          if (!grads[0].empty()) {
            as_matrix(std::span<Scalar>(dcol), geo.col_rows(), geo.plane()).noalias() = K.transpose() * G;
            col2im_add(dcol.data(), geo, grads[0].data() + s * geo.c_in * geo.plane());
          }
        }
      });
}

template <typename Scalar>
BatchNormState<Scalar> BatchNormState<Scalar>::fresh(std::size_t channels) {
  BatchNormState state;
  state.running_mean = Tensor<Scalar>::zeros({channels});
  state.running_var = Tensor<Scalar>::full({channels}, Scalar(1));
  return state;
}

template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, BatchNormState<Scalar>& state, Mode mode) {
  require_rank(x.shape(), 4, "batchnorm2d input");
  const std::size_t n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("batchnorm2d affine parameters must be " + to_string(Shape{channels}) + ": got " +
                     pair_of(gamma.shape(), beta.shape()));
  }
  const std::size_t count = n * plane;
  if (mode == Mode::eval && !state.initialized()) {
    throw StateError("batchnorm2d in eval mode without running statistics");
  }
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batchnorm2d in train mode needs at least 2 values per channel, input " +
                     to_string(x.shape()));
  }
  if (state.initialized() && (state.running_mean.shape() != Shape{channels} ||
                              state.running_var.shape() != Shape{channels})) {
    throw ShapeError("batchnorm2d running statistics do not match " + std::to_string(channels) + " channels");
  }

  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  Buffer<Scalar> xhat(x.size());
  Buffer<Scalar> inv_std(channels);
  Buffer<Scalar> out(x.size());
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0, var = 0;
    if (mode == Mode::train) {
      // Per-plane sums vectorize in Scalar; planes are combined in double.
      for (std::size_t s = 0; s < n; ++s) mean += plane_of(xd, (s * channels + c) * plane, plane).sum();
      mean /= static_cast<double>(count);
      const Scalar mu = static_cast<Scalar>(mean);
      for (std::size_t s = 0; s < n; ++s) {
        var += (plane_of(xd, (s * channels + c) * plane, plane) - mu).square().sum();
      }
      var /= static_cast<double>(count);
      if (state.initialized()) {
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        rm[c] = static_cast<Scalar>((1.0 - state.momentum) * rm[c] + state.momentum * mean);
        rv[c] = static_cast<Scalar>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
      }
    } else {
      mean = state.running_mean.data()[c];
      var = state.running_var.data()[c];
    }
    const Scalar mu = static_cast<Scalar>(mean);
    const Scalar is = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
    inv_std[c] = is;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const Scalar h = (xd[base + i] - mu) * is;
        xhat[base + i] = h;
        out[base + i] = gd[c] * h + bd[c];
      }
    }
  }

  return Tensor<Scalar>::record(
      x.shape(), std::move(out), "batchnorm2d", {x, gamma, beta},
      [gamma, n, channels, plane, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto gd = gamma.data();
        const double count = static_cast<double>(n * plane);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels + c) * plane;
            const auto gp = plane_of(g, base, plane);
            sum_g += gp.sum();
            sum_gx += (gp * plane_of(std::span<const Scalar>(xhat), base, plane)).sum();
          }
          if (!grads[1].empty()) grads[1][c] += static_cast<Scalar>(sum_gx);
          if (!grads[2].empty()) grads[2][c] += static_cast<Scalar>(sum_g);
          if (grads[0].empty()) continue;
          const Scalar scale = gd[c] * inv_std[c];
          if (mode == Mode::eval) {
            for (std::size_t s = 0; s < n; ++s) {
              const std::size_t base = (s * channels + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) grads[0][base + i] += scale * g[base + i];
            }
            continue;
          }
          const Scalar mean_g = static_cast<Scalar>(sum_g / count);
          const Scalar mean_gx = static_cast<Scalar>(sum_gx / count);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              grads[0][base + i] += scale * (g[base + i] - mean_g - xhat[base + i] * mean_gx);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm needs at least one axis");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm affine parameters must be " + to_string(Shape{width}) + ": got " +
                     pair_of(gamma.shape(), beta.shape()));
  }
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  Buffer<Scalar> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* p = xd.data() + r * width;
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < width; ++i) mean += p[i];
    mean /= static_cast<double>(width);
    for (std::size_t i = 0; i < width; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(width);
    const Scalar is = static_cast<Scalar>(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    for (std::size_t i = 0; i < width; ++i) {
      const Scalar h = (p[i] - static_cast<Scalar>(mean)) * is;
      xhat[r * width + i] = h;
      out[r * width + i] = gd[i] * h + bd[i];
    }
  }
  return Tensor<Scalar>::record(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [gamma, rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto gd = gamma.data();
        Buffer<Scalar> dxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          double sum_d = 0, sum_dx = 0;
          for (std::size_t i = 0; i < width; ++i) {
            if (!grads[1].empty()) grads[1][i] += g[base + i] * xhat[base + i];
            if (!grads[2].empty()) grads[2][i] += g[base + i];
            dxhat[i] = g[base + i] * gd[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xhat[base + i];
          }
          if (grads[0].empty()) continue;
          const Scalar mean_d = static_cast<Scalar>(sum_d / static_cast<double>(width));
          const Scalar mean_dx = static_cast<Scalar>(sum_dx / static_cast<double>(width));
          for (std::size_t i = 0; i < width; ++i) {
            grads[0][base + i] += inv_std[r] * (dxhat[i] - mean_d - xhat[base + i] * mean_dx);
          }
        }
      });
}

namespace {

template <typename Scalar>
constexpr Scalar kGeluScale = static_cast<Scalar>(0.7978845608028654);  // sqrt(2 / pi)
template <typename Scalar>
constexpr Scalar kGeluCubic = static_cast<Scalar>(0.044715);

}  // namespace

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  const auto xd = x.data();
  Buffer<Scalar> out(x.size());
  if (kind == Activation::relu) {
    // NaN passes through so a bad input surfaces as a non-finite loss.
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] < Scalar(0) ? Scalar(0) : xd[i];
    return Tensor<Scalar>::record(x.shape(), std::move(out), "relu", {x},
                                  [x](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
                                    const auto xd = x.data();
                                    Scalar* dx = grads[0].data();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      dx[i] += xd[i] > Scalar(0) ? g[i] : Scalar(0);
                                  });
  }
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const auto v = plane_of(xd, 0, xd.size());
  Buffer<Scalar> tanh_buf(x.size());
  Eigen::Map<Array> t(tanh_buf.data(), static_cast<Eigen::Index>(x.size()));
  t = (kGeluScale<Scalar> * (v + kGeluCubic<Scalar> * v.cube())).tanh();
  Eigen::Map<Array>(out.data(), static_cast<Eigen::Index>(out.size())) = Scalar(0.5) * v * (Scalar(1) + t);
  return Tensor<Scalar>::record(
      x.shape(), std::move(out), "gelu", {x},
      [x, tanh_buf = std::move(tanh_buf)](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        const auto v = plane_of(x.data(), 0, x.size());
        const auto t = plane_of(std::span<const Scalar>(tanh_buf), 0, tanh_buf.size());
        const auto dt = kGeluScale<Scalar> * (Scalar(1) + Scalar(3) * kGeluCubic<Scalar> * v.square());
        Eigen::Map<Array>(grads[0].data(), static_cast<Eigen::Index>(grads[0].size())) +=
            plane_of(g, 0, g.size()) * (Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * v * (Scalar(1) - t.square()) * dt);
      });
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, std::size_t pool_h, std::size_t pool_w) {
  require_rank(x.shape(), 4, "maxpool2d input");
  if (pool_h == 0 || pool_w == 0) throw ShapeError("maxpool2d window must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < pool_h || W < pool_w) {
    throw ShapeError("maxpool2d window " + to_string(Shape{pool_h, pool_w}) + " exceeds input " +
                     to_string(x.shape()));
  }
  if (x.size() > UINT32_MAX) throw ShapeError("maxpool2d input too large: " + to_string(x.shape()));
  const std::size_t oh = H / pool_h, ow = W / pool_w;
  const auto xd = x.data();
  Buffer<Scalar> out(planes * oh * ow);
  Buffer<std::uint32_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * H * W + oy * pool_h * W + ox * pool_w;
        for (std::size_t i = 0; i < pool_h; ++i) {
          for (std::size_t j = 0; j < pool_w; ++j) {
            const std::size_t idx = p * H * W + (oy * pool_h + i) * W + ox * pool_w + j;
            if (xd[idx] > xd[best] || std::isnan(xd[idx])) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xd[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return Tensor<Scalar>::record(
      {x.dim(0), x.dim(1), oh, ow}, std::move(out), "maxpool2d", {x},
      [argmax = std::move(argmax)](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        for (std::size_t o = 0; o < g.size(); ++o) grads[0][argmax[o]] += g[o];
      });
}

namespace {

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisView {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisView view_around(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat along axis " + std::to_string(axis) + ": " + pair_of(first, s));
    out_shape[axis] += s[axis];
  }
  const AxisView ov = view_around(out_shape, axis);
  Buffer<Scalar> out(element_count(out_shape));
  std::vector<std::size_t> lengths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * ov.inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pd.data() + o * block, block, out.data() + o * ov.length * ov.inner + offset);
    }
    offset += block;
    lengths.push_back(p.dim(axis));
  }
  return Tensor<Scalar>::record(
      out_shape, std::move(out), "concat", std::vector<Tensor<Scalar>>(parts.begin(), parts.end()),
      [ov, lengths = std::move(lengths)](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < lengths.size(); ++k) {
          const std::size_t block = lengths[k] * ov.inner;
          if (!grads[k].empty()) {
            for (std::size_t o = 0; o < ov.outer; ++o) {
              const Scalar* src = g.data() + o * ov.length * ov.inner + offset;
              Scalar* dst = grads[k].data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += block;
        }
      });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, std::size_t axis, std::size_t begin, std::size_t length) {
  if (axis >= x.rank()) throw ShapeError("slice axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  if (length == 0 || begin + length > x.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") exceeds axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  const AxisView v = view_around(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t block = length * v.inner;
  const std::size_t skip = begin * v.inner;
  Buffer<Scalar> out(v.outer * block);
  const auto xd = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xd.data() + o * v.length * v.inner + skip, block, out.data() + o * block);
  }
  return Tensor<Scalar>::record(
      out_shape, std::move(out), "slice", {x},
      [v, block, skip](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
        for (std::size_t o = 0; o < v.outer; ++o) {
          Scalar* dst = grads[0].data() + o * v.length * v.inner + skip;
          const Scalar* src = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      });
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_half(const Tensor<Scalar>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("split_half axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  if (x.dim(axis) % 2 != 0) {
    throw ShapeError("split_half needs an even axis, got " + to_string(x.shape()) + " axis " + std::to_string(axis));
  }
  const std::size_t half = x.dim(axis) / 2;
  return {slice(x, axis, 0, half), slice(x, axis, half, half)};
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape changes element count: " + pair_of(x.shape(), shape));
  }
  const auto xd = x.data();
  return Tensor<Scalar>::record(std::move(shape), Buffer<Scalar>(xd.begin(), xd.end()), "reshape", {x},
                                [](std::span<const Scalar> g, std::span<std::span<Scalar>> grads) {
                                  for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                                });
}

namespace {

// Row-wise log-sum-exp with max subtraction, plus the softmax it implies.
template <typename Scalar>
void softmax_rows(std::span<const Scalar> logits, std::size_t rows, std::size_t k,
                  std::vector<double>& lse, Buffer<Scalar>& probs) {
  lse.assign(rows, 0.0);
  probs.assign(rows * k, Scalar(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* l = logits.data() + r * k;
    const double m = *std::max_element(l, l + k);
    double total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(l[j] - m);
    lse[r] = m + std::log(total);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = static_cast<Scalar>(std::exp(l[j] - m) / total);
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target_probs) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  if (target_probs.shape() != logits.shape()) {
    throw ShapeError("softmax_cross_entropy targets do not match logits: " +
                     pair_of(logits.shape(), target_probs.shape()));
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  const auto td = target_probs.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = td[r * k + j];
      if (!(t >= 0.0)) throw ValidationError("target row " + std::to_string(r) + " has a negative or NaN entry");
      total += t;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("target row " + std::to_string(r) + " sums to " + std::to_string(total) + ", not 1");
    }
  }
  std::vector<double> lse;
  Buffer<Scalar> probs;
  softmax_rows(logits.data(), rows, k, lse, probs);
  const auto ld = logits.data();
  double loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double t = td[r * k + j];
      if (t != 0.0) loss += t * (lse[r] - ld[r * k + j]);
    }
  }
  loss /= static_cast<double>(rows);
  return Tensor<Scalar>::record(
      Shape{}, {static_cast<Scalar>(loss)}, "softmax_cross_entropy", {logits, target_probs},
      [target_probs, rows, probs = std::move(probs)](std::span<const Scalar> g,
                                                     std::span<std::span<Scalar>> grads) {
        const auto td = target_probs.data();
        const Scalar scale = g[0] / static_cast<Scalar>(rows);
        if (!grads[0].empty()) {
          for (std::size_t i = 0; i < probs.size(); ++i) grads[0][i] += scale * (probs[i] - td[i]);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  require_rank(logits.shape(), 2, "softmax");
  std::vector<double> lse;
  Buffer<Scalar> probs;
  softmax_rows(logits.data(), logits.dim(0), logits.dim(1), lse, probs);
  return Tensor<Scalar>(logits.shape(), std::move(probs));
}

#define GLAM_INSTANTIATE_OPS(S)                                                                    \
  template Tensor<S> elementwise_binary(const Tensor<S>&, const Tensor<S>&, BinaryKind);          \
  template Tensor<S> sum(const Tensor<S>&);                                                        \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> conv2d_same(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);            \
  template struct BatchNormState<S>;                                                               \
  template Tensor<S> batchnorm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,             \
                                 BatchNormState<S>&, Mode);                                        \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);     \
  template Tensor<S> activation(const Tensor<S>&, Activation);                                     \
  template Tensor<S> maxpool2d(const Tensor<S>&, std::size_t, std::size_t);                        \
  template Tensor<S> concat(std::span<const Tensor<S>>, std::size_t);                              \
  template Tensor<S> slice(const Tensor<S>&, std::size_t, std::size_t, std::size_t);               \
  template std::pair<Tensor<S>, Tensor<S>> split_half(const Tensor<S>&, std::size_t);              \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                             \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> softmax(const Tensor<S>&);

GLAM_INSTANTIATE_OPS(float)
GLAM_INSTANTIATE_OPS(double)

}  // namespace glam
