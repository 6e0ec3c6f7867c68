#include "texhash/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace texhash {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Gradient buffer of input i, or nullptr when that input is a constant.
std::vector<double>* input_grad(detail::Node& n, std::size_t i) {
  auto& in = *n.inputs[i];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

const std::vector<double>& input_value(const detail::Node& n, std::size_t i) {
  return n.inputs[i]->value;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

// Unary elementwise op; dfdx(x, y) is the local derivative given input x and
// output y.
template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D dfdx) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, op, [dfdx](detail::Node& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    const auto& x = input_value(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * dfdx(x[i], n.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvGeom {
  std::size_t channels, height, width;  // of the image side
  std::size_t kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;  // of the column side

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + ih * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* x) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          double* dst = xc + ih * g.width;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_bias(const char* op, const Tensor& bias, std::size_t filters) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != filters)) {
    throw ShapeError(std::string(op) + ": bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(filters) + " filters");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& n) {
    if (auto* g = input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    }
    if (auto* g = input_grad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& n) {
    const auto& x = input_value(n, 0);
    const auto& y = input_value(n, 1);
    if (auto* g = input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * y[i];
    }
    if (auto* g = input_grad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result(Shape{1}, {s}, {a}, "sum", [](detail::Node& n) {
    if (auto* g = input_grad(n, 0)) {
      for (auto& v : *g) v += n.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const double count = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result(Shape{1}, {s / count}, {a}, "mean", [count](detail::Node& n) {
    if (auto* g = input_grad(n, 0)) {
      const double d = n.grad[0] / count;
      for (auto& v : *g) v += d;
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, "softplus",
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: rank-0 input");
  const std::size_t width = a.shape().back();
  const std::size_t rows = width == 0 ? 0 : a.numel() / width;
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * width;
    double* yr = out.data() + r * width;
    const double mx = *std::max_element(xr, xr + width);
    double z = 0.0;
    for (std::size_t i = 0; i < width; ++i) z += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < width; ++i) yr[i] /= z;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, "softmax", [rows, width](detail::Node& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.data() + r * width;
      const double* dy = n.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += dy[i] * y[i];
      for (std::size_t i = 0; i < width; ++i) (*g)[r * width + i] += y[i] * (dy[i] - dot);
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, "reshape", [](detail::Node& n) {
    if (auto* g = input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.numel());
  MatMap(out.data(), c, r) = ConstMatMap(a.data().data(), r, c).transpose();
  return Tensor::make_result(Shape{c, r}, std::move(out), {a}, "transpose", [r, c](detail::Node& n) {
    if (auto* g = input_grad(n, 0)) {
      MatMap(g->data(), r, c) += ConstMatMap(n.grad.data(), c, r).transpose();
    }
  });
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
  require_rank("channel_concat", a, 4);
  require_rank("channel_concat", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("channel_concat: incompatible " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  std::vector<double> out(batch * (ca + cb) * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(b.data().data() + n * cb * plane, cb * plane,
                out.data() + (n * (ca + cb) + ca) * plane);
  }
  return Tensor::make_result(
      Shape{batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b}, "channel_concat",
      [batch, ca, cb, plane](detail::Node& n) {
        const std::size_t stride = (ca + cb) * plane;
        if (auto* g = input_grad(n, 0)) {
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < ca * plane; ++i) (*g)[s * ca * plane + i] += n.grad[s * stride + i];
        }
        if (auto* g = input_grad(n, 1)) {
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < cb * plane; ++i)
              (*g)[s * cb * plane + i] += n.grad[s * stride + ca * plane + i];
        }
      });
}

Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("fully_connected", x, 2);
  require_rank("fully_connected", weight, 2);
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("fully_connected: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  check_bias("fully_connected", bias, out_dim);
  std::vector<double> out(batch * out_dim);
  MatMap y(out.data(), batch, out_dim);
  y.noalias() = ConstMatMap(x.data().data(), batch, in) *
                ConstMatMap(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < out_dim; ++o) out[n * out_dim + o] += bias.data()[o];
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{batch, out_dim}, std::move(out), std::move(inputs), "fully_connected",
      [batch, in, out_dim](detail::Node& n) {
        ConstMatMap dy(n.grad.data(), batch, out_dim);
        if (auto* g = input_grad(n, 0)) {
          MatMap(g->data(), batch, in).noalias() +=
              dy * ConstMatMap(input_value(n, 1).data(), out_dim, in);
        }
        if (auto* g = input_grad(n, 1)) {
          MatMap(g->data(), out_dim, in).noalias() +=
              dy.transpose() * ConstMatMap(input_value(n, 0).data(), batch, in);
        }
        if (n.inputs.size() > 2) {
          if (auto* g = input_grad(n, 2)) {
            for (std::size_t s = 0; s < batch; ++s)
              for (std::size_t o = 0; o < out_dim; ++o) (*g)[o] += n.grad[s * out_dim + o];
          }
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * p);
  MatMap(out.data(), m, p).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, p);
  return Tensor::make_result(Shape{m, p}, std::move(out), {a, b}, "matmul", [m, k, p](detail::Node& n) {
    ConstMatMap dc(n.grad.data(), m, p);
    if (auto* g = input_grad(n, 0)) {
      MatMap(g->data(), m, k).noalias() += dc * ConstMatMap(input_value(n, 1).data(), k, p).transpose();
    }
    if (auto* g = input_grad(n, 1)) {
      MatMap(g->data(), k, p).noalias() += ConstMatMap(input_value(n, 0).data(), m, k).transpose() * dc;
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (stride < 1 || padding < 0) {
    throw ShapeError("conv2d: invalid stride " + std::to_string(stride) + " / padding " +
                     std::to_string(padding));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t filters = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != channels) {
    throw ShapeError("conv2d: input has " + std::to_string(channels) + " channels " +
                     shape_str(x.shape()) + " but weight expects " + std::to_string(weight.dim(1)) +
                     " " + shape_str(weight.shape()));
  }
  const std::size_t p = static_cast<std::size_t>(padding), s = static_cast<std::size_t>(stride);
  if (kh > h + 2 * p || kw > w + 2 * p) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  check_bias("conv2d", bias, filters);
  const ConvGeom g{channels, h, w, kh, kw, s, p, (h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1};

  std::vector<double> out(batch * filters * g.cols());
  std::vector<double> cols(g.rows() * g.cols());
  ConstMatMap wm(weight.data().data(), filters, g.rows());
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(x.data().data() + n * channels * h * w, g, cols.data());
    MatMap y(out.data() + n * filters * g.cols(), filters, g.cols());
    y.noalias() = wm * ConstMatMap(cols.data(), g.rows(), g.cols());
    if (bias.defined()) {
      for (std::size_t f = 0; f < filters; ++f) y.row(f).array() += bias.data()[f];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{batch, filters, g.out_h, g.out_w}, std::move(out), std::move(inputs), "conv2d",
      [g, batch, filters](detail::Node& n) {
        auto* gx = input_grad(n, 0);
        auto* gw = input_grad(n, 1);
        auto* gb = n.inputs.size() > 2 ? input_grad(n, 2) : nullptr;
        const auto& xv = input_value(n, 0);
        ConstMatMap wm(input_value(n, 1).data(), filters, g.rows());
        std::vector<double> cols(g.rows() * g.cols());
        const std::size_t img = g.channels * g.height * g.width;
        for (std::size_t s = 0; s < batch; ++s) {
          ConstMatMap dy(n.grad.data() + s * filters * g.cols(), filters, g.cols());
          if (gw) {
            im2col(xv.data() + s * img, g, cols.data());
            MatMap(gw->data(), filters, g.rows()).noalias() +=
                dy * ConstMatMap(cols.data(), g.rows(), g.cols()).transpose();
          }
          if (gb) {
            // Plain loop: Eigen's vectorised sum peels by pointer alignment,
            // which would make the rounding depend on heap addresses.
            for (std::size_t f = 0; f < filters; ++f) {
              const double* row = n.grad.data() + (s * filters + f) * g.cols();
              double acc = 0.0;
              for (std::size_t i = 0; i < g.cols(); ++i) acc += row[i];
              (*gb)[f] += acc;
            }
          }
          if (gx) {
            MatMap(cols.data(), g.rows(), g.cols()).noalias() = wm.transpose() * dy;
            col2im_add(cols.data(), g, gx->data() + s * img);
          }
        }
      });
}

Tensor deconv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank("deconv2d", x, 4);
  require_rank("deconv2d", weight, 4);
  if (stride < 1 || padding < 0) {
    throw ShapeError("deconv2d: invalid stride " + std::to_string(stride) + " / padding " +
                     std::to_string(padding));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t filters = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != channels) {
    throw ShapeError("deconv2d: input has " + std::to_string(channels) + " channels " +
                     shape_str(x.shape()) + " but weight expects " + std::to_string(weight.dim(0)) +
                     " " + shape_str(weight.shape()));
  }
  const long s = stride, p = padding;
  const long oh = (static_cast<long>(h) - 1) * s - 2 * p + static_cast<long>(kh);
  const long ow = (static_cast<long>(w) - 1) * s - 2 * p + static_cast<long>(kw);
  if (oh < 1 || ow < 1) throw ShapeError("deconv2d: empty output for " + shape_str(x.shape()));
  if (stride == 2 && (oh != 2 * static_cast<long>(h) || ow != 2 * static_cast<long>(w))) {
    throw ShapeError("deconv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " with padding " + std::to_string(padding) + " maps " + std::to_string(h) + "x" +
                     std::to_string(w) + " to " + std::to_string(oh) + "x" + std::to_string(ow) +
                     ", not an exact doubling");
  }
  check_bias("deconv2d", bias, filters);
  // Column geometry of the adjoint convolution from the output back to x.
  const ConvGeom g{filters, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), kh, kw,
                   static_cast<std::size_t>(s), static_cast<std::size_t>(p), h, w};

  std::vector<double> out(batch * filters * g.height * g.width, 0.0);
  std::vector<double> cols(g.rows() * g.cols());
  ConstMatMap wm(weight.data().data(), channels, g.rows());
  const std::size_t out_img = filters * g.height * g.width;
  for (std::size_t n = 0; n < batch; ++n) {
    MatMap(cols.data(), g.rows(), g.cols()).noalias() =
        wm.transpose() * ConstMatMap(x.data().data() + n * channels * h * w, channels, h * w);
    col2im_add(cols.data(), g, out.data() + n * out_img);
    if (bias.defined()) {
      for (std::size_t f = 0; f < filters; ++f) {
        double* plane = out.data() + n * out_img + f * g.height * g.width;
        for (std::size_t i = 0; i < g.height * g.width; ++i) plane[i] += bias.data()[f];
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{batch, filters, g.height, g.width}, std::move(out), std::move(inputs), "deconv2d",
      [g, batch, channels, out_img](detail::Node& n) {
        auto* gx = input_grad(n, 0);
        auto* gw = input_grad(n, 1);
        auto* gb = n.inputs.size() > 2 ? input_grad(n, 2) : nullptr;
        const auto& xv = input_value(n, 0);
        ConstMatMap wm(input_value(n, 1).data(), channels, g.rows());
        std::vector<double> cols(g.rows() * g.cols());
        const std::size_t in_img = channels * g.cols();
        const std::size_t plane = g.height * g.width;
        for (std::size_t s = 0; s < batch; ++s) {
          const double* dy = n.grad.data() + s * out_img;
          if (gx || gw) im2col(dy, g, cols.data());
          ConstMatMap dcols(cols.data(), g.rows(), g.cols());
          if (gx) MatMap(gx->data() + s * in_img, channels, g.cols()).noalias() += wm * dcols;
          if (gw) {
            MatMap(gw->data(), channels, g.rows()).noalias() +=
                ConstMatMap(xv.data() + s * in_img, channels, g.cols()) * dcols.transpose();
          }
          if (gb) {
            for (std::size_t f = 0; f < g.channels; ++f) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += dy[f * plane + i];
              (*gb)[f] += acc;
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const ChannelStats* fixed, double eps,
                  ChannelStats* observed) {
  require_rank("batch_norm", x, 4);
  const std::size_t batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batch_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " for " + std::to_string(c) + " channels");
  }
  if (fixed && (fixed->mean.size() != c || fixed->var.size() != c)) {
    throw ShapeError("batch_norm: running statistics do not have " + std::to_string(c) + " channels");
  }
  const double count = static_cast<double>(batch * plane);
  const auto xv = x.data();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (fixed) {
    mu = fixed->mean;
    var = fixed->var;
  } else {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < plane; ++j) mu[ch] += xv[(n * c + ch) * plane + j];
    for (auto& m : mu) m /= count;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < plane; ++j) {
          const double dlt = xv[(n * c + ch) * plane + j] - mu[ch];
          var[ch] += dlt * dlt;
        }
    for (auto& v : var) v /= count;
    if (observed) *observed = ChannelStats{mu, var};
  }
  std::vector<double> inv(c), xhat(x.numel()), out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
  const auto g = gamma.data(), b = beta.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < plane; ++j) {
        const std::size_t i = (n * c + ch) * plane + j;
        xhat[i] = (xv[i] - mu[ch]) * inv[ch];
        out[i] = g[ch] * xhat[i] + b[ch];
      }
  const bool batch_stats = fixed == nullptr;
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
      [batch, c, plane, count, batch_stats, inv = std::move(inv), xhat = std::move(xhat)](detail::Node& n) {
        const auto& gv = input_value(n, 1);
        auto* gx = input_grad(n, 0);
        auto* gg = input_grad(n, 1);
        auto* gb = input_grad(n, 2);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t j = 0; j < plane; ++j) {
              const std::size_t i = (s * c + ch) * plane + j;
              sum_dy += n.grad[i];
              sum_dy_xhat += n.grad[i] * xhat[i];
            }
          if (gg) (*gg)[ch] += sum_dy_xhat;
          if (gb) (*gb)[ch] += sum_dy;
          if (!gx) continue;
          const double k = gv[ch] * inv[ch];
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t j = 0; j < plane; ++j) {
              const std::size_t i = (s * c + ch) * plane + j;
              // Batch statistics depend on x; fixed ones do not.
              (*gx)[i] += batch_stats ? k * (n.grad[i] - sum_dy / count - xhat[i] * sum_dy_xhat / count)
                                      : k * n.grad[i];
            }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent " + shape_str(x.shape()));
  std::vector<double> out(batch * channels);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += x.data()[i * plane + j];
    out[i] = s / static_cast<double>(plane);
  }
  return Tensor::make_result(Shape{batch, channels}, std::move(out), {x}, "global_avg_pool",
                             [plane](detail::Node& n) {
                               auto* g = input_grad(n, 0);
                               if (!g) return;
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                 for (std::size_t j = 0; j < plane; ++j) (*g)[i * plane + j] += n.grad[i] * inv;
                             });
}

Tensor channel_scale(const Tensor& x, const Tensor& weights) {
  require_rank("channel_scale", x, 4);
  require_rank("channel_scale", weights, 2);
  if (weights.dim(0) != x.dim(0) || weights.dim(1) != x.dim(1)) {
    throw ShapeError("channel_scale: weights " + shape_str(weights.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < plane; ++j) out[r * plane + j] = x.data()[r * plane + j] * weights.data()[r];
  return Tensor::make_result(x.shape(), std::move(out), {x, weights}, "channel_scale",
                             [rows, plane](detail::Node& n) {
                               const auto& xv = input_value(n, 0);
                               const auto& wv = input_value(n, 1);
                               auto* gx = input_grad(n, 0);
                               auto* gw = input_grad(n, 1);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < plane; ++j) {
                                   const double dy = n.grad[r * plane + j];
                                   if (gx) (*gx)[r * plane + j] += dy * wv[r];
                                   acc += dy * xv[r * plane + j];
                                 }
                                 if (gw) (*gw)[r] += acc;
                               }
                             });
}

Tensor gram_matrix(const Tensor& features) {
  require_rank("gram_matrix", features, 4);
  const std::size_t batch = features.dim(0), c = features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  if (plane == 0) throw ShapeError("gram_matrix: empty spatial extent");
  const double norm = 1.0 / static_cast<double>(c * plane);
  std::vector<double> out(batch * c * c);
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMatMap f(features.data().data() + n * c * plane, c, plane);
    MatMap(out.data() + n * c * c, c, c).noalias() = norm * (f * f.transpose());
  }
  return Tensor::make_result(Shape{batch, c, c}, std::move(out), {features}, "gram_matrix",
                             [batch, c, plane, norm](detail::Node& n) {
                               auto* g = input_grad(n, 0);
                               if (!g) return;
                               const auto& fv = input_value(n, 0);
                               for (std::size_t s = 0; s < batch; ++s) {
                                 ConstMatMap dg(n.grad.data() + s * c * c, c, c);
                                 ConstMatMap f(fv.data() + s * c * plane, c, plane);
                                 MatMap(g->data() + s * c * plane, c, plane).noalias() +=
                                     norm * ((dg + dg.transpose()) * f);
                               }
                             });
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape("l1_distance", a, b);
  const double count = static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return Tensor::make_result(Shape{1}, {s / count}, {a, b}, "l1_distance", [count](detail::Node& n) {
    const auto& x = input_value(n, 0);
    const auto& y = input_value(n, 1);
    auto* ga = input_grad(n, 0);
    auto* gb = input_grad(n, 1);
    const double d = n.grad[0] / count;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double diff = x[i] - y[i];
      const double sg = diff > 0.0 ? d : (diff < 0.0 ? -d : 0.0);
      if (ga) (*ga)[i] += sg;
      if (gb) (*gb)[i] -= sg;
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor bce_with_logits(const Tensor& logits, double target) {
  return mean(add(softplus(logits), scale(logits, -target)));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* x = logits.data().data() + r * classes;
    const double mx = *std::max_element(x, x + classes);
    double z = 0.0;
    for (std::size_t i = 0; i < classes; ++i) z += (probs[r * classes + i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < classes; ++i) probs[r * classes + i] /= z;
    loss += std::log(z) + mx - x[labels[r]];
  }
  loss /= static_cast<double>(batch);
  return Tensor::make_result(Shape{1}, {loss}, {logits}, "softmax_cross_entropy",
                             [probs = std::move(probs), labels, batch, classes](detail::Node& n) {
                               auto* g = input_grad(n, 0);
                               if (!g) return;
                               const double d = n.grad[0] / static_cast<double>(batch);
                               for (std::size_t r = 0; r < batch; ++r) {
                                 for (std::size_t i = 0; i < classes; ++i) {
                                   const double onehot = static_cast<int>(i) == labels[r] ? 1.0 : 0.0;
                                   (*g)[r * classes + i] += d * (probs[r * classes + i] - onehot);
                                 }
                               }
                             });
}

}  // namespace texhash
