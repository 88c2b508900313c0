#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tta/autograd.hpp"

namespace tta {
namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same(Var a, Var b, std::string_view op) {
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
  require_same_shape(a.value(), b.value(), op);
}

void require_image(const Tensor& t, std::string_view op) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected [C,H,W], got " + to_string(t.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  const float* src = x.raw();
  float* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return out;
}

struct ConvGeometry {
  int c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out;
  int patch() const { return c_in * kh * kw; }
  int pixels() const { return h_out * w_out; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_image(input, "conv2d");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [C_out,C_in,kH,kW]");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry g{};
  g.c_in = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.c_out = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernel.dim(1) != g.c_in) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(g.c_in));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  const int hn = g.h + 2 * padding - g.kh;
  const int wn = g.w + 2 * padding - g.kw;
  if (hn < 0 || wn < 0) throw ShapeError("conv2d: non-positive output size");
  g.h_out = hn / stride + 1;
  g.w_out = wn / stride + 1;
  return g;
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// cols is [C_in*kH*kW, H_out*W_out].
void im2col(const ConvGeometry& g, const float* src, float* cols) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.c_in; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * pixels;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          float* out = row + static_cast<std::size_t>(oh) * g.w_out;
          if (ih < 0 || ih >= g.h) {
            std::fill(out, out + g.w_out, 0.0f);
            continue;
          }
          const float* in_row = src + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            out[ow] = (iw >= 0 && iw < g.w) ? in_row[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* cols, float* dst) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.c_in; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * pixels;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          float* out_row = dst + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          const float* in = row + static_cast<std::size_t>(oh) * g.w_out;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) out_row[iw] += in[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const ConvGeometry& g, const Tensor& input, const Tensor& kernel,
                    const Tensor* bias) {
  Tensor out({g.c_out, g.h_out, g.w_out});
  CMapR wmat(kernel.raw(), g.c_out, g.patch());
  MapR omat(out.raw(), g.c_out, g.pixels());
  if (is_pointwise(g)) {
    omat.noalias() = wmat * CMapR(input.raw(), g.c_in, g.pixels());
  } else {
    std::vector<float> cols(static_cast<std::size_t>(g.patch()) * g.pixels());
    im2col(g, input.raw(), cols.data());
    omat.noalias() = wmat * CMapR(cols.data(), g.patch(), g.pixels());
  }
  if (bias) {
    for (int o = 0; o < g.c_out; ++o) omat.row(o).array() += (*bias)[static_cast<std::size_t>(o)];
  }
  return out;
}

Var conv_impl(Var input, Var kernel, const Var* bias, int stride, int padding,
              std::string_view name) {
  if (input.tape() != kernel.tape() || (bias && bias->tape() != input.tape())) {
    throw Error(std::string(name) + ": operands live on different tapes");
  }
  const ConvGeometry g = conv_geometry(input.value(), kernel.value(), stride, padding);
  if (bias) {
    const Tensor& b = bias->value();
    if (b.rank() != 1 || b.dim(0) != g.c_out) {
      throw ShapeError(std::string(name) + ": bias must be [" + std::to_string(g.c_out) + "]");
    }
  }
  Tensor out = conv_forward(g, input.value(), kernel.value(), bias ? &bias->value() : nullptr);

  Tape& tape = *input.tape();
  const bool has_bias = bias != nullptr;
  const Var b = has_bias ? *bias : Var();
  auto backward = [g, input, kernel, b, has_bias](Tape& t, const Tensor& gout) {
    CMapR dout(gout.raw(), g.c_out, g.pixels());
    const bool want_x = input.requires_grad();
    const bool want_w = kernel.requires_grad();
    std::vector<float> cols;
    const float* cols_ptr = input.value().raw();
    if (!is_pointwise(g) && want_w) {
      cols.resize(static_cast<std::size_t>(g.patch()) * g.pixels());
      im2col(g, input.value().raw(), cols.data());
      cols_ptr = cols.data();
    }
    if (want_w) {
      Tensor dw(kernel.value().shape());
      MapR(dw.raw(), g.c_out, g.patch()).noalias() =
          dout * CMapR(cols_ptr, g.patch(), g.pixels()).transpose();
      t.accumulate(kernel, dw);
    }
    if (has_bias && b.requires_grad()) {
      Tensor db({g.c_out}, 0.0f);
      for (int o = 0; o < g.c_out; ++o) {
        double acc = 0.0;
        for (int p = 0; p < g.pixels(); ++p) acc += dout(o, p);
        db[static_cast<std::size_t>(o)] = static_cast<float>(acc);
      }
      t.accumulate(b, db);
    }
    if (want_x) {
      CMapR wmat(kernel.value().raw(), g.c_out, g.patch());
      Tensor dx(input.value().shape(), 0.0f);
      if (is_pointwise(g)) {
        MapR(dx.raw(), g.c_in, g.pixels()).noalias() = wmat.transpose() * dout;
      } else {
        std::vector<float> dcols(static_cast<std::size_t>(g.patch()) * g.pixels());
        MapR(dcols.data(), g.patch(), g.pixels()).noalias() = wmat.transpose() * dout;
        col2im_add(g, dcols.data(), dx.raw());
      }
      t.accumulate(input, dx);
    }
  };
  if (has_bias) return tape.record(std::move(out), {input, kernel, b}, backward, name);
  return tape.record(std::move(out), {input, kernel}, backward, name);
}

Var reduce_to_scalar(Var a, double value, float grad_scale, std::string_view name) {
  Tape& tape = *a.tape();
  return tape.record(
      Tensor::scalar(static_cast<float>(value)), {a},
      [a, grad_scale](Tape& t, const Tensor& g) {
        t.accumulate(a, Tensor(a.value().shape(), g.item() * grad_scale));
      },
      name);
}

}  // namespace

Var add(Var a, Var b) {
  require_same(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, map_unary(g, [](float v) { return -v; }));
      },
      "sub");
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        const Tensor& x = a.value();
        const Tensor& y = b.value();
        Tensor ga(g.shape()), gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * y[i];
          gb[i] = g[i] * x[i];
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
      },
      "mul");
}

Var scale(Var a, float factor) {
  Tensor out = map_unary(a.value(), [factor](float v) { return v * factor; });
  return a.tape()->record(
      std::move(out), {a},
      [a, factor](Tape& t, const Tensor& g) {
        t.accumulate(a, map_unary(g, [factor](float v) { return v * factor; }));
      },
      "scale");
}

Var sum(Var a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return reduce_to_scalar(a, acc, 1.0f, "sum");
}

Var mean(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.size());
  return reduce_to_scalar(a, acc / n, static_cast<float>(1.0 / n), "mean");
}

Var leaky_relu(Var x, float slope) {
  Tensor out = map_unary(x.value(), [slope](float v) { return v > 0.0f ? v : v * slope; });
  return x.tape()->record(
      std::move(out), {x},
      [x, slope](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = in[i] > 0.0f ? g[i] : g[i] * slope;
        t.accumulate(x, gx);
      },
      "leaky_relu");
}

Var tanh(Var x) {
  Tensor out = map_unary(x.value(), [](float v) { return std::tanh(v); });
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const float y = std::tanh(in[i]);
          gx[i] = g[i] * (1.0f - y * y);
        }
        t.accumulate(x, gx);
      },
      "tanh");
}

Var sigmoid(Var x) {
  Tensor out = map_unary(x.value(), [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const float y = 1.0f / (1.0f + std::exp(-in[i]));
          gx[i] = g[i] * y * (1.0f - y);
        }
        t.accumulate(x, gx);
      },
      "sigmoid");
}

Var log_clamped(Var x, float lo, float hi) {
  if (!(lo > 0.0f) || !(hi >= lo)) throw DomainError("log_clamped: need 0 < lo <= hi");
  Tensor out = map_unary(x.value(), [lo, hi](float v) { return std::log(std::clamp(v, lo, hi)); });
  return x.tape()->record(
      std::move(out), {x},
      [x, lo, hi](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] = (in[i] < lo || in[i] > hi) ? 0.0f : g[i] / in[i];
        }
        t.accumulate(x, gx);
      },
      "log_clamped");
}

Var conv2d(Var input, Var kernel, int stride, int padding) {
  return conv_impl(input, kernel, nullptr, stride, padding, "conv2d");
}

Var conv2d(Var input, Var kernel, Var bias, int stride, int padding) {
  return conv_impl(input, kernel, &bias, stride, padding, "conv2d");
}

Var conv2d_1x1(Var input, Var kernel, Var bias) {
  const Tensor& k = kernel.value();
  if (k.rank() != 4 || k.dim(2) != 1 || k.dim(3) != 1) {
    throw ShapeError("conv2d_1x1: kernel must be [C_out,C,1,1], got " + to_string(k.shape()));
  }
  if (input.value().rank() != 3 || k.dim(1) != input.value().dim(0)) {
    throw ShapeError("conv2d_1x1: channel mismatch between input " +
                     to_string(input.value().shape()) + " and kernel " + to_string(k.shape()));
  }
  return conv_impl(input, kernel, &bias, 1, 0, "conv2d_1x1");
}

Var upsample2x(Var x) {
  const Tensor& in = x.value();
  require_image(in, "upsample2x");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) out.at(ch, i, j) = in.at(ch, i / 2, j / 2);
    }
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, c, h, w](Tape& t, const Tensor& g) {
        Tensor gx({c, h, w}, 0.0f);
        for (int ch = 0; ch < c; ++ch) {
          for (int i = 0; i < 2 * h; ++i) {
            for (int j = 0; j < 2 * w; ++j) gx.at(ch, i / 2, j / 2) += g.at(ch, i, j);
          }
        }
        t.accumulate(x, gx);
      },
      "upsample2x");
}

Var concat_channels(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_image(x, "concat_channels");
  require_image(y, "concat_channels");
  if (a.tape() != b.tape()) throw Error("concat_channels: operands live on different tapes");
  if (x.dim(1) != y.dim(1) || x.dim(2) != y.dim(2)) {
    throw ShapeError("concat_channels: spatial mismatch " + to_string(x.shape()) + " vs " +
                     to_string(y.shape()));
  }
  const int ca = x.dim(0), cb = y.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({ca + cb, h, w});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<long>(x.size()));
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, ca, cb, h, w](Tape& t, const Tensor& g) {
        const auto split = static_cast<long>(static_cast<std::size_t>(ca) * h * w);
        if (a.requires_grad()) {
          t.accumulate(a, Tensor({ca, h, w}, std::vector<float>(g.data().begin(),
                                                                 g.data().begin() + split)));
        }
        if (b.requires_grad()) {
          t.accumulate(b, Tensor({cb, h, w},
                                 std::vector<float>(g.data().begin() + split, g.data().end())));
        }
      },
      "concat_channels");
}

Var l1_distance(Var a, Var b) {
  require_same(a, b, "l1_distance");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::fabs(static_cast<double>(x[i]) - y[i]);
  const double n = static_cast<double>(x.size());
  return a.tape()->record(
      Tensor::scalar(static_cast<float>(acc / n)), {a, b},
      [a, b, n](Tape& t, const Tensor& g) {
        const Tensor& x = a.value();
        const Tensor& y = b.value();
        const float s = static_cast<float>(g.item() / n);
        Tensor ga(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const float d = x[i] - y[i];
          ga[i] = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
        }
        if (a.requires_grad()) t.accumulate(a, ga);
        if (b.requires_grad()) t.accumulate(b, map_unary(ga, [](float v) { return -v; }));
      },
      "l1_distance");
}

Var mse_loss(Var a, Var b) {
  require_same(a, b, "mse_loss");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  const double n = static_cast<double>(x.size());
  return a.tape()->record(
      Tensor::scalar(static_cast<float>(acc / n)), {a, b},
      [a, b, n](Tape& t, const Tensor& g) {
        const Tensor& x = a.value();
        const Tensor& y = b.value();
        const float s = static_cast<float>(2.0 * g.item() / n);
        Tensor ga(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] = s * (x[i] - y[i]);
        if (a.requires_grad()) t.accumulate(a, ga);
        if (b.requires_grad()) t.accumulate(b, map_unary(ga, [](float v) { return -v; }));
      },
      "mse_loss");
}

double l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.size());
}

double mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  return conv_forward(conv_geometry(input, kernel, stride, padding), input, kernel, nullptr);
}

Tensor conv2d_1x1(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  Tape tape;
  return conv2d_1x1(tape.constant_ref(input), tape.constant_ref(kernel), tape.constant_ref(bias))
      .value();
}

}  // namespace tta
