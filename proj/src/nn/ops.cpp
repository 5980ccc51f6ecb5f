/*
 * Copyright 2026 The osscl Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "osscl/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "osscl/error.hpp"

namespace osscl::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void require_dim(const Tensor& t, std::size_t dim, const char* op) {
  if (t.dim() != dim) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(dim) +
                     "-d tensor, got " + shape_string(t.shape()));
  }
}

bool wants_grad(const Node& out, std::size_t i) {
  return out.inputs.size() > i && out.inputs[i]->requires_grad;
}

template <typename F>
Tensor unary_elementwise(const Tensor& x, F&& fwd_and_deriv) {
  std::vector<double> out(x.numel());
  auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd_and_deriv(in[i]).first;
  return make_op_result(x.shape(), std::move(out), {x}, [fwd_and_deriv](Node& o) {
    auto& src = *o.inputs[0];
    auto& g = src.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * fwd_and_deriv(src.value[i]).second;
  });
}

// Columns are output positions; rows are (channel, tap).
void im2col1d(const double* x, std::size_t channels, std::size_t length, std::size_t kernel,
              std::size_t out_len, const Conv1dOptions& opt, double* col) {
  const auto len = static_cast<std::ptrdiff_t>(length);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x + c * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      double* row = col + (c * kernel + k) * out_len;
      const auto offset = static_cast<std::ptrdiff_t>(k * opt.dilation) -
                          static_cast<std::ptrdiff_t>(opt.padding);
      for (std::size_t t = 0; t < out_len; ++t) {
        const auto pos = static_cast<std::ptrdiff_t>(t * opt.stride) + offset;
        row[t] = (pos >= 0 && pos < len) ? xc[pos] : 0.0;
      }
    }
  }
}

void col2im1d(const double* col, std::size_t channels, std::size_t length, std::size_t kernel,
              std::size_t out_len, const Conv1dOptions& opt, double* dx) {
  const auto len = static_cast<std::ptrdiff_t>(length);
  for (std::size_t c = 0; c < channels; ++c) {
    double* dc = dx + c * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      const double* row = col + (c * kernel + k) * out_len;
      const auto offset = static_cast<std::ptrdiff_t>(k * opt.dilation) -
                          static_cast<std::ptrdiff_t>(opt.padding);
      for (std::size_t t = 0; t < out_len; ++t) {
        const auto pos = static_cast<std::ptrdiff_t>(t * opt.stride) + offset;
        if (pos >= 0 && pos < len) dc[pos] += row[t];
      }
    }
  }
}

struct Geometry2d {
  std::size_t channels, height, width, kh, kw, out_h, out_w;
};

void im2col2d(const double* x, const Geometry2d& g, const Conv2dOptions& opt, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto h = static_cast<std::ptrdiff_t>(oh * opt.stride_h + i) -
                         static_cast<std::ptrdiff_t>(opt.pad_h);
          double* dst = row + oh * g.out_w;
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* xrow = xc + h * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto w = static_cast<std::ptrdiff_t>(ow * opt.stride_w + j) -
                           static_cast<std::ptrdiff_t>(opt.pad_w);
            dst[ow] = (w >= 0 && w < static_cast<std::ptrdiff_t>(g.width)) ? xrow[w] : 0.0;
          }
        }
      }
    }
  }
}

void col2im2d(const double* col, const Geometry2d& g, const Conv2dOptions& opt, double* dx) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* dc = dx + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto h = static_cast<std::ptrdiff_t>(oh * opt.stride_h + i) -
                         static_cast<std::ptrdiff_t>(opt.pad_h);
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* drow = dc + h * g.width;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto w = static_cast<std::ptrdiff_t>(ow * opt.stride_w + j) -
                           static_cast<std::ptrdiff_t>(opt.pad_w);
            if (w >= 0 && w < static_cast<std::ptrdiff_t>(g.width)) drow[w] += src[ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Geometry2d& g, const Conv2dOptions& opt) {
  return g.kh == 1 && g.kw == 1 && opt.stride_h == 1 && opt.stride_w == 1 && opt.pad_h == 0 &&
         opt.pad_w == 0;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        const Conv2dOptions& opt, const Geometry2d& g) {
  const std::size_t n_batch = x.size(0);
  const std::size_t in_plane = g.height * g.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = g.kh * g.kw;
  std::vector<double> out(n_batch * g.channels * out_plane, 0.0);
  auto xv = x.values();
  auto wv = weight.values();

  // Visits (input index, output index, tap index) triples of one plane.
  auto for_each_tap = [g, opt](auto&& fn) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const auto h = static_cast<std::ptrdiff_t>(oh * opt.stride_h + i) -
                       static_cast<std::ptrdiff_t>(opt.pad_h);
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(g.height)) continue;
        for (std::size_t j = 0; j < g.kw; ++j) {
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto w = static_cast<std::ptrdiff_t>(ow * opt.stride_w + j) -
                           static_cast<std::ptrdiff_t>(opt.pad_w);
            if (w < 0 || w >= static_cast<std::ptrdiff_t>(g.width)) continue;
            fn(static_cast<std::size_t>(h) * g.width + static_cast<std::size_t>(w),
               oh * g.out_w + ow, i * g.kw + j);
          }
        }
      }
    }
  };

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      const double* xc = xv.data() + (n * g.channels + c) * in_plane;
      const double* wc = wv.data() + c * taps;
      double* oc = out.data() + (n * g.channels + c) * out_plane;
      for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t ti) { oc[oi] += xc[xi] * wc[ti]; });
      if (bias.defined()) {
        const double b = bias.values()[c];
        for (std::size_t i = 0; i < out_plane; ++i) oc[i] += b;
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  Shape shape{n_batch, g.channels, g.out_h, g.out_w};
  return make_op_result(std::move(shape), std::move(out), std::move(inputs),
                        [g, opt, for_each_tap, n_batch, in_plane, out_plane, taps](Node& o) {
    const auto& xin = o.inputs[0]->value;
    const auto& win = o.inputs[1]->value;
    double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
    double* dw = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
    double* db = wants_grad(o, 2) ? o.inputs[2]->ensure_grad().data() : nullptr;
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        const std::size_t in_off = (n * g.channels + c) * in_plane;
        const double* go = o.grad.data() + (n * g.channels + c) * out_plane;
        const double* xc = xin.data() + in_off;
        const double* wc = win.data() + c * taps;
        if (dx) {
          double* dxc = dx + in_off;
          for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t ti) { dxc[xi] += go[oi] * wc[ti]; });
        }
        if (dw) {
          double* dwc = dw + c * taps;
          for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t ti) { dwc[ti] += go[oi] * xc[xi]; });
        }
        if (db) {
          double acc = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
          db[c] += acc;
        }
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(o, k)) continue;
      auto& g = o.inputs[k]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return make_op_result(a.shape(), std::move(out), {a}, [factor](Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_op_result({1}, {total}, {a}, [](Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& x) {
  return unary_elementwise(x, [](double v) {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0};
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_elementwise(x, [slope](double v) {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{slope * v, slope};
  });
}

Tensor prelu(const Tensor& x, const Tensor& weight) {
  if (x.dim() < 2 || weight.numel() != x.size(1)) {
    throw ShapeError("prelu: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  const std::size_t channels = x.size(1);
  const std::size_t inner = x.numel() / (x.size(0) * channels);
  std::vector<double> out(x.numel());
  auto xv = x.values();
  auto wv = weight.values();
  for (std::size_t row = 0; row < out.size() / inner; ++row) {
    const double a = wv[row % channels];
    const std::size_t off = row * inner;
    for (std::size_t i = off; i < off + inner; ++i) out[i] = xv[i] > 0.0 ? xv[i] : a * xv[i];
  }
  return make_op_result(x.shape(), std::move(out), {x, weight}, [channels, inner](Node& o) {
    const auto& xin = o.inputs[0]->value;
    const auto& win = o.inputs[1]->value;
    double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
    double* dw = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
    for (std::size_t row = 0; row < xin.size() / inner; ++row) {
      const std::size_t c = row % channels;
      const std::size_t off = row * inner;
      double acc = 0.0;
      for (std::size_t i = off; i < off + inner; ++i) {
        const double g = o.grad[i];
        if (xin[i] > 0.0) {
          if (dx) dx[i] += g;
        } else {
          if (dx) dx[i] += win[c] * g;
          acc += xin[i] * g;
        }
      }
      if (dw) dw[c] += acc;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_dim(a, 2, "matmul");
  require_dim(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1);
  const std::size_t n = transpose_b ? b.size(0) : b.size(1);
  const std::size_t kb = transpose_b ? b.size(1) : b.size(0);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  CMapR am(a.values().data(), m, k);
  CMapR bm(b.values().data(), b.size(0), b.size(1));
  MapR om(out.data(), m, n);
  if (transpose_b) {
    om.noalias() = am * bm.transpose();
  } else {
    om.noalias() = am * bm;
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n, transpose_b](Node& o) {
    CMapR g(o.grad.data(), m, n);
    const auto& an = *o.inputs[0];
    const auto& bn = *o.inputs[1];
    CMapR am(an.value.data(), m, k);
    CMapR bm(bn.value.data(), bn.shape[0], bn.shape[1]);
    if (wants_grad(o, 0)) {
      MapR da(o.inputs[0]->ensure_grad().data(), m, k);
      if (transpose_b) {
        da.noalias() += g * bm;
      } else {
        da.noalias() += g * bm.transpose();
      }
    }
    if (wants_grad(o, 1)) {
      MapR db(o.inputs[1]->ensure_grad().data(), bn.shape[0], bn.shape[1]);
      if (transpose_b) {
        db.noalias() += g.transpose() * am;
      } else {
        db.noalias() += am.transpose() * g;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight, /*transpose_b=*/true);
  if (!bias.defined()) return y;
  if (bias.numel() != y.size(1)) throw ShapeError("linear: bias size mismatch");
  const std::size_t rows = y.size(0), cols = y.size(1);
  std::vector<double> out(y.values().begin(), y.values().end());
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return make_op_result(y.shape(), std::move(out), {y, bias}, [rows, cols](Node& o) {
    if (wants_grad(o, 0)) {
      auto& g = o.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = o.inputs[1]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
      }
    }
  });
}

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               std::size_t padding, std::size_t dilation) {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (length + 2 * padding < span || stride == 0) return 0;
  return (length + 2 * padding - span) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opt) {
  require_dim(x, 3, "conv1d");
  require_dim(weight, 3, "conv1d");
  const std::size_t n_batch = x.size(0), channels = x.size(1), length = x.size(2);
  const std::size_t out_ch = weight.size(0), kernel = weight.size(2);
  if (weight.size(1) != channels) {
    throw ShapeError("conv1d: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  const std::size_t out_len = conv_output_length(length, kernel, opt.stride, opt.padding,
                                                 opt.dilation);
  if (out_len == 0) {
    throw ShapeError("conv1d: input length " + std::to_string(length) + " too short");
  }
  const std::size_t ck = channels * kernel;
  std::vector<double> out(n_batch * out_ch * out_len);
  std::vector<double> col(ck * out_len);
  CMapR wm(weight.values().data(), out_ch, ck);
  for (std::size_t n = 0; n < n_batch; ++n) {
    im2col1d(x.values().data() + n * channels * length, channels, length, kernel, out_len, opt,
             col.data());
    MapR om(out.data() + n * out_ch * out_len, out_ch, out_len);
    om.noalias() = wm * CMapR(col.data(), ck, out_len);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_ch; ++o) om.row(o).array() += bias.values()[o];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      {n_batch, out_ch, out_len}, std::move(out), std::move(inputs),
      [=](Node& o) {
        const auto& xin = o.inputs[0]->value;
        CMapR wm(o.inputs[1]->value.data(), out_ch, ck);
        double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
        double* dw = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
        double* db = wants_grad(o, 2) ? o.inputs[2]->ensure_grad().data() : nullptr;
        std::vector<double> buf(ck * out_len);
        for (std::size_t n = 0; n < n_batch; ++n) {
          CMapR g(o.grad.data() + n * out_ch * out_len, out_ch, out_len);
          if (dw) {
            im2col1d(xin.data() + n * channels * length, channels, length, kernel, out_len, opt,
                     buf.data());
            MapR(dw, out_ch, ck).noalias() += g * CMapR(buf.data(), ck, out_len).transpose();
          }
          if (db) {
            for (std::size_t c = 0; c < out_ch; ++c) db[c] += g.row(c).sum();
          }
          if (dx) {
            MapR(buf.data(), ck, out_len).noalias() = wm.transpose() * g;
            col2im1d(buf.data(), channels, length, kernel, out_len, opt,
                     dx + n * channels * length);
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt) {
  require_dim(x, 4, "conv2d");
  require_dim(weight, 4, "conv2d");
  const std::size_t n_batch = x.size(0);
  Geometry2d g{x.size(1), x.size(2), x.size(3), weight.size(2), weight.size(3), 0, 0};
  g.out_h = conv_output_length(g.height, g.kh, opt.stride_h, opt.pad_h);
  g.out_w = conv_output_length(g.width, g.kw, opt.stride_w, opt.pad_w);
  if (g.out_h == 0 || g.out_w == 0) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  }
  const std::size_t out_ch = weight.size(0);
  if (opt.groups != 1) {
    if (opt.groups != g.channels || out_ch != g.channels || weight.size(1) != 1) {
      throw ShapeError("conv2d: only dense or depthwise grouping is supported");
    }
    return depthwise_conv2d(x, weight, bias, opt, g);
  }
  if (weight.size(1) != g.channels) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  const std::size_t ck = g.channels * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t in_size = g.channels * g.height * g.width;
  const bool pointwise = is_pointwise(g, opt);
  std::vector<double> out(n_batch * out_ch * plane);
  std::vector<double> col(pointwise ? 0 : ck * plane);
  CMapR wm(weight.values().data(), out_ch, ck);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* xn = x.values().data() + n * in_size;
    if (!pointwise) im2col2d(xn, g, opt, col.data());
    MapR om(out.data() + n * out_ch * plane, out_ch, plane);
    om.noalias() = wm * CMapR(pointwise ? xn : col.data(), ck, plane);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_ch; ++o) om.row(o).array() += bias.values()[o];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      {n_batch, out_ch, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [=](Node& o) {
        const auto& xin = o.inputs[0]->value;
        CMapR wm(o.inputs[1]->value.data(), out_ch, ck);
        double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
        double* dw = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
        double* db = wants_grad(o, 2) ? o.inputs[2]->ensure_grad().data() : nullptr;
        std::vector<double> buf(pointwise ? 0 : ck * plane);
        for (std::size_t n = 0; n < n_batch; ++n) {
          CMapR gm(o.grad.data() + n * out_ch * plane, out_ch, plane);
          const double* xn = xin.data() + n * in_size;
          if (dw) {
            if (!pointwise) im2col2d(xn, g, opt, buf.data());
            MapR(dw, out_ch, ck).noalias() +=
                gm * CMapR(pointwise ? xn : buf.data(), ck, plane).transpose();
          }
          if (db) {
            for (std::size_t c = 0; c < out_ch; ++c) db[c] += gm.row(c).sum();
          }
          if (dx) {
            if (pointwise) {
              MapR(dx + n * in_size, ck, plane).noalias() += wm.transpose() * gm;
            } else {
              MapR(buf.data(), ck, plane).noalias() = wm.transpose() * gm;
              col2im2d(buf.data(), g, opt, dx + n * in_size);
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
  if (x.dim() < 2) throw ShapeError("batch_norm: expected at least 2-d input");
  const std::size_t n_batch = x.size(0), channels = x.size(1);
  const std::size_t inner = x.numel() / (n_batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batch_norm: affine parameters do not match channel count");
  }
  const std::size_t count = n_batch * inner;
  auto xv = x.values();
  std::vector<double> mu(channels), invstd(channels);
  if (training) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const double* p = xv.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const double* p = xv.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      running_mean.values()[c] = (1.0 - momentum) * running_mean.values()[c] + momentum * m;
      running_var.values()[c] = (1.0 - momentum) * running_var.values()[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = running_mean.values()[c];
      invstd[c] = 1.0 / std::sqrt(running_var.values()[c] + eps);
    }
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[off + i] = (xv[off + i] - mu[c]) * invstd[c];
        out[off + i] = gv[c] * xhat[off + i] + bv[c];
      }
    }
  }
  return make_op_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [n_batch, channels, inner, count, training, xhat = std::move(xhat),
       invstd = std::move(invstd)](Node& o) {
        const auto& gv = o.inputs[1]->value;
        double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
        double* dg = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
        double* db = wants_grad(o, 2) ? o.inputs[2]->ensure_grad().data() : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t off = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy += o.grad[off + i];
              sum_dy_xhat += o.grad[off + i] * xhat[off + i];
            }
          }
          if (dg) dg[c] += sum_dy_xhat;
          if (db) db[c] += sum_dy;
          if (!dx) continue;
          const double k = gv[c] * invstd[c];
          const double inv_count = 1.0 / static_cast<double>(count);
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t off = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                dx[off + i] += k * (o.grad[off + i] - inv_count * sum_dy -
                                    xhat[off + i] * inv_count * sum_dy_xhat);
              } else {
                dx[off + i] += k * o.grad[off + i];
              }
            }
          }
        }
      });
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps) {
  require_dim(x, 3, "layer_norm_channels");
  const std::size_t n_batch = x.size(0), channels = x.size(1), length = x.size(2);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("layer_norm_channels: affine parameters do not match channel count");
  }
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> out(x.numel()), xhat(x.numel()), invstd(n_batch * length);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* xn = xv.data() + n * channels * length;
    for (std::size_t t = 0; t < length; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < channels; ++c) s += xn[c * length + t];
      const double m = s / static_cast<double>(channels);
      double ss = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = xn[c * length + t] - m;
        ss += d * d;
      }
      const double is = 1.0 / std::sqrt(ss / static_cast<double>(channels) + eps);
      invstd[n * length + t] = is;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = n * channels * length + c * length + t;
        xhat[idx] = (xv[idx] - m) * is;
        out[idx] = gv[c] * xhat[idx] + bv[c];
      }
    }
  }
  return make_op_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [n_batch, channels, length, xhat = std::move(xhat), invstd = std::move(invstd)](Node& o) {
        const auto& gv = o.inputs[1]->value;
        double* dx = wants_grad(o, 0) ? o.inputs[0]->ensure_grad().data() : nullptr;
        double* dg = wants_grad(o, 1) ? o.inputs[1]->ensure_grad().data() : nullptr;
        double* db = wants_grad(o, 2) ? o.inputs[2]->ensure_grad().data() : nullptr;
        const double inv_c = 1.0 / static_cast<double>(channels);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t t = 0; t < length; ++t) {
            double sum_d = 0.0, sum_d_xhat = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t idx = n * channels * length + c * length + t;
              const double d = o.grad[idx] * gv[c];
              sum_d += d;
              sum_d_xhat += d * xhat[idx];
              if (dg) dg[c] += o.grad[idx] * xhat[idx];
              if (db) db[c] += o.grad[idx];
            }
            if (!dx) continue;
            const double is = invstd[n * length + t];
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t idx = n * channels * length + c * length + t;
              const double d = o.grad[idx] * gv[c];
              dx[idx] += is * (d - inv_c * sum_d - xhat[idx] * inv_c * sum_d_xhat);
            }
          }
        }
      });
}

namespace {

// Shared by the fixed and adaptive poolings: `bins` gives [begin, end) per output.
Tensor max_pool_bins(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& bins) {
  const std::size_t rows = x.size(0) * x.size(1), length = x.size(2), out_len = bins.size();
  std::vector<double> out(rows * out_len);
  std::vector<std::size_t> argmax(rows * out_len);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * length;
    for (std::size_t i = 0; i < out_len; ++i) {
      std::size_t best = bins[i].first;
      for (std::size_t t = bins[i].first + 1; t < bins[i].second; ++t) {
        if (row[t] > row[best]) best = t;
      }
      out[r * out_len + i] = row[best];
      argmax[r * out_len + i] = r * length + best;
    }
  }
  return make_op_result({x.size(0), x.size(1), out_len}, std::move(out), {x},
                        [argmax = std::move(argmax)](Node& o) {
                          auto& g = o.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                        });
}

}  // namespace

Tensor max_pool1d(const Tensor& x, std::size_t kernel) {
  require_dim(x, 3, "max_pool1d");
  const std::size_t out_len = kernel == 0 ? 0 : x.size(2) / kernel;
  if (out_len == 0) throw ShapeError("max_pool1d: input shorter than kernel");
  std::vector<std::pair<std::size_t, std::size_t>> bins(out_len);
  for (std::size_t i = 0; i < out_len; ++i) bins[i] = {i * kernel, (i + 1) * kernel};
  return max_pool_bins(x, bins);
}

Tensor adaptive_max_pool1d(const Tensor& x, std::size_t output_size) {
  require_dim(x, 3, "adaptive_max_pool1d");
  const std::size_t length = x.size(2);
  if (output_size == 0 || length < output_size) {
    throw ShapeError("adaptive_max_pool1d: cannot pool length " + std::to_string(length) +
                     " to " + std::to_string(output_size));
  }
  std::vector<std::pair<std::size_t, std::size_t>> bins(output_size);
  for (std::size_t i = 0; i < output_size; ++i) {
    bins[i] = {i * length / output_size, ((i + 1) * length + output_size - 1) / output_size};
  }
  return max_pool_bins(x, bins);
}

Tensor mean_last_axis(const Tensor& x) {
  if (x.dim() < 2) throw ShapeError("mean_last_axis: expected at least 2-d input");
  const std::size_t last = x.shape().back();
  const std::size_t rows = x.numel() / last;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < last; ++t) s += xv[r * last + t];
    out[r] = s / static_cast<double>(last);
  }
  return make_op_result(std::move(shape), std::move(out), {x}, [rows, last](Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(last);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < last; ++t) g[r * last + t] += o.grad[r] * inv;
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw ShapeError("concat_channels: expected at least 2-d inputs");
  const std::size_t n_batch = first[0];
  std::vector<std::size_t> widths;  // per-sample element count of each part
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != n_batch ||
        !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw ShapeError("concat_channels: shape mismatch " + shape_string(first) + " vs " +
                       shape_string(s));
    }
    channels += s[1];
    widths.push_back(p.numel() / n_batch);
  }
  Shape shape = first;
  shape[1] = channels;
  const std::size_t per_sample = shape_numel(shape) / n_batch;
  std::vector<double> out(n_batch * per_sample);
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::size_t off = n * per_sample;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto v = parts[k].values();
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(n * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(off));
      off += widths[k];
    }
  }
  return make_op_result(std::move(shape), std::move(out), parts,
                        [n_batch, per_sample, widths](Node& o) {
    for (std::size_t n = 0; n < n_batch; ++n) {
      std::size_t off = n * per_sample;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (wants_grad(o, k)) {
          auto& g = o.inputs[k]->ensure_grad();
          for (std::size_t i = 0; i < widths[k]; ++i) g[n * widths[k] + i] += o.grad[off + i];
        }
        off += widths[k];
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x, double min_norm) {
  require_dim(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.size(0), cols = x.size(1);
  std::vector<double> out(x.numel()), norms(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += xv[r * cols + c] * xv[r * cols + c];
    const double norm = std::sqrt(ss);
    if (!(norm > min_norm)) {
      throw NumericError("degenerate embedding: row " + std::to_string(r) + " has norm " +
                         std::to_string(norm));
    }
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] / norm;
  }
  std::vector<double> y = out;
  return make_op_result(x.shape(), std::move(out), {x},
                        [rows, cols, y = std::move(y), norms = std::move(norms)](Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += o.grad[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        g[r * cols + c] += (o.grad[r * cols + c] - dot * y[r * cols + c]) / norms[r];
      }
    }
  });
}

std::vector<double> log_softmax_row(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_dim(logits, 2, "cross_entropy");
  const std::size_t rows = logits.size(0), cols = logits.size(1);
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count mismatch");
  std::vector<double> probs(logits.numel());
  std::vector<int> targets(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(targets[r]) +
                            " out of range [0, " + std::to_string(cols) + ")");
    }
    auto ls = log_softmax_row(logits.values().subspan(r * cols, cols));
    total -= ls[static_cast<std::size_t>(targets[r])];
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(ls[c]);
  }
  return make_op_result({1}, {total / static_cast<double>(rows)}, {logits},
                        [rows, cols, probs = std::move(probs), targets](Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    const double k = o.grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double onehot = static_cast<int>(c) == targets[r] ? 1.0 : 0.0;
        g[r * cols + c] += k * (probs[r * cols + c] - onehot);
      }
    }
  });
}

}  // namespace osscl::nn
