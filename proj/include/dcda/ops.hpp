#ifndef DCDA_OPS_HPP
#define DCDA_OPS_HPP

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dcda/autograd.hpp"

/// Differentiable tensor operations. Every function records a backward
/// closure through Var::from_op; shapes follow NCHW for images and
/// [N, features] for flat codes.
namespace dcda::ops {

namespace detail {

template <typename Scalar>
void accumulate(const std::shared_ptr<Node<Scalar>>& node, const Tensor<Scalar>& g) {
  if (node->requires_grad) node->accumulate(g);
}

inline void require_rank(const Shape& s, Index rank, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + s.str());
  }
}

struct ConvGeometry {
  Index channels, in_h, in_w, kernel, stride, padding, out_h, out_w;
  [[nodiscard]] Index patch() const { return channels * kernel * kernel; }
  [[nodiscard]] Index pixels() const { return out_h * out_w; }
  [[nodiscard]] bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

// Output columns [lo, hi) whose input column ow * stride - padding + kj is in range.
inline std::pair<Index, Index> valid_columns(const ConvGeometry& g, Index kj) {
  const Index offset = kj - g.padding;
  const Index lo = offset >= 0 ? 0 : (-offset + g.stride - 1) / g.stride;
  const Index last = g.in_w - 1 - offset;
  const Index hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
  return {std::min(lo, hi), hi};
}

template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, RowMatrix<Scalar>& col) {
  col.resize(g.patch(), g.pixels());
  const Index k = g.kernel;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* dst = col.data() + ((c * k + ki) * k + kj) * g.pixels();
        const auto [lo, hi] = valid_columns(g, kj);
        const Index offset = kj - g.padding;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          Scalar* row = dst + oh * g.out_w;
          const Index ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(row, row + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.in_h + ih) * g.in_w + offset;
          std::fill(row, row + lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (Index ow = lo; ow < hi; ++ow) row[ow] = src[ow * g.stride];
          }
          std::fill(row + hi, row + g.out_w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& col, const ConvGeometry& g, Scalar* image) {
  const Index k = g.kernel;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* src = col.data() + ((c * k + ki) * k + kj) * g.pixels();
        const auto [lo, hi] = valid_columns(g, kj);
        const Index offset = kj - g.padding;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          const Scalar* row = src + oh * g.out_w;
          Scalar* dst = image + (c * g.in_h + ih) * g.in_w + offset;
          if (g.stride == 1) {
            for (Index ow = lo; ow < hi; ++ow) dst[ow] += row[ow];
          } else {
            for (Index ow = lo; ow < hi; ++ow) dst[ow * g.stride] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution with square kernel and zero padding. weight is
/// [C_out, C_in, k, k]; bias is [C_out] or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Index stride,
                   Index padding) {
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs[1] != ws[1]) throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " + std::to_string(ws[1]));
  const Index n_batch = xs[0];
  const Index c_out = ws[0];
  detail::ConvGeometry g{xs[1], xs[2], xs[3], ws[2], stride, padding, 0, 0};
  g.out_h = (g.in_h + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: input " + xs.str() + " too small for kernel");

  const bool record =
      grad_mode_enabled() && (x.requires_grad() || weight.requires_grad() || (bias.defined() && bias.requires_grad()));
  Eigen::Map<const RowMatrix<Scalar>> w_mat(weight.value().data(), c_out, g.patch());

  Tensor<Scalar> out(Shape{n_batch, c_out, g.out_h, g.out_w});
  auto cols = std::make_shared<std::vector<RowMatrix<Scalar>>>();
  if (record && !g.pointwise()) cols->resize(static_cast<std::size_t>(n_batch));
  RowMatrix<Scalar> scratch;
  for (Index n = 0; n < n_batch; ++n) {
    auto out_n = out.sample(n);
    if (g.pointwise()) {
      out_n.noalias() = w_mat * x.value().sample(n);
    } else {
      RowMatrix<Scalar>& col = record ? (*cols)[static_cast<std::size_t>(n)] : scratch;
      detail::im2col(x.value().data() + n * g.channels * g.in_h * g.in_w, g, col);
      out_n.noalias() = w_mat * col;
    }
    if (bias.defined()) {
      out_n.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), c_out);
    }
  }

  std::vector<Var<Scalar>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return Var<Scalar>::from_op(
      std::move(out), std::move(inputs), [xn, wn, bn, cols, g, n_batch, c_out](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
        Eigen::Map<const RowMatrix<Scalar>> w_mat(wn->value.data(), c_out, g.patch());
        RowMatrix<Scalar> dw;
        if (wn->requires_grad) dw = RowMatrix<Scalar>::Zero(c_out, g.patch());
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> db;
        if (bn && bn->requires_grad) db = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(c_out);
        Tensor<Scalar> dx;
        if (xn->requires_grad) dx = Tensor<Scalar>::zeros_like(xn->value);
        RowMatrix<Scalar> dcol;
        for (Index n = 0; n < n_batch; ++n) {
          const auto g_n = grad.sample(n);
          if (wn->requires_grad) {
            if (g.pointwise()) {
              dw.noalias() += g_n * xn->value.sample(n).transpose();
            } else {
              dw.noalias() += g_n * (*cols)[static_cast<std::size_t>(n)].transpose();
            }
          }
          if (bn && bn->requires_grad) db += g_n.rowwise().sum();
          if (xn->requires_grad) {
            if (g.pointwise()) {
              dx.sample(n).noalias() += w_mat.transpose() * g_n;
            } else {
              dcol.noalias() = w_mat.transpose() * g_n;
              detail::col2im(dcol, g, dx.data() + n * g.channels * g.in_h * g.in_w);
            }
          }
        }
        if (wn->requires_grad) wn->accumulate(Tensor<Scalar>(wn->value.shape(), Eigen::Map<ArrayX<Scalar>>(dw.data(), dw.size())));
        if (bn && bn->requires_grad) bn->accumulate(Tensor<Scalar>(bn->value.shape(), db.array()));
        if (xn->requires_grad) xn->accumulate(dx);
      });
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x) {
  detail::require_rank(x.shape(), 4, "upsample2x");
  const Shape& s = x.shape();
  Tensor<Scalar> out(Shape{s[0], s[1], 2 * s[2], 2 * s[3]});
  for (Index n = 0; n < s[0]; ++n) {
    for (Index c = 0; c < s[1]; ++c) {
      const auto in = x.value().plane(n, c);
      auto o = out.plane(n, c);
      for (Index h = 0; h < s[2]; ++h) {
        for (Index w = 0; w < s[3]; ++w) {
          const Scalar v = in(h, w);
          o(2 * h, 2 * w) = v;
          o(2 * h, 2 * w + 1) = v;
          o(2 * h + 1, 2 * w) = v;
          o(2 * h + 1, 2 * w + 1) = v;
        }
      }
    }
  }
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    const Shape& s = xn->value.shape();
    Tensor<Scalar> dx(s);
    for (Index n = 0; n < s[0]; ++n) {
      for (Index c = 0; c < s[1]; ++c) {
        const auto g = grad.plane(n, c);
        auto d = dx.plane(n, c);
        for (Index h = 0; h < s[2]; ++h) {
          for (Index w = 0; w < s[3]; ++w) {
            d(h, w) = g(2 * h, 2 * w) + g(2 * h, 2 * w + 1) + g(2 * h + 1, 2 * w) + g(2 * h + 1, 2 * w + 1);
          }
        }
      }
    }
    xn->accumulate(dx);
  });
}

/// Per-sample, per-channel normalisation over the spatial plane (no affine).
template <typename Scalar>
Var<Scalar> instance_norm(const Var<Scalar>& x, Scalar eps = Scalar(1e-5)) {
  detail::require_rank(x.shape(), 4, "instance_norm");
  const Shape& s = x.shape();
  const Index planes = s[0] * s[1];
  const Index area = s[2] * s[3];
  Tensor<Scalar> out(s);
  auto inv_std = std::make_shared<ArrayX<Scalar>>(planes);
  for (Index p = 0; p < planes; ++p) {
    const auto in = x.value().array().segment(p * area, area);
    const Scalar mean = in.mean();
    const Scalar var = (in - mean).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[p] = inv;
    out.array().segment(p * area, area) = (in - mean) * inv;
  }
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x},
                              [xn, inv_std, planes, area](const Tensor<Scalar>& grad, const Tensor<Scalar>& y) {
                                Tensor<Scalar> dx(xn->value.shape());
                                for (Index p = 0; p < planes; ++p) {
                                  const auto g = grad.array().segment(p * area, area);
                                  const auto yp = y.array().segment(p * area, area);
                                  const Scalar mean_g = g.mean();
                                  const Scalar mean_gy = (g * yp).mean();
                                  dx.array().segment(p * area, area) = (*inv_std)[p] * (g - mean_g - yp * mean_gy);
                                }
                                xn->accumulate(dx);
                              });
}

/// y[n,c] = gamma[n,c] * x[n,c] + beta[n,c]; the modulation half of AdaIN.
template <typename Scalar>
Var<Scalar> channel_affine(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta) {
  detail::require_rank(x.shape(), 4, "channel_affine");
  const Shape& s = x.shape();
  if (gamma.shape() != Shape{s[0], s[1]} || beta.shape() != Shape{s[0], s[1]}) {
    throw ShapeError("channel_affine: modulation must be [N, C] for input " + s.str());
  }
  const Index area = s[2] * s[3];
  Tensor<Scalar> out(s);
  for (Index p = 0; p < s[0] * s[1]; ++p) {
    out.array().segment(p * area, area) = gamma.value()[p] * x.value().array().segment(p * area, area) + beta.value()[p];
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return Var<Scalar>::from_op(std::move(out), {x, gamma, beta},
                              [xn, gn, bn, area](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                const Index planes = gn->value.size();
                                Tensor<Scalar> dx;
                                if (xn->requires_grad) dx = Tensor<Scalar>(xn->value.shape());
                                Tensor<Scalar> dg(gn->value.shape());
                                Tensor<Scalar> dbeta(bn->value.shape());
                                for (Index p = 0; p < planes; ++p) {
                                  const auto g = grad.array().segment(p * area, area);
                                  if (xn->requires_grad) dx.array().segment(p * area, area) = gn->value[p] * g;
                                  dg[p] = (g * xn->value.array().segment(p * area, area)).sum();
                                  dbeta[p] = g.sum();
                                }
                                if (xn->requires_grad) xn->accumulate(dx);
                                detail::accumulate(gn, dg);
                                detail::accumulate(bn, dbeta);
                              });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().max(Scalar(0)).eval());
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn](const Tensor<Scalar>& grad, const Tensor<Scalar>& y) {
    xn->accumulate_expr((y.array() > Scalar(0)).select(grad.array(), Scalar(0)));
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(0.2)) {
  const auto& a = x.value().array();
  Tensor<Scalar> out(x.shape(), (a > Scalar(0)).select(a, slope * a).eval());
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn, slope](const Tensor<Scalar>& grad, const Tensor<Scalar>& y) {
    xn->accumulate_expr((y.array() > Scalar(0)).select(grad.array(), slope * grad.array()));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), (Scalar(1) / (Scalar(1) + (-x.value().array()).exp())).eval());
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn](const Tensor<Scalar>& grad, const Tensor<Scalar>& y) {
    xn->accumulate_expr(grad.array() * y.array() * (Scalar(1) - y.array()));
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<Scalar> out(a.shape(), (a.value().array() + b.value().array()).eval());
  auto an = a.node();
  auto bn = b.node();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [an, bn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    detail::accumulate(an, grad);
    detail::accumulate(bn, grad);
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), (a.value().array() * factor).eval());
  auto an = a.node();
  return Var<Scalar>::from_op(std::move(out), {a}, [an, factor](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    an->accumulate_expr(grad.array() * factor);
  });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar factor, const Var<Scalar>& a) {
  return scale(a, factor);
}

/// Adds a constant tensor-wide offset.
template <typename Scalar>
Var<Scalar> shift(const Var<Scalar>& a, Scalar offset) {
  Tensor<Scalar> out(a.shape(), (a.value().array() + offset).eval());
  auto an = a.node();
  return Var<Scalar>::from_op(std::move(out), {a}, [an](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    an->accumulate(grad);
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  const Index area = sa[2] * sa[3];
  const Index ca = sa[1] * area;
  const Index cb = sb[1] * area;
  Tensor<Scalar> out(Shape{sa[0], sa[1] + sb[1], sa[2], sa[3]});
  for (Index n = 0; n < sa[0]; ++n) {
    out.array().segment(n * (ca + cb), ca) = a.value().array().segment(n * ca, ca);
    out.array().segment(n * (ca + cb) + ca, cb) = b.value().array().segment(n * cb, cb);
  }
  auto an = a.node();
  auto bn = b.node();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [an, bn, ca, cb](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    const Index batch = grad.dim(0);
    if (an->requires_grad) {
      Tensor<Scalar> da(an->value.shape());
      for (Index n = 0; n < batch; ++n) da.array().segment(n * ca, ca) = grad.array().segment(n * (ca + cb), ca);
      an->accumulate(da);
    }
    if (bn->requires_grad) {
      Tensor<Scalar> db(bn->value.shape());
      for (Index n = 0; n < batch; ++n) db.array().segment(n * cb, cb) = grad.array().segment(n * (ca + cb) + ca, cb);
      bn->accumulate(db);
    }
  });
}

/// [N, C, H, W] -> [N, C] spatial mean.
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const Shape& s = x.shape();
  const Index area = s[2] * s[3];
  Tensor<Scalar> out(Shape{s[0], s[1]});
  for (Index p = 0; p < s[0] * s[1]; ++p) out[p] = x.value().array().segment(p * area, area).mean();
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn, area](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    Tensor<Scalar> dx(xn->value.shape());
    for (Index p = 0; p < grad.size(); ++p) dx.array().segment(p * area, area).setConstant(grad[p] / Scalar(area));
    xn->accumulate(dx);
  });
}

/// x [N, in] times weight [out, in] transposed, plus bias [out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  detail::require_rank(x.shape(), 2, "linear input");
  detail::require_rank(weight.shape(), 2, "linear weight");
  const Index n = x.shape()[0];
  const Index in = x.shape()[1];
  const Index out_f = weight.shape()[0];
  if (weight.shape()[1] != in) throw ShapeError("linear: input " + x.shape().str() + " vs weight " + weight.shape().str());
  using Map = Eigen::Map<const RowMatrix<Scalar>>;
  Tensor<Scalar> out(Shape{n, out_f});
  Eigen::Map<RowMatrix<Scalar>> o(out.data(), n, out_f);
  o.noalias() = Map(x.value().data(), n, in) * Map(weight.value().data(), out_f, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.value().data(), out_f);
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return Var<Scalar>::from_op(std::move(out), {x, weight, bias},
                              [xn, wn, bn, n, in, out_f](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                Map g(grad.data(), n, out_f);
                                if (xn->requires_grad) {
                                  Tensor<Scalar> dx(xn->value.shape());
                                  Eigen::Map<RowMatrix<Scalar>>(dx.data(), n, in).noalias() =
                                      g * Map(wn->value.data(), out_f, in);
                                  xn->accumulate(dx);
                                }
                                if (wn->requires_grad) {
                                  Tensor<Scalar> dw(wn->value.shape());
                                  Eigen::Map<RowMatrix<Scalar>>(dw.data(), out_f, in).noalias() =
                                      g.transpose() * Map(xn->value.data(), n, in);
                                  wn->accumulate(dw);
                                }
                                if (bn->requires_grad) {
                                  Tensor<Scalar> db(bn->value.shape());
                                  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(db.data(), out_f) = g.colwise().sum();
                                  bn->accumulate(db);
                                }
                              });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  if (shape.numel() != x.value().size()) throw ShapeError("reshape: " + x.shape().str() + " -> " + shape.str());
  auto xn = x.node();
  return Var<Scalar>::from_op(x.value().reshaped(std::move(shape)), {x},
                              [xn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                xn->accumulate(grad.reshaped(xn->value.shape()));
                              });
}

/// Softmax over the channel axis of [N, K, H, W].
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  detail::require_rank(logits.shape(), 4, "softmax_channels");
  const Shape& s = logits.shape();
  Tensor<Scalar> out(s);
  for (Index n = 0; n < s[0]; ++n) {
    const auto in = logits.sample(n);
    auto o = out.sample(n);
    const auto max = in.colwise().maxCoeff();
    o = (in.rowwise() - max).array().exp().matrix();
    const auto total = o.colwise().sum().eval();
    o.array().rowwise() /= total.array();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& logits) {
  auto xn = logits.node();
  return Var<Scalar>::from_op(softmax_channels(logits.value()), {logits},
                              [xn](const Tensor<Scalar>& grad, const Tensor<Scalar>& p) {
                                Tensor<Scalar> dx(p.shape());
                                for (Index n = 0; n < p.dim(0); ++n) {
                                  const auto pn = p.sample(n).array();
                                  const auto gn = grad.sample(n).array();
                                  const auto dot = (pn * gn).colwise().sum().eval();
                                  dx.sample(n).array() = pn * (gn.rowwise() - dot);
                                }
                                xn->accumulate(dx);
                              });
}

/// Columns [offset, offset + count) of a [N, F] tensor.
template <typename Scalar>
Var<Scalar> slice_columns(const Var<Scalar>& x, Index offset, Index count) {
  detail::require_rank(x.shape(), 2, "slice_columns");
  const Index n = x.shape()[0];
  const Index f = x.shape()[1];
  if (offset < 0 || offset + count > f) throw ShapeError("slice_columns: range outside " + x.shape().str());
  Tensor<Scalar> out(Shape{n, count});
  Eigen::Map<RowMatrix<Scalar>>(out.data(), n, count) =
      Eigen::Map<const RowMatrix<Scalar>>(x.value().data(), n, f).middleCols(offset, count);
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn, n, f, offset, count](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    Tensor<Scalar> dx(xn->value.shape());
    Eigen::Map<RowMatrix<Scalar>>(dx.data(), n, f).middleCols(offset, count) =
        Eigen::Map<const RowMatrix<Scalar>>(grad.data(), n, count);
    xn->accumulate(dx);
  });
}

/// Mean of all elements, as a [1] tensor.
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Index count = x.value().size();
  Tensor<Scalar> out(Shape{1}, x.value().array().mean());
  auto xn = x.node();
  return Var<Scalar>::from_op(std::move(out), {x}, [xn, count](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
    xn->accumulate(Tensor<Scalar>(xn->value.shape(), grad[0] / Scalar(count)));
  });
}

}  // namespace dcda::ops

#endif  // DCDA_OPS_HPP
