#include "depthref/autodiff.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace depthref::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void check_rank(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw AutodiffError(fmt::format("tensor rank must be 1..4, got {}", shape.size()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw AutodiffError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()),
                                    shape_string(b.shape())));
  }
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw AutodiffError(fmt::format("{}: expected rank-4 tensor, got {}", op, shape_string(t.shape())));
  }
}

// Output rows per im2col tile; keeps the column buffer a few MB at most.
constexpr std::size_t kTileColumns = 512;

struct ConvGeometry {
  std::size_t n, ci, h, w, co, kh, kw, stride, pad, ho, wo;

  std::size_t patch() const { return ci * kh * kw; }
};

// Column block for output rows [row0, row0 + rows): col(k, j) with k over
// (ci, ky, kx) and j over (row, x) of the output.
void im2col(const double* x, const ConvGeometry& g, std::size_t row0, std::size_t rows,
            RowMatrix& col) {
  const std::size_t cols = rows * g.wo;
  col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(cols));
  for (std::size_t c = 0; c < g.ci; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* dst = col.data() + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.pad);
          double* out = dst + r * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            out[ox] = (ix >= 0 && ix < static_cast<long>(g.w)) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& col, const ConvGeometry& g, std::size_t row0, std::size_t rows,
                double* dx) {
  const std::size_t cols = rows * g.wo;
  for (std::size_t c = 0; c < g.ci; ++c) {
    double* plane = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* src = col.data() + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* in = src + r * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

std::size_t tile_rows(const ConvGeometry& g) {
  return std::max<std::size_t>(1, std::min(g.ho, kTileColumns / std::max<std::size_t>(1, g.wo)));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  if (data_.size() != product(shape_)) {
    throw AutodiffError(fmt::format("tensor data length {} does not match shape {}", data_.size(),
                                    shape_string(shape_)));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw AutodiffError("variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Tensor value, std::vector<int> inputs,
               std::function<void(const Tensor&, std::vector<Tensor*>&)> backward) {
  if (!value.all_finite()) throw AutodiffError("forward op produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](int id) {
    return nodes_[static_cast<std::size_t>(id)].needs_grad;
  });
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw AutodiffError("constant contains a non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(std::size_t slot, Tensor value) {
  if (!value.all_finite()) throw AutodiffError("parameter contains a non-finite value");
  Node n;
  n.value = std::move(value);
  n.param_slot = static_cast<int>(slot);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_same_shape(va, vb, "add");
  Tensor out = va;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  return push(std::move(out), {a.id, b.id}, [](const Tensor& g, std::vector<Tensor*>& in) {
    for (Tensor* t : in) {
      if (!t) continue;
      for (std::size_t i = 0; i < g.numel(); ++i) (*t)[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_same_shape(va, vb, "sub");
  Tensor out = va;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
  return push(std::move(out), {a.id, b.id}, [](const Tensor& g, std::vector<Tensor*>& in) {
    if (in[0]) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i];
    }
    if (in[1]) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*in[1])[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_same_shape(va, vb, "mul");
  Tensor out = va;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
  return push(std::move(out), {a.id, b.id},
              [this, a, b](const Tensor& g, std::vector<Tensor*>& in) {
                const Tensor& xa = nodes_[static_cast<std::size_t>(a.id)].value;
                const Tensor& xb = nodes_[static_cast<std::size_t>(b.id)].value;
                if (in[0]) {
                  for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i] * xb[i];
                }
                if (in[1]) {
                  for (std::size_t i = 0; i < g.numel(); ++i) (*in[1])[i] += g[i] * xa[i];
                }
              });
}

Var Tape::scale(Var a, double s) {
  Tensor out = node(a).value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return push(std::move(out), {a.id}, [s](const Tensor& g, std::vector<Tensor*>& in) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += s * g[i];
  });
}

Var Tape::leaky_relu(Var a, double slope) {
  Tensor out = node(a).value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!(out[i] > 0.0)) out[i] *= slope;
  }
  return push(std::move(out), {a.id},
              [this, a, slope](const Tensor& g, std::vector<Tensor*>& in) {
                const Tensor& x = nodes_[static_cast<std::size_t>(a.id)].value;
                for (std::size_t i = 0; i < g.numel(); ++i) {
                  (*in[0])[i] += x[i] > 0.0 ? g[i] : slope * g[i];
                }
              });
}

Var Tape::conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t pad) {
  const Tensor& vx = node(x).value;
  const Tensor& vw = node(weight).value;
  require_rank4(vx, "conv2d input");
  require_rank4(vw, "conv2d weight");
  if (stride == 0) throw AutodiffError("conv2d: stride must be positive");
  ConvGeometry g{vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3), vw.dim(0), vw.dim(2), vw.dim(3),
                 stride,    pad,       0,         0};
  if (vw.dim(1) != g.ci) {
    throw AutodiffError(fmt::format("conv2d: input has {} channels, weight expects {}", g.ci,
                                    vw.dim(1)));
  }
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw AutodiffError("conv2d: kernel larger than padded input");
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (bias) {
    const Tensor& vb = node(*bias).value;
    if (vb.numel() != g.co) throw AutodiffError("conv2d: bias length must equal output channels");
  }

  Tensor out({g.n, g.co, g.ho, g.wo});
  const ConstMatrixMap wmat(vw.data().data(), static_cast<Eigen::Index>(g.co),
                            static_cast<Eigen::Index>(g.patch()));
  const std::size_t rows_per_tile = tile_rows(g);
  RowMatrix col;
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xin = vx.data().data() + n * g.ci * g.h * g.w;
    double* yout = out.data().data() + n * g.co * g.ho * g.wo;
    for (std::size_t row0 = 0; row0 < g.ho; row0 += rows_per_tile) {
      const std::size_t rows = std::min(rows_per_tile, g.ho - row0);
      im2col(xin, g, row0, rows, col);
      // Output block: one row per channel, channel planes ho*wo apart.
      StridedMap tile(yout + row0 * g.wo, static_cast<Eigen::Index>(g.co),
                      static_cast<Eigen::Index>(rows * g.wo),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(g.ho * g.wo)));
      tile.noalias() = wmat * col;
    }
    if (bias) {
      const Tensor& vb = node(*bias).value;
      for (std::size_t c = 0; c < g.co; ++c) {
        double* plane = yout + c * g.ho * g.wo;
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) plane[i] += vb[c];
      }
    }
  }

  std::vector<int> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  return push(std::move(out), std::move(inputs),
              [this, x, weight, g](const Tensor& grad, std::vector<Tensor*>& in) {
                const Tensor& vx = nodes_[static_cast<std::size_t>(x.id)].value;
                const Tensor& vw = nodes_[static_cast<std::size_t>(weight.id)].value;
                const ConstMatrixMap wmat(vw.data().data(), static_cast<Eigen::Index>(g.co),
                                          static_cast<Eigen::Index>(g.patch()));
                const std::size_t rows_per_tile = tile_rows(g);
                RowMatrix col;
                RowMatrix dw = RowMatrix::Zero(static_cast<Eigen::Index>(g.co),
                                               static_cast<Eigen::Index>(g.patch()));
                for (std::size_t n = 0; n < g.n; ++n) {
                  const double* xin = vx.data().data() + n * g.ci * g.h * g.w;
                  const double* gout = grad.data().data() + n * g.co * g.ho * g.wo;
                  for (std::size_t row0 = 0; row0 < g.ho; row0 += rows_per_tile) {
                    const std::size_t rows = std::min(rows_per_tile, g.ho - row0);
                    const ConstStridedMap gtile(
                        gout + row0 * g.wo, static_cast<Eigen::Index>(g.co),
                        static_cast<Eigen::Index>(rows * g.wo),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(g.ho * g.wo)));
                    if (in[1]) {
                      im2col(xin, g, row0, rows, col);
                      dw.noalias() += gtile * col.transpose();
                    }
                    if (in[0]) {
                      col.noalias() = wmat.transpose() * gtile;
                      col2im_add(col, g, row0, rows, in[0]->data().data() + n * g.ci * g.h * g.w);
                    }
                  }
                  if (in.size() > 2 && in[2]) {
                    for (std::size_t c = 0; c < g.co; ++c) {
                      double s = 0.0;
                      const double* plane = gout + c * g.ho * g.wo;
                      for (std::size_t i = 0; i < g.ho * g.wo; ++i) s += plane[i];
                      (*in[2])[c] += s;
                    }
                  }
                }
                if (in[1]) {
                  for (std::size_t i = 0; i < in[1]->numel(); ++i) (*in[1])[i] += dw.data()[i];
                }
              });
}

Var Tape::upsample2x(Var x, std::size_t out_h, std::size_t out_w) {
  const Tensor& vx = node(x).value;
  require_rank4(vx, "upsample2x");
  const std::size_t n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  if ((out_h + 1) / 2 != h || (out_w + 1) / 2 != w) {
    throw AutodiffError(fmt::format("upsample2x: cannot map {}x{} onto {}x{}", h, w, out_h, out_w));
  }
  Tensor out({n, c, out_h, out_w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t xx = 0; xx < out_w; ++xx) out.at(b, k, y, xx) = vx.at(b, k, y / 2, xx / 2);

  return push(std::move(out), {x.id}, [n, c, out_h, out_w](const Tensor& g, std::vector<Tensor*>& in) {
    Tensor& dx = *in[0];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < out_h; ++y)
          for (std::size_t xx = 0; xx < out_w; ++xx) dx.at(b, k, y / 2, xx / 2) += g.at(b, k, y, xx);
  });
}

Var Tape::concat_channels(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_rank4(va, "concat_channels");
  require_rank4(vb, "concat_channels");
  if (va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) || va.dim(3) != vb.dim(3)) {
    throw AutodiffError(fmt::format("concat_channels: incompatible shapes {} and {}",
                                    shape_string(va.shape()), shape_string(vb.shape())));
  }
  const std::size_t n = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
  const std::size_t plane = va.dim(2) * va.dim(3);
  Tensor out({n, ca + cb, va.dim(2), va.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(va.data().data() + s * ca * plane, ca * plane,
                out.data().data() + s * (ca + cb) * plane);
    std::copy_n(vb.data().data() + s * cb * plane, cb * plane,
                out.data().data() + (s * (ca + cb) + ca) * plane);
  }
  return push(std::move(out), {a.id, b.id}, [n, ca, cb, plane](const Tensor& g, std::vector<Tensor*>& in) {
    for (std::size_t s = 0; s < n; ++s) {
      const double* src = g.data().data() + s * (ca + cb) * plane;
      if (in[0]) {
        double* dst = in[0]->data().data() + s * ca * plane;
        for (std::size_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
      }
      if (in[1]) {
        double* dst = in[1]->data().data() + s * cb * plane;
        for (std::size_t i = 0; i < cb * plane; ++i) dst[i] += src[ca * plane + i];
      }
    }
  });
}

Var Tape::mean_abs(Var x, std::vector<std::uint8_t> mask) {
  const Tensor& vx = node(x).value;
  if (mask.size() != vx.numel()) {
    throw AutodiffError(fmt::format("mean_abs: mask has {} entries for {} elements", mask.size(),
                                    vx.numel()));
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < vx.numel(); ++i) {
    if (!mask[i]) continue;
    sum += std::abs(vx[i]);
    ++count;
  }
  const double value = count > 0 ? sum / static_cast<double>(count) : 0.0;
  return push(Tensor::scalar(value), {x.id},
              [this, x, mask = std::move(mask), count](const Tensor& g, std::vector<Tensor*>& in) {
                if (count == 0) return;
                const Tensor& v = nodes_[static_cast<std::size_t>(x.id)].value;
                const double scale = g[0] / static_cast<double>(count);
                for (std::size_t i = 0; i < v.numel(); ++i) {
                  if (!mask[i]) continue;
                  if (v[i] > 0.0) {
                    (*in[0])[i] += scale;
                  } else if (v[i] < 0.0) {
                    (*in[0])[i] -= scale;
                  }
                }
              });
}

std::vector<Tensor> Tape::backward(Var loss, std::size_t slot_count) {
  const Node& root = node(loss);
  if (root.value.numel() != 1) {
    throw AutodiffError(fmt::format("backward: loss must be scalar, got shape {}",
                                    shape_string(root.value.shape())));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id)] = Tensor(root.value.shape(), 1.0);

  for (std::size_t k = static_cast<std::size_t>(loss.id) + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward || !n.needs_grad || grads[k].numel() == 0) continue;
    std::vector<Tensor*> input_grads(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const auto id = static_cast<std::size_t>(n.inputs[j]);
      if (!nodes_[id].needs_grad) continue;
      if (grads[id].numel() == 0) grads[id] = Tensor(nodes_[id].value.shape(), 0.0);
      input_grads[j] = &grads[id];
    }
    n.backward(grads[k], input_grads);
  }

  std::vector<Tensor> out(slot_count);
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    if (n.param_slot < 0 || static_cast<std::size_t>(n.param_slot) >= slot_count) continue;
    Tensor& slot = out[static_cast<std::size_t>(n.param_slot)];
    if (slot.numel() == 0) slot = Tensor(n.value.shape(), 0.0);
    if (grads[k].numel() == 0) continue;
    for (std::size_t i = 0; i < slot.numel(); ++i) slot[i] += grads[k][i];
  }
  return out;
}

}  // namespace depthref::ad
