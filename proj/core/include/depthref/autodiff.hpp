#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

/// Minimal reverse-mode automatic differentiation over dense NCHW tensors.
namespace depthref::ad {

/// Raised when a forward op produces NaN or infinity, or shapes do not fit.
class AutodiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense tensor of rank <= 4 stored as 64-bit reals, row-major
/// (batch x channel x height x width for rank 4).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element (n, c, y, x) of a rank-4 tensor.
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
};

/// Records primitive ops in execution order (hence topological order) and
/// replays them backwards. A tape is single-writer; separate tapes are
/// independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is reported in slot `slot` by backward().
  Var parameter(std::size_t slot, Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var leaky_relu(Var a, double slope);
  /// x: N x Ci x H x W, weight: Co x Ci x Kh x Kw, optional bias: Co.
  /// Output spatial size floor((H + 2 pad - Kh) / stride) + 1, zero padding.
  Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t pad);
  /// Nearest-neighbour x2 upsampling, cropped to out_h x out_w where
  /// ceil(out_h / 2) == H and ceil(out_w / 2) == W.
  Var upsample2x(Var x, std::size_t out_h, std::size_t out_w);
  /// Channel concatenation of two rank-4 tensors with equal N, H, W.
  Var concat_channels(Var a, Var b);
  /// Sum of |x| over mask-true elements divided by their count (0 if none).
  /// Mask has one entry per element of x.
  Var mean_abs(Var x, std::vector<std::uint8_t> mask);

  /// Gradients of the scalar `loss` for parameter slots [0, slot_count).
  /// Slots not reached from loss get zeros shaped like their parameter
  /// (or an empty tensor when the slot was never registered).
  std::vector<Tensor> backward(Var loss, std::size_t slot_count);

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    // Receives this node's upstream gradient; accumulates into input gradients.
    std::function<void(const Tensor& grad, std::vector<Tensor*>& input_grads)> backward;
    int param_slot = -1;
    bool needs_grad = false;
  };

  Var push(Tensor value, std::vector<int> inputs,
           std::function<void(const Tensor&, std::vector<Tensor*>&)> backward);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

using GraphFn = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares tape gradients with central finite differences of step h for
/// every parameter coordinate. Relative error uses max(|a|, |b|, 1e-8) as the
/// denominator. Throws std::invalid_argument if h <= 0.
GradCheckResult grad_check(const GraphFn& graph, std::vector<Tensor> params, double h);

}  // namespace depthref::ad
