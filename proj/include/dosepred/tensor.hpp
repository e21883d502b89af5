#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dosepred {

using Shape = std::vector<int>;

/// Dense row-major 64-bit float array with optional gradient buffer.
/// Copies are shallow: data and grad are shared, so a Tensor captured by a
/// tape node sees parameter updates and accumulates into the caller's grad.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::int64_t size() const;
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }
  double value() const;  // scalar tensors only

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  /// Handles are shallow, so grad access is const on the handle: tape nodes
  /// hold copies yet still accumulate into the caller's buffer.
  std::vector<double>& grad() const;
  bool has_grad() const { return grad_ != nullptr; }
  void zero_grad();

  bool defined() const { return data_ != nullptr; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

/// Define-by-run record of primitive ops. Rebuilt per forward pass; replaying
/// the nodes in reverse order propagates gradients to every requires_grad
/// leaf below the loss. Single-threaded; independent tapes may live on
/// separate threads.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  void backward(Tensor& loss);
  void clear();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// ---- primitive ops ---------------------------------------------------------
// All ops validate shapes, reject non-finite outputs, and record their
// backward on the tape when any input requires grad.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor add_scalar(Tape& tape, const Tensor& a, double c);
Tensor sum(Tape& tape, const Tensor& a);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor softmax_rows(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor softplus(Tape& tape, const Tensor& x);
Tensor tanh_op(Tape& tape, const Tensor& x);

/// x: [..., C]; out[..., c] = scale[c] * x[..., c] + bias[c].
/// This is a depthwise 1x1x1 convolution over channel-last tokens.
Tensor per_channel_affine(Tape& tape, const Tensor& x, const Tensor& scale,
                          const Tensor& bias);

/// x: [tokens, C]; per-token standardization then per-channel affine.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

/// x: [C, H, W, D]; extents must divide by k. k == 1 is the identity.
Tensor avg_pool3d(Tape& tape, const Tensor& x, int k);
/// x: [C, h, w, d] -> [C, h*k, w*k, d*k] by voxel replication.
Tensor upsample_nearest3d(Tape& tape, const Tensor& x, int k);

/// [C, h, w, d] -> [h*w*d, C]; token index is the row-major spatial index.
Tensor tokens_from_volume(Tape& tape, const Tensor& x);
Tensor volume_from_tokens(Tape& tape, const Tensor& x, int h, int w, int d);

/// Same data, new extents; product of extents must match.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

/// Column-wise concat of [P, C_i] blocks; slice is its inverse.
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_cols(Tape& tape, const Tensor& x, int c0, int c1);

/// Channel concat of [C_i, H, W, D] volumes sharing spatial extents.
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);

/// x: [Cin, H, W, D]; w: [Cout, Cin, 3, 3, 3]; b: [Cout]; padding 1.
Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride);

/// out[t] = (1/sum(mask)) * sum_v mask[v] * sigmoid(beta * (d[v] - edges[t])).
/// mask and edges are constants; gradient flows to d only.
Tensor soft_dvh_op(Tape& tape, const Tensor& d, const Tensor& mask,
                   const std::vector<double>& edges, double beta);

// ---- helpers ---------------------------------------------------------------

std::int64_t shape_numel(const Shape& s);
void check_finite(const Tensor& t, const char* op);

}  // namespace dosepred
