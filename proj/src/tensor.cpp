#include "dosepred/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace dosepred {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool needs_grad(const Tensor& t) { return t.requires_grad(); }

Tensor make_output(Shape shape, bool requires_grad) {
  Tensor out(std::move(shape), requires_grad);
  return out;
}

}  // namespace

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(
          static_cast<std::size_t>(shape_numel(shape_)), 0.0)),
      requires_grad_(requires_grad) {
  if (requires_grad_)
    grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))),
      requires_grad_(requires_grad) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_->size()))
    throw std::invalid_argument("tensor data length does not match shape");
  if (requires_grad_)
    grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::int64_t Tensor::size() const {
  return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() requires a scalar tensor");
  return (*data_)[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on && !grad_)
    grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

std::vector<double>& Tensor::grad() const {
  if (!grad_) throw std::logic_error("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward requires a scalar loss");
  if (!loss.has_grad())
    throw std::invalid_argument("backward requires a loss on the tape");
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::clear() { nodes_.clear(); }

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
}

// ---- elementwise -----------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor out = make_output(a.shape(), needs_grad(a) || needs_grad(b));
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor out = make_output(a.shape(), needs_grad(a) || needs_grad(b));
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = make_output(a.shape(), needs_grad(a) || needs_grad(b));
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          a.grad()[i] += g[i] * b.data()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          b.grad()[i] += g[i] * a.data()[i];
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), needs_grad(a));
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  check_finite(out, "scale");
  if (out.requires_grad()) {
    tape.record([a, out, c]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(Tape& tape, const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), needs_grad(a));
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  check_finite(out, "add_scalar");
  if (out.requires_grad()) {
    tape.record([a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out({1}, {s}, needs_grad(a));
  check_finite(out, "sum");
  if (out.requires_grad()) {
    tape.record([a, out]() mutable {
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < a.grad().size(); ++i) a.grad()[i] += g;
    });
  }
  return out;
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be matrices");
  require(a.dim(1) == b.dim(0), "matmul: inner extents differ");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_output({m, n}, needs_grad(a) || needs_grad(b));
  ConstMapMat A(a.data().data(), m, k), B(b.data().data(), k, n);
  MapMat C(out.data().data(), m, n);
  C.noalias() = A * B;
  check_finite(out, "matmul");
  if (out.requires_grad()) {
    tape.record([a, b, out, m, k, n]() mutable {
      ConstMapMat A(a.data().data(), m, k), B(b.data().data(), k, n);
      ConstMapMat G(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MapMat dA(a.grad().data(), m, k);
        dA.noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        MapMat dB(b.grad().data(), k, n);
        dB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require(a.ndim() == 2, "transpose: operand must be a matrix");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = make_output({n, m}, needs_grad(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(j) * m + i] =
          a.data()[static_cast<std::size_t>(i) * n + j];
  if (out.requires_grad()) {
    tape.record([a, out, m, n]() mutable {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          a.grad()[static_cast<std::size_t>(i) * n + j] +=
              out.grad()[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
  require(x.ndim() == 2, "softmax_rows: operand must be a matrix");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = make_output({m, n}, needs_grad(x));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  check_finite(out, "softmax_rows");
  if (out.requires_grad()) {
    tape.record([x, out, m, n]() mutable {
      for (int i = 0; i < m; ++i) {
        const double* y = out.data().data() + static_cast<std::size_t>(i) * n;
        const double* gy = out.grad().data() + static_cast<std::size_t>(i) * n;
        double* gx = x.grad().data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < n; ++j) gx[j] += (gy[j] - dot) * y[j];
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad(x));
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  check_finite(out, "sigmoid");
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      for (std::size_t i = 0; i < x.grad().size(); ++i) {
        const double s = out.data()[i];
        x.grad()[i] += out.grad()[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor softplus(Tape& tape, const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad(x));
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    // log(1 + e^v) without overflow for large |v|
    out.data()[i] = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  check_finite(out, "softplus");
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      for (std::size_t i = 0; i < x.grad().size(); ++i)
        x.grad()[i] += out.grad()[i] / (1.0 + std::exp(-x.data()[i]));
    });
  }
  return out;
}

Tensor tanh_op(Tape& tape, const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad(x));
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  check_finite(out, "tanh");
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      for (std::size_t i = 0; i < x.grad().size(); ++i) {
        const double t = out.data()[i];
        x.grad()[i] += out.grad()[i] * (1.0 - t * t);
      }
    });
  }
  return out;
}

// ---- channel affine and layer norm ----------------------------------------

Tensor per_channel_affine(Tape& tape, const Tensor& x, const Tensor& s,
                          const Tensor& b) {
  require(x.ndim() >= 1, "per_channel_affine: empty shape");
  const int c = x.dim(x.ndim() - 1);
  require(s.ndim() == 1 && s.dim(0) == c, "per_channel_affine: scale/channel mismatch");
  require(b.ndim() == 1 && b.dim(0) == c, "per_channel_affine: bias/channel mismatch");
  Tensor out =
      make_output(x.shape(), needs_grad(x) || needs_grad(s) || needs_grad(b));
  const std::size_t n = x.data().size();
  const std::size_t cc = static_cast<std::size_t>(c);
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = s.data()[i % cc] * x.data()[i] + b.data()[i % cc];
  check_finite(out, "per_channel_affine");
  if (out.requires_grad()) {
    tape.record([x, s, b, out, cc]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          x.grad()[i] += g[i] * s.data()[i % cc];
      if (s.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          s.grad()[i % cc] += g[i] * x.data()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i % cc] += g[i];
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  require(x.ndim() == 2, "layer_norm: operand must be [tokens, C]");
  const int p = x.dim(0), c = x.dim(1);
  require(gamma.ndim() == 1 && gamma.dim(0) == c, "layer_norm: gamma mismatch");
  require(beta.ndim() == 1 && beta.dim(0) == c, "layer_norm: beta mismatch");
  Tensor out = make_output(
      {p, c}, needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
  // saved for backward
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += row[j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - m) * (row[j] - m);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * c + j;
      (*xhat)[idx] = (row[j] - m) * is;
      out.data()[idx] = gamma.data()[static_cast<std::size_t>(j)] * (*xhat)[idx] +
                        beta.data()[static_cast<std::size_t>(j)];
    }
  }
  check_finite(out, "layer_norm");
  if (out.requires_grad()) {
    tape.record([x, gamma, beta, out, xhat, inv_std, p, c]() mutable {
      for (int i = 0; i < p; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        const double is = (*inv_std)[static_cast<std::size_t>(i)];
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < c; ++j) {
          const double dxh =
              out.grad()[base + j] * gamma.data()[static_cast<std::size_t>(j)];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * (*xhat)[base + j];
        }
        mean_dxhat /= c;
        mean_dxhat_xhat /= c;
        if (x.requires_grad()) {
          for (int j = 0; j < c; ++j) {
            const double dxh =
                out.grad()[base + j] * gamma.data()[static_cast<std::size_t>(j)];
            x.grad()[base + j] +=
                is * (dxh - mean_dxhat - (*xhat)[base + j] * mean_dxhat_xhat);
          }
        }
        if (gamma.requires_grad())
          for (int j = 0; j < c; ++j)
            gamma.grad()[static_cast<std::size_t>(j)] +=
                out.grad()[base + j] * (*xhat)[base + j];
        if (beta.requires_grad())
          for (int j = 0; j < c; ++j)
            beta.grad()[static_cast<std::size_t>(j)] += out.grad()[base + j];
      }
    });
  }
  return out;
}

// ---- volume ops ------------------------------------------------------------

Tensor avg_pool3d(Tape& tape, const Tensor& x, int k) {
  require(x.ndim() == 4, "avg_pool3d: operand must be [C, H, W, D]");
  require(k >= 1, "avg_pool3d: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  require(h % k == 0 && w % k == 0 && d % k == 0,
          "avg_pool3d: extents not divisible by pooling factor");
  const int oh = h / k, ow = w / k, od = d / k;
  Tensor out = make_output({c, oh, ow, od}, needs_grad(x));
  const double inv = 1.0 / (static_cast<double>(k) * k * k);
  auto in_idx = [=](int ci, int z, int y, int xx) {
    return ((static_cast<std::size_t>(ci) * h + z) * w + y) * d + xx;
  };
  auto out_idx = [=](int ci, int z, int y, int xx) {
    return ((static_cast<std::size_t>(ci) * oh + z) * ow + y) * od + xx;
  };
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < oh; ++z)
      for (int y = 0; y < ow; ++y)
        for (int xx = 0; xx < od; ++xx) {
          double s = 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
              for (int e = 0; e < k; ++e)
                s += x.data()[in_idx(ci, z * k + a, y * k + b, xx * k + e)];
          out.data()[out_idx(ci, z, y, xx)] = s * inv;
        }
  check_finite(out, "avg_pool3d");
  if (out.requires_grad()) {
    tape.record([x, out, c, h, w, d, oh, ow, od, k, inv, in_idx, out_idx]() mutable {
      for (int ci = 0; ci < c; ++ci)
        for (int z = 0; z < oh; ++z)
          for (int y = 0; y < ow; ++y)
            for (int xx = 0; xx < od; ++xx) {
              const double g = out.grad()[out_idx(ci, z, y, xx)] * inv;
              for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b)
                  for (int e = 0; e < k; ++e)
                    x.grad()[in_idx(ci, z * k + a, y * k + b, xx * k + e)] += g;
            }
    });
  }
  return out;
}

Tensor upsample_nearest3d(Tape& tape, const Tensor& x, int k) {
  require(x.ndim() == 4, "upsample_nearest3d: operand must be [C, h, w, d]");
  require(k >= 1, "upsample_nearest3d: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  const int oh = h * k, ow = w * k, od = d * k;
  Tensor out = make_output({c, oh, ow, od}, needs_grad(x));
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < oh; ++z)
      for (int y = 0; y < ow; ++y)
        for (int xx = 0; xx < od; ++xx)
          out.data()[((static_cast<std::size_t>(ci) * oh + z) * ow + y) * od + xx] =
              x.data()[((static_cast<std::size_t>(ci) * h + z / k) * w + y / k) * d +
                       xx / k];
  if (out.requires_grad()) {
    tape.record([x, out, c, h, w, d, oh, ow, od, k]() mutable {
      for (int ci = 0; ci < c; ++ci)
        for (int z = 0; z < oh; ++z)
          for (int y = 0; y < ow; ++y)
            for (int xx = 0; xx < od; ++xx)
              x.grad()[((static_cast<std::size_t>(ci) * h + z / k) * w + y / k) * d +
                       xx / k] +=
                  out.grad()[((static_cast<std::size_t>(ci) * oh + z) * ow + y) * od +
                             xx];
    });
  }
  return out;
}

Tensor tokens_from_volume(Tape& tape, const Tensor& x) {
  require(x.ndim() == 4, "tokens_from_volume: operand must be [C, h, w, d]");
  const int c = x.dim(0);
  const std::int64_t p = static_cast<std::int64_t>(x.dim(1)) * x.dim(2) * x.dim(3);
  Tensor out = make_output({static_cast<int>(p), c}, needs_grad(x));
  for (int ci = 0; ci < c; ++ci)
    for (std::int64_t v = 0; v < p; ++v)
      out.data()[static_cast<std::size_t>(v) * c + ci] =
          x.data()[static_cast<std::size_t>(ci) * p + v];
  if (out.requires_grad()) {
    tape.record([x, out, c, p]() mutable {
      for (int ci = 0; ci < c; ++ci)
        for (std::int64_t v = 0; v < p; ++v)
          x.grad()[static_cast<std::size_t>(ci) * p + v] +=
              out.grad()[static_cast<std::size_t>(v) * c + ci];
    });
  }
  return out;
}

Tensor volume_from_tokens(Tape& tape, const Tensor& x, int h, int w, int d) {
  require(x.ndim() == 2, "volume_from_tokens: operand must be [P, C]");
  const std::int64_t p = static_cast<std::int64_t>(h) * w * d;
  require(x.dim(0) == p, "volume_from_tokens: token count does not match grid");
  const int c = x.dim(1);
  Tensor out = make_output({c, h, w, d}, needs_grad(x));
  for (int ci = 0; ci < c; ++ci)
    for (std::int64_t v = 0; v < p; ++v)
      out.data()[static_cast<std::size_t>(ci) * p + v] =
          x.data()[static_cast<std::size_t>(v) * c + ci];
  if (out.requires_grad()) {
    tape.record([x, out, c, p]() mutable {
      for (int ci = 0; ci < c; ++ci)
        for (std::int64_t v = 0; v < p; ++v)
          x.grad()[static_cast<std::size_t>(v) * c + ci] +=
              out.grad()[static_cast<std::size_t>(ci) * p + v];
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.size(), "reshape: element count mismatch");
  Tensor out(std::move(shape), x.data(), needs_grad(x));
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      for (std::size_t i = 0; i < x.grad().size(); ++i)
        x.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const int p = parts[0].dim(0);
  int total = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    require(t.ndim() == 2 && t.dim(0) == p, "concat_cols: row mismatch");
    total += t.dim(1);
    rg = rg || t.requires_grad();
  }
  Tensor out = make_output({p, total}, rg);
  int off = 0;
  for (const Tensor& t : parts) {
    const int c = t.dim(1);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < c; ++j)
        out.data()[static_cast<std::size_t>(i) * total + off + j] =
            t.data()[static_cast<std::size_t>(i) * c + j];
    off += c;
  }
  if (out.requires_grad()) {
    tape.record([parts, out, p, total]() mutable {
      int off = 0;
      for (const Tensor& t : parts) {
        const int c = t.dim(1);
        if (t.requires_grad())
          for (int i = 0; i < p; ++i)
            for (int j = 0; j < c; ++j)
              t.grad()[static_cast<std::size_t>(i) * c + j] +=
                  out.grad()[static_cast<std::size_t>(i) * total + off + j];
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, int c0, int c1) {
  require(x.ndim() == 2, "slice_cols: operand must be a matrix");
  require(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: bad column range");
  const int p = x.dim(0), c = x.dim(1), w = c1 - c0;
  Tensor out = make_output({p, w}, needs_grad(x));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < w; ++j)
      out.data()[static_cast<std::size_t>(i) * w + j] =
          x.data()[static_cast<std::size_t>(i) * c + c0 + j];
  if (out.requires_grad()) {
    tape.record([x, out, p, c, w, c0]() mutable {
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < w; ++j)
          x.grad()[static_cast<std::size_t>(i) * c + c0 + j] +=
              out.grad()[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_channels: no operands");
  const int h = parts[0].dim(1), w = parts[0].dim(2), d = parts[0].dim(3);
  const std::size_t vox = static_cast<std::size_t>(h) * w * d;
  int total = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    require(t.ndim() == 4 && t.dim(1) == h && t.dim(2) == w && t.dim(3) == d,
            "concat_channels: spatial mismatch");
    total += t.dim(0);
    rg = rg || t.requires_grad();
  }
  Tensor out = make_output({total, h, w, d}, rg);
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
    off += t.data().size();
  }
  if (out.requires_grad()) {
    tape.record([parts, out]() mutable {
      std::size_t off = 0;
      for (const Tensor& t : parts) {
        if (t.requires_grad())
          for (std::size_t i = 0; i < t.grad().size(); ++i)
            t.grad()[i] += out.grad()[off + i];
        off += t.data().size();
      }
    });
  }
  return out;
}

// ---- 3x3x3 convolution -----------------------------------------------------

namespace {

// shared index helpers for conv3d forward/backward
struct ConvDims {
  int cin, h, w, d, cout, oh, ow, od, stride;
};

template <typename F>
void conv3d_loop(const ConvDims& dm, F&& body) {
  for (int co = 0; co < dm.cout; ++co)
    for (int ci = 0; ci < dm.cin; ++ci)
      for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            for (int oz = 0; oz < dm.oh; ++oz) {
              const int iz = oz * dm.stride + kz - 1;
              if (iz < 0 || iz >= dm.h) continue;
              for (int oy = 0; oy < dm.ow; ++oy) {
                const int iy = oy * dm.stride + ky - 1;
                if (iy < 0 || iy >= dm.w) continue;
                for (int ox = 0; ox < dm.od; ++ox) {
                  const int ix = ox * dm.stride + kx - 1;
                  if (ix < 0 || ix >= dm.d) continue;
                  const std::size_t ii =
                      ((static_cast<std::size_t>(ci) * dm.h + iz) * dm.w + iy) *
                          dm.d +
                      ix;
                  const std::size_t oi =
                      ((static_cast<std::size_t>(co) * dm.oh + oz) * dm.ow + oy) *
                          dm.od +
                      ox;
                  const std::size_t wi =
                      (((static_cast<std::size_t>(co) * dm.cin + ci) * 3 + kz) * 3 +
                       ky) *
                          3 +
                      kx;
                  body(ii, oi, wi);
                }
              }
            }
          }
}

}  // namespace

Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride) {
  require(x.ndim() == 4, "conv3d: input must be [Cin, H, W, D]");
  require(w.ndim() == 5 && w.dim(2) == 3 && w.dim(3) == 3 && w.dim(4) == 3,
          "conv3d: weight must be [Cout, Cin, 3, 3, 3]");
  require(w.dim(1) == x.dim(0), "conv3d: channel mismatch");
  require(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv3d: bias mismatch");
  require(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");
  ConvDims dm{x.dim(0), x.dim(1),          x.dim(2),          x.dim(3), w.dim(0),
              0,        0,                 0,                 stride};
  dm.oh = (dm.h + stride - 1) / stride;
  dm.ow = (dm.w + stride - 1) / stride;
  dm.od = (dm.d + stride - 1) / stride;
  Tensor out = make_output({dm.cout, dm.oh, dm.ow, dm.od},
                           needs_grad(x) || needs_grad(w) || needs_grad(b));
  const std::size_t ovox = static_cast<std::size_t>(dm.oh) * dm.ow * dm.od;
  for (int co = 0; co < dm.cout; ++co)
    std::fill_n(out.data().begin() + co * ovox, ovox,
                b.data()[static_cast<std::size_t>(co)]);
  {
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* od = out.data().data();
    conv3d_loop(dm, [&](std::size_t ii, std::size_t oi, std::size_t wi) {
      od[oi] += wd[wi] * xd[ii];
    });
  }
  check_finite(out, "conv3d");
  if (out.requires_grad()) {
    tape.record([x, w, b, out, dm, ovox]() mutable {
      const double* gout = out.grad().data();
      if (b.requires_grad()) {
        for (int co = 0; co < dm.cout; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < ovox; ++i) s += gout[co * ovox + i];
          b.grad()[static_cast<std::size_t>(co)] += s;
        }
      }
      const bool gx = x.requires_grad(), gw = w.requires_grad();
      if (gx || gw) {
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        double* xg = gx ? x.grad().data() : nullptr;
        double* wg = gw ? w.grad().data() : nullptr;
        conv3d_loop(dm, [&](std::size_t ii, std::size_t oi, std::size_t wi) {
          if (xg) xg[ii] += wd[wi] * gout[oi];
          if (wg) wg[wi] += xd[ii] * gout[oi];
        });
      }
    });
  }
  return out;
}

// ---- differentiable DVH ----------------------------------------------------

Tensor soft_dvh_op(Tape& tape, const Tensor& d, const Tensor& mask,
                   const std::vector<double>& edges, double beta) {
  require(d.size() == mask.size(), "soft_dvh: dose/mask size mismatch");
  require(!edges.empty(), "soft_dvh: no bin edges");
  require(beta > 0.0, "soft_dvh: steepness must be positive");
  double msum = 0.0;
  for (double v : mask.data()) msum += v;
  require(msum > 0.0, "soft_dvh: empty mask");
  const double inv = 1.0 / msum;
  const int nt = static_cast<int>(edges.size());
  Tensor out = make_output({nt}, needs_grad(d));
  const std::size_t n = d.data().size();
  for (int t = 0; t < nt; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.data()[i] == 0.0) continue;
      s += mask.data()[i] / (1.0 + std::exp(-beta * (d.data()[i] - edges[t])));
    }
    out.data()[static_cast<std::size_t>(t)] = s * inv;
  }
  check_finite(out, "soft_dvh");
  if (out.requires_grad()) {
    auto edges_copy = edges;
    tape.record([d, mask, out, edges_copy, beta, inv, nt, n]() mutable {
      for (int t = 0; t < nt; ++t) {
        const double g = out.grad()[static_cast<std::size_t>(t)] * inv * beta;
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
          if (mask.data()[i] == 0.0) continue;
          const double s =
              1.0 / (1.0 + std::exp(-beta * (d.data()[i] - edges_copy[t])));
          d.grad()[i] += g * mask.data()[i] * s * (1.0 - s);
        }
      }
    });
  }
  return out;
}

}  // namespace dosepred
