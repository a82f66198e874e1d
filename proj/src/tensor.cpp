#include "pulmo/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "pulmo/errors.hpp"

namespace pulmo {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

int conv_out_dim(int in, int k, int stride, int pad, const char* axis,
                 const char* op) {
  const int padded = in + 2 * pad;
  if (k > padded) {
    throw DimensionError(std::string(op) + ": kernel extent " +
                         std::to_string(k) + " exceeds padded input " +
                         std::to_string(padded) + " on axis " + axis);
  }
  return (padded - k) / stride + 1;
}

void check_stride(int stride, const char* op) {
  if (stride < 1) {
    throw DimensionError(std::string(op) + ": stride must be >= 1, got " +
                         std::to_string(stride));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) {
      throw DimensionError("tensor: zero-size dimension in shape " +
                           shape_str(shape_));
    }
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) {
      throw DimensionError("tensor: zero-size dimension in shape " +
                           shape_str(shape_));
    }
  }
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " expects " +
                         std::to_string(product(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) +
                         " out of range for rank " +
                         std::to_string(shape_.size()));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw DimensionError("tensor: " + std::to_string(idx.size()) +
                         " indices for rank " + std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw DimensionError("tensor: index " + std::to_string(i) +
                           " out of bounds on axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

float& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[flat_index(idx)];
}

float Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[flat_index(idx)];
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

float Tensor::min() const {
  if (data_.empty()) throw DimensionError("tensor: min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max() const {
  if (data_.empty()) throw DimensionError("tensor: max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
  if (product(new_shape) != data_.size()) {
    throw DimensionError("tensor: cannot reshape " + shape_str(shape_) +
                         " to " + shape_str(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

std::string Tensor::shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM
// ---------------------------------------------------------------------------

namespace {

// Gathers [C*kh*kw, outH*outW] patches; zero padding.
void im2col_2d(const float* in, int C, int H, int W, int kh, int kw,
               int stride, int pad, int outH, int outW, float* col) {
  const int cols = outH * outW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* row = col + ((c * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < outH; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * outW, row + (oy + 1) * outW, 0.0f);
            continue;
          }
          const float* src = in + (c * H + iy) * W;
          for (int ox = 0; ox < outW; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[oy * outW + ox] = (ix < 0 || ix >= W) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of the column matrix back onto the input layout.
void col2im_2d(const float* col, int C, int H, int W, int kh, int kw,
               int stride, int pad, int outH, int outW, float* in) {
  const int cols = outH * outW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = col + ((c * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < outH; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          float* dst = in + (c * H + iy) * W;
          for (int ox = 0; ox < outW; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * outW + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride,
              int pad) {
  if (input.rank() != 3) {
    throw DimensionError("conv2d: input must be [C,H,W], got " +
                         Tensor::shape_str(input.shape()));
  }
  if (kernels.rank() != 4) {
    throw DimensionError("conv2d: kernels must be [F,C,kh,kw], got " +
                         Tensor::shape_str(kernels.shape()));
  }
  check_stride(stride, "conv2d");
  const int C = static_cast<int>(input.dim(0));
  const int H = static_cast<int>(input.dim(1));
  const int W = static_cast<int>(input.dim(2));
  const int F = static_cast<int>(kernels.dim(0));
  const int kh = static_cast<int>(kernels.dim(2));
  const int kw = static_cast<int>(kernels.dim(3));
  if (static_cast<int>(kernels.dim(1)) != C) {
    throw DimensionError("conv2d: kernel channels " +
                         std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(C) +
                         " on axis C");
  }
  const int outH = conv_out_dim(H, kh, stride, pad, "H", "conv2d");
  const int outW = conv_out_dim(W, kw, stride, pad, "W", "conv2d");

  const int patch = C * kh * kw;
  const int cols = outH * outW;
  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  im2col_2d(input.data(), C, H, W, kh, kw, stride, pad, outH, outW,
            col.data());

  Tensor out({static_cast<std::size_t>(F), static_cast<std::size_t>(outH),
              static_cast<std::size_t>(outW)});
  ConstMapRM w(kernels.data(), F, patch);
  ConstMapRM x(col.data(), patch, cols);
  MapRM y(out.data(), F, cols);
  y.noalias() = w * x;
  return out;
}

Tensor conv2d_grad_input(const Tensor& kernels, const Tensor& grad_out,
                         const std::vector<std::size_t>& input_shape,
                         int stride, int pad) {
  const int C = static_cast<int>(input_shape[0]);
  const int H = static_cast<int>(input_shape[1]);
  const int W = static_cast<int>(input_shape[2]);
  const int F = static_cast<int>(kernels.dim(0));
  const int kh = static_cast<int>(kernels.dim(2));
  const int kw = static_cast<int>(kernels.dim(3));
  const int outH = static_cast<int>(grad_out.dim(1));
  const int outW = static_cast<int>(grad_out.dim(2));
  const int patch = C * kh * kw;
  const int cols = outH * outW;

  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  ConstMapRM w(kernels.data(), F, patch);
  ConstMapRM gy(grad_out.data(), F, cols);
  MapRM gcol(col.data(), patch, cols);
  gcol.noalias() = w.transpose() * gy;

  Tensor grad_in(input_shape, 0.0f);
  col2im_2d(col.data(), C, H, W, kh, kw, stride, pad, outH, outW,
            grad_in.data());
  return grad_in;
}

Tensor conv2d_grad_kernels(const Tensor& input, const Tensor& grad_out,
                           const std::vector<std::size_t>& kernel_shape,
                           int stride, int pad) {
  const int C = static_cast<int>(input.dim(0));
  const int H = static_cast<int>(input.dim(1));
  const int W = static_cast<int>(input.dim(2));
  const int F = static_cast<int>(kernel_shape[0]);
  const int kh = static_cast<int>(kernel_shape[2]);
  const int kw = static_cast<int>(kernel_shape[3]);
  const int outH = static_cast<int>(grad_out.dim(1));
  const int outW = static_cast<int>(grad_out.dim(2));
  const int patch = C * kh * kw;
  const int cols = outH * outW;

  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  im2col_2d(input.data(), C, H, W, kh, kw, stride, pad, outH, outW,
            col.data());

  Tensor grad_w(kernel_shape, 0.0f);
  ConstMapRM gy(grad_out.data(), F, cols);
  ConstMapRM x(col.data(), patch, cols);
  MapRM gw(grad_w.data(), F, patch);
  gw.noalias() = gy * x.transpose();
  return grad_w;
}

// ---------------------------------------------------------------------------
// conv3d via im2col + GEMM
// ---------------------------------------------------------------------------

namespace {

void im2col_3d(const float* in, int C, int T, int H, int W, int kt, int kh,
               int kw, std::array<int, 3> stride, std::array<int, 3> pad,
               int outT, int outH, int outW, float* col) {
  const int cols = outT * outH * outW;
  for (int c = 0; c < C; ++c) {
    for (int kz = 0; kz < kt; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          float* row =
              col + (((c * kt + kz) * kh + ky) * kw + kx) * static_cast<std::size_t>(cols);
          for (int ot = 0; ot < outT; ++ot) {
            const int it = ot * stride[0] + kz - pad[0];
            for (int oy = 0; oy < outH; ++oy) {
              const int iy = oy * stride[1] + ky - pad[1];
              float* dst = row + (ot * outH + oy) * outW;
              if (it < 0 || it >= T || iy < 0 || iy >= H) {
                std::fill(dst, dst + outW, 0.0f);
                continue;
              }
              const float* src = in + ((c * T + it) * H + iy) * W;
              for (int ox = 0; ox < outW; ++ox) {
                const int ix = ox * stride[2] + kx - pad[2];
                dst[ox] = (ix < 0 || ix >= W) ? 0.0f : src[ix];
              }
            }
          }
        }
      }
    }
  }
}

void col2im_3d(const float* col, int C, int T, int H, int W, int kt, int kh,
               int kw, std::array<int, 3> stride, std::array<int, 3> pad,
               int outT, int outH, int outW, float* in) {
  const int cols = outT * outH * outW;
  for (int c = 0; c < C; ++c) {
    for (int kz = 0; kz < kt; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const float* row =
              col + (((c * kt + kz) * kh + ky) * kw + kx) * static_cast<std::size_t>(cols);
          for (int ot = 0; ot < outT; ++ot) {
            const int it = ot * stride[0] + kz - pad[0];
            if (it < 0 || it >= T) continue;
            for (int oy = 0; oy < outH; ++oy) {
              const int iy = oy * stride[1] + ky - pad[1];
              if (iy < 0 || iy >= H) continue;
              const float* src = row + (ot * outH + oy) * outW;
              float* dst = in + ((c * T + it) * H + iy) * W;
              for (int ox = 0; ox < outW; ++ox) {
                const int ix = ox * stride[2] + kx - pad[2];
                if (ix >= 0 && ix < W) dst[ix] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernels,
              std::array<int, 3> stride, std::array<int, 3> pad) {
  if (input.rank() != 4) {
    throw DimensionError("conv3d: input must be [C,T,H,W], got " +
                         Tensor::shape_str(input.shape()));
  }
  if (kernels.rank() != 5) {
    throw DimensionError("conv3d: kernels must be [F,C,kt,kh,kw], got " +
                         Tensor::shape_str(kernels.shape()));
  }
  for (int s : stride) check_stride(s, "conv3d");
  const int C = static_cast<int>(input.dim(0));
  const int T = static_cast<int>(input.dim(1));
  const int H = static_cast<int>(input.dim(2));
  const int W = static_cast<int>(input.dim(3));
  const int F = static_cast<int>(kernels.dim(0));
  const int kt = static_cast<int>(kernels.dim(2));
  const int kh = static_cast<int>(kernels.dim(3));
  const int kw = static_cast<int>(kernels.dim(4));
  if (static_cast<int>(kernels.dim(1)) != C) {
    throw DimensionError("conv3d: kernel channels " +
                         std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(C) +
                         " on axis C");
  }
  const int outT = conv_out_dim(T, kt, stride[0], pad[0], "T", "conv3d");
  const int outH = conv_out_dim(H, kh, stride[1], pad[1], "H", "conv3d");
  const int outW = conv_out_dim(W, kw, stride[2], pad[2], "W", "conv3d");

  const int patch = C * kt * kh * kw;
  const int cols = outT * outH * outW;
  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  im2col_3d(input.data(), C, T, H, W, kt, kh, kw, stride, pad, outT, outH,
            outW, col.data());

  Tensor out({static_cast<std::size_t>(F), static_cast<std::size_t>(outT),
              static_cast<std::size_t>(outH), static_cast<std::size_t>(outW)});
  ConstMapRM w(kernels.data(), F, patch);
  ConstMapRM x(col.data(), patch, cols);
  MapRM y(out.data(), F, cols);
  y.noalias() = w * x;
  return out;
}

Tensor conv3d_grad_input(const Tensor& kernels, const Tensor& grad_out,
                         const std::vector<std::size_t>& input_shape,
                         std::array<int, 3> stride, std::array<int, 3> pad) {
  const int C = static_cast<int>(input_shape[0]);
  const int T = static_cast<int>(input_shape[1]);
  const int H = static_cast<int>(input_shape[2]);
  const int W = static_cast<int>(input_shape[3]);
  const int F = static_cast<int>(kernels.dim(0));
  const int kt = static_cast<int>(kernels.dim(2));
  const int kh = static_cast<int>(kernels.dim(3));
  const int kw = static_cast<int>(kernels.dim(4));
  const int outT = static_cast<int>(grad_out.dim(1));
  const int outH = static_cast<int>(grad_out.dim(2));
  const int outW = static_cast<int>(grad_out.dim(3));
  const int patch = C * kt * kh * kw;
  const int cols = outT * outH * outW;

  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  ConstMapRM w(kernels.data(), F, patch);
  ConstMapRM gy(grad_out.data(), F, cols);
  MapRM gcol(col.data(), patch, cols);
  gcol.noalias() = w.transpose() * gy;

  Tensor grad_in(input_shape, 0.0f);
  col2im_3d(col.data(), C, T, H, W, kt, kh, kw, stride, pad, outT, outH, outW,
            grad_in.data());
  return grad_in;
}

Tensor conv3d_grad_kernels(const Tensor& input, const Tensor& grad_out,
                           const std::vector<std::size_t>& kernel_shape,
                           std::array<int, 3> stride, std::array<int, 3> pad) {
  const int C = static_cast<int>(input.dim(0));
  const int T = static_cast<int>(input.dim(1));
  const int H = static_cast<int>(input.dim(2));
  const int W = static_cast<int>(input.dim(3));
  const int F = static_cast<int>(kernel_shape[0]);
  const int kt = static_cast<int>(kernel_shape[2]);
  const int kh = static_cast<int>(kernel_shape[3]);
  const int kw = static_cast<int>(kernel_shape[4]);
  const int outT = static_cast<int>(grad_out.dim(1));
  const int outH = static_cast<int>(grad_out.dim(2));
  const int outW = static_cast<int>(grad_out.dim(3));
  const int patch = C * kt * kh * kw;
  const int cols = outT * outH * outW;

  std::vector<float> col(static_cast<std::size_t>(patch) * cols);
  im2col_3d(input.data(), C, T, H, W, kt, kh, kw, stride, pad, outT, outH,
            outW, col.data());

  Tensor grad_w(kernel_shape, 0.0f);
  ConstMapRM gy(grad_out.data(), F, cols);
  ConstMapRM x(col.data(), patch, cols);
  MapRM gw(grad_w.data(), F, patch);
  gw.noalias() = gy * x.transpose();
  return grad_w;
}

// ---------------------------------------------------------------------------
// pooling / linear / softmax / matmul
// ---------------------------------------------------------------------------

Tensor maxpool2d(const Tensor& input, int k, int stride) {
  if (input.rank() != 3) {
    throw DimensionError("maxpool2d: input must be [C,H,W], got " +
                         Tensor::shape_str(input.shape()));
  }
  check_stride(stride, "maxpool2d");
  const int C = static_cast<int>(input.dim(0));
  const int H = static_cast<int>(input.dim(1));
  const int W = static_cast<int>(input.dim(2));
  if (k > H || k > W) {
    throw DimensionError("maxpool2d: window " + std::to_string(k) +
                         " exceeds spatial extent " + std::to_string(H) + "x" +
                         std::to_string(W));
  }
  const int outH = (H - k) / stride + 1;
  const int outW = (W - k) / stride + 1;
  Tensor out({static_cast<std::size_t>(C), static_cast<std::size_t>(outH),
              static_cast<std::size_t>(outW)});
  const float* in = input.data();
  float* dst = out.data();
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < outH; ++oy) {
      for (int ox = 0; ox < outW; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < k; ++ky) {
          const float* src = in + (c * H + oy * stride + ky) * W + ox * stride;
          for (int kx = 0; kx < k; ++kx) best = std::max(best, src[kx]);
        }
        dst[(c * outH + oy) * outW + ox] = best;
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) {
    throw DimensionError("linear: expected x [N], w [M,N], b [M]");
  }
  const std::size_t N = x.dim(0);
  const std::size_t M = w.dim(0);
  if (w.dim(1) != N) {
    throw DimensionError("linear: weight inner dim " +
                         std::to_string(w.dim(1)) + " != input dim " +
                         std::to_string(N));
  }
  if (b.dim(0) != M) {
    throw DimensionError("linear: bias dim " + std::to_string(b.dim(0)) +
                         " != output dim " + std::to_string(M));
  }
  Tensor out({M});
  ConstMapRM wm(w.data(), static_cast<Eigen::Index>(M),
                static_cast<Eigen::Index>(N));
  Eigen::Map<const Eigen::VectorXf> xv(x.data(),
                                       static_cast<Eigen::Index>(N));
  Eigen::Map<const Eigen::VectorXf> bv(b.data(),
                                       static_cast<Eigen::Index>(M));
  Eigen::Map<Eigen::VectorXf> yv(out.data(), static_cast<Eigen::Index>(M));
  yv.noalias() = wm * xv + bv;
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("softmax: expected non-empty [N] input");
  }
  if (!x.all_finite()) {
    throw NumericError("softmax: non-finite input");
  }
  Tensor out({x.dim(0)});
  const float m = x.max();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = std::exp(static_cast<double>(x[i]) - m);
    out[i] = static_cast<float>(e);
    sum += e;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected rank-2 operands");
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dims " + std::to_string(a.dim(1)) +
                         " vs " + std::to_string(b.dim(0)) + " differ");
  }
  Tensor out({a.dim(0), b.dim(1)});
  ConstMapRM am(a.data(), static_cast<Eigen::Index>(a.dim(0)),
                static_cast<Eigen::Index>(a.dim(1)));
  ConstMapRM bm(b.data(), static_cast<Eigen::Index>(b.dim(0)),
                static_cast<Eigen::Index>(b.dim(1)));
  MapRM cm(out.data(), static_cast<Eigen::Index>(a.dim(0)),
           static_cast<Eigen::Index>(b.dim(1)));
  cm.noalias() = am * bm;
  return out;
}

// ---------------------------------------------------------------------------
// coarse-grained parallel loop
// ---------------------------------------------------------------------------

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
  g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

int threads() { return g_threads.load(std::memory_order_relaxed); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t count = end > begin ? end - begin : 0;
  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(threads()), count));
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{begin};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::exception_ptr err;
  std::mutex err_mu;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= end) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace pulmo
