#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace pulmo {

// Dense row-major N-d array of 32-bit floats. All numeric traffic in the
// library goes through this type. No broadcasting anywhere: shape mismatches
// are hard errors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::initializer_list<std::size_t> idx);
  float at(std::initializer_list<std::size_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  float min() const;
  float max() const;

  void fill(float v);
  Tensor reshaped(std::vector<std::size_t> new_shape) const;

  static std::string shape_str(const std::vector<std::size_t>& shape);

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// Kernels. Pure functions over immutable inputs; safe to call concurrently.
// All results are bit-identical regardless of the thread setting below
// (threading never splits a single accumulation).
// ---------------------------------------------------------------------------

// input [C,H,W], kernels [F,C,kh,kw] -> [F,H',W'] with
// H' = (H + 2*pad - kh)/stride + 1. Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad);

// input [C,T,H,W], kernels [F,C,kt,kh,kw] -> [F,T',H',W'].
// stride/pad are (t,h,w) triples.
Tensor conv3d(const Tensor& input, const Tensor& kernels,
              std::array<int, 3> stride, std::array<int, 3> pad);

// input [C,H,W] -> [C,H',W'], max over k x k windows.
Tensor maxpool2d(const Tensor& input, int k, int stride);

// x [N], w [M,N], b [M] -> [M]; out = w.x + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [N] -> [N]; max-subtracted for stability. Throws NumericError on NaN.
Tensor softmax(const Tensor& x);

// a [M,K], b [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Gradients of the conv kernels w.r.t. their inputs/weights. grad_out has the
// forward output shape; returns tensors shaped like input / kernels.
Tensor conv2d_grad_input(const Tensor& kernels, const Tensor& grad_out,
                         const std::vector<std::size_t>& input_shape,
                         int stride, int pad);
Tensor conv2d_grad_kernels(const Tensor& input, const Tensor& grad_out,
                           const std::vector<std::size_t>& kernel_shape,
                           int stride, int pad);
Tensor conv3d_grad_input(const Tensor& kernels, const Tensor& grad_out,
                         const std::vector<std::size_t>& input_shape,
                         std::array<int, 3> stride, std::array<int, 3> pad);
Tensor conv3d_grad_kernels(const Tensor& input, const Tensor& grad_out,
                           const std::vector<std::size_t>& kernel_shape,
                           std::array<int, 3> stride, std::array<int, 3> pad);

// Worker cap for coarse-grained parallel loops (batch evaluation, ensemble
// members). 1 = fully serial. Results do not depend on this setting.
void set_threads(int n);
int threads();

// Run fn(i) for i in [begin, end), fanned over the configured workers.
// fn must be safe to run concurrently for distinct i.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace pulmo
