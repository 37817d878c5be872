#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace srnr::nn {

// Shape (batch, channels, dx, dy, dz); element (b, c, i, j, k) lives at
// (((b * C + c) * dx + i) * dy + j) * dz + k.
using Shape5 = std::array<std::size_t, 5>;

template <typename T>
class Tensor5 {
 public:
  Tensor5() = default;
  explicit Tensor5(Shape5 shape, T fill = T(0));
  Tensor5(Shape5 shape, std::vector<T> data);

  const Shape5& shape() const noexcept { return shape_; }
  std::size_t batch() const noexcept { return shape_[0]; }
  std::size_t channels() const noexcept { return shape_[1]; }
  std::array<std::size_t, 3> spatial() const noexcept { return {shape_[2], shape_[3], shape_[4]}; }
  std::size_t spatial_size() const noexcept { return shape_[2] * shape_[3] * shape_[4]; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Pointer to the contiguous spatial block of (b, c).
  T* plane(std::size_t b, std::size_t c) noexcept { return data_.data() + (b * shape_[1] + c) * spatial_size(); }
  const T* plane(std::size_t b, std::size_t c) const noexcept {
    return data_.data() + (b * shape_[1] + c) * spatial_size();
  }

  // True when every element is finite.
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor5&, const Tensor5&) = default;

 private:
  Shape5 shape_{0, 0, 0, 0, 0};
  std::vector<T> data_;
};

std::string shape_str(const Shape5& s);

inline constexpr std::size_t kKernelTaps = 27;

// 3x3x3 cross-correlation with zero "same" padding. Weight (co, ci, a, b, c)
// with a, b, c in {0, 1, 2} sits at ((co * c_in + ci) * 27 + a * 9 + b * 3 + c)
// and multiplies input voxel (i + a - 1, j + b - 1, k + c - 1).
struct ConvLayer {
  std::size_t c_out = 0;
  std::size_t c_in = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(std::size_t out, std::size_t in)
      : c_out(out), c_in(in), weights(out * in * kKernelTaps, 0.0), bias(out, 0.0) {}

  double& w(std::size_t co, std::size_t ci, std::size_t tap) { return weights[(co * c_in + ci) * kKernelTaps + tap]; }
  double w(std::size_t co, std::size_t ci, std::size_t tap) const {
    return weights[(co * c_in + ci) * kKernelTaps + tap];
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, const ConvLayer& layer);

template <typename T>
struct ConvGrads {
  Tensor5<T> grad_x;
  std::vector<double> grad_w;
  std::vector<double> grad_b;
};

// Exact gradients of conv3d_forward. With need_grad_x = false the input
// gradient is left empty (first layer of a network).
template <typename T>
ConvGrads<T> conv3d_backward(const Tensor5<T>& x, const ConvLayer& layer, const Tensor5<T>& grad_out,
                             bool need_grad_x = true);

template <typename T>
Tensor5<T> relu_forward(const Tensor5<T>& x);

// Passes grad_out where x > 0; zero where x <= 0 (subgradient 0 at 0).
template <typename T>
Tensor5<T> relu_backward(const Tensor5<T>& x, const Tensor5<T>& grad_out);

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b);

// Splits a gradient of concat_channels(a, b) back into (grad_a, grad_b), where
// a had `channels_a` channels.
template <typename T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& grad, std::size_t channels_a);

struct NetShape {
  int depth = 10;
  int width = 32;

  void validate() const;
  friend bool operator==(const NetShape&, const NetShape&) = default;
};

// Pooling-free U-Net: `depth` 3x3x3 convolutions at full resolution, ReLU
// after all but the last, and the output of layer i concatenated onto the
// input of layer depth-1-i for i < depth/2 - 1. Output has one channel and
// is the residual to add to the input.
struct MuNet {
  NetShape shape;
  std::vector<ConvLayer> layers;
  std::vector<std::pair<int, int>> skips;  // (source layer, destination layer)

  std::size_t param_count() const;
  // Skip source feeding `dest`, or -1.
  int skip_source(int dest) const;

  friend bool operator==(const MuNet&, const MuNet&) = default;
};

// Zero-initialized network with the topology implied by `shape`.
MuNet build_munet(const NetShape& shape);

// He-normal weights (std = sqrt(2 / (27 c_in))), zero biases.
MuNet init_params(const NetShape& shape, std::uint64_t seed);

// Human-readable operator list ("conv3x3x3 1->16 same", "relu", "concat 0->5").
std::vector<std::string> describe_ops(const MuNet& net);

// Flat parameter vector: for each layer its weights then its bias.
std::vector<double> flatten_params(const MuNet& net);
void assign_params(MuNet& net, std::span<const double> flat);

template <typename T>
struct Tape {
  Shape5 input_shape{};
  std::vector<std::pair<std::size_t, std::size_t>> layer_dims;  // (c_out, c_in) per layer
  Tensor5<T> input;
  std::vector<Tensor5<T>> activations;  // post-ReLU outputs of hidden layers
};

template <typename T>
std::pair<Tensor5<T>, Tape<T>> munet_forward(const MuNet& net, const Tensor5<T>& x);

// Residual only, without retaining activations.
template <typename T>
Tensor5<T> munet_residual(const MuNet& net, const Tensor5<T>& x);

// x + residual.
template <typename T>
Tensor5<T> munet_predict(const MuNet& net, const Tensor5<T>& x);

template <typename T>
struct MunetGrads {
  std::vector<double> params;  // aligned with flatten_params
  Tensor5<T> input;            // empty unless requested
};

// Throws InvalidTape if the tape does not belong to this net or the gradient
// shape does not match the recorded forward pass.
template <typename T>
MunetGrads<T> munet_backward(const MuNet& net, const Tape<T>& tape, const Tensor5<T>& grad_residual,
                             bool need_input_grad = false);

// Checkpoint container (little-endian):
//   "SRNRCKPT1"  magic, 9 bytes
//   u64 seed, u32 depth, u32 width, u32 layer count
//   per layer: u32 c_out, u32 c_in, u32 kernel (= 3)
//   u64 parameter count, then that many float32 values in flatten order
void save_checkpoint(const MuNet& net, std::uint64_t seed, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const MuNet& net, std::uint64_t seed);

struct Checkpoint {
  MuNet net;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter through float32, as a checkpoint round trip does.
MuNet round_to_float(MuNet net);

}  // namespace srnr::nn
