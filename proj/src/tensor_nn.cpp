#include "srnr/tensor_nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include <cblas.h>

#include "srnr/error.hpp"
#include "srnr/rng.hpp"

namespace srnr::nn {

std::string shape_str(const Shape5& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < 5; ++i) out += std::to_string(s[i]) + (i + 1 < 5 ? "," : ")");
  return out;
}

namespace {

std::size_t product(const Shape5& s) {
  std::size_t n = 1;
  for (auto v : s) n *= v;
  return n;
}

}  // namespace

template <typename T>
Tensor5<T>::Tensor5(Shape5 shape, T fill) : shape_(shape), data_(product(shape), fill) {}

template <typename T>
Tensor5<T>::Tensor5(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != product(shape_))
    throw Error(ErrorCode::Shape, "tensor data length does not match shape " + shape_str(shape_));
}

template <typename T>
bool Tensor5<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Convolution kernels

namespace {

void set_single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0f,
              a, static_cast<blasint>(lda), b, static_cast<blasint>(ldb), 0.0f, c, static_cast<blasint>(ldc));
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0,
              a, static_cast<blasint>(lda), b, static_cast<blasint>(ldb), 0.0, c, static_cast<blasint>(ldc));
}

// Column index of weight (ci, tap) in the im2row layout, which orders taps
// before channels so each (a, b) pair is one contiguous run of 3 * c_in.
inline std::size_t row_col(std::size_t ci, std::size_t tap, std::size_t c_in) { return tap * c_in + ci; }

// Zero-padded, channels-last copy of batch item b: element (i, j, k, c) of
// the (dx+2, dy+2, dz+2, C) grid holds x(b, c, i-1, j-1, k-1).
template <typename T>
std::vector<T> pad_channels_last(const Tensor5<T>& x, std::size_t b) {
  const auto [nb, nc, dx, dy, dz] = x.shape();
  const std::size_t py = dy + 2, pz = dz + 2;
  std::vector<T> out((dx + 2) * py * pz * nc, T(0));
  for (std::size_t c = 0; c < nc; ++c) {
    const T* src = x.plane(b, c);
    for (std::size_t i = 0; i < dx; ++i)
      for (std::size_t j = 0; j < dy; ++j) {
        T* dst = out.data() + (((i + 1) * py + (j + 1)) * pz + 1) * nc + c;
        const T* row = src + (i * dy + j) * dz;
        for (std::size_t k = 0; k < dz; ++k) dst[k * nc] = row[k];
      }
  }
  return out;
}

// im2row for output plane i: row (j * dz + k) holds the 27 * C receptive
// field of voxel (i, j, k) in row_col order.
template <typename T>
void fill_rows(const std::vector<T>& padded, std::size_t i, std::size_t dy, std::size_t dz, std::size_t nc, T* rows) {
  const std::size_t py = dy + 2, pz = dz + 2;
  const std::size_t run = 3 * nc;
  const std::size_t k_cols = kKernelTaps * nc;
  for (std::size_t j = 0; j < dy; ++j)
    for (std::size_t k = 0; k < dz; ++k) {
      T* row = rows + (j * dz + k) * k_cols;
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t bb = 0; bb < 3; ++bb) {
          const T* src = padded.data() + (((i + a) * py + (j + bb)) * pz + k) * nc;
          std::copy_n(src, run, row + (a * 3 + bb) * run);
        }
    }
}

// Shared forward routine; `w` is laid out like ConvLayer::weights.
template <typename T>
Tensor5<T> conv_core(const Tensor5<T>& x, std::size_t c_out, std::size_t c_in, const std::vector<T>& w,
                     const std::vector<T>& bias) {
  const auto [nb, nc, dx, dy, dz] = x.shape();
  if (nc != c_in)
    throw Error(ErrorCode::Shape, "conv3d: input has " + std::to_string(nc) + " channels, layer expects " +
                                      std::to_string(c_in));
  set_single_threaded_blas();
  const std::size_t k_cols = kKernelTaps * c_in;
  const std::size_t n_rows = dy * dz;
  // Weights as a (27 C_in) x C_out matrix.
  std::vector<T> wr(k_cols * c_out);
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t tap = 0; tap < kKernelTaps; ++tap)
        wr[row_col(ci, tap, c_in) * c_out + co] = w[(co * c_in + ci) * kKernelTaps + tap];

  Tensor5<T> out({nb, c_out, dx, dy, dz});
  std::vector<T> rows(n_rows * k_cols);
  std::vector<T> result(n_rows * c_out);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto padded = pad_channels_last(x, b);
    for (std::size_t i = 0; i < dx; ++i) {
      fill_rows(padded, i, dy, dz, c_in, rows.data());
      gemm(CblasNoTrans, CblasNoTrans, n_rows, c_out, k_cols, rows.data(), k_cols, wr.data(), c_out, result.data(),
           c_out);
      for (std::size_t co = 0; co < c_out; ++co) {
        T* dst = out.plane(b, co) + i * n_rows;
        for (std::size_t r = 0; r < n_rows; ++r) dst[r] = result[r * c_out + co] + bias[co];
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> cast_vec(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

}  // namespace

template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, const ConvLayer& layer) {
  if (layer.weights.size() != layer.c_out * layer.c_in * kKernelTaps || layer.bias.size() != layer.c_out)
    throw Error(ErrorCode::Shape, "conv layer parameter arrays do not match (c_out, c_in)");
  return conv_core(x, layer.c_out, layer.c_in, cast_vec<T>(layer.weights), cast_vec<T>(layer.bias));
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor5<T>& x, const ConvLayer& layer, const Tensor5<T>& grad_out,
                             bool need_grad_x) {
  const auto [nb, nc, dx, dy, dz] = x.shape();
  if (nc != layer.c_in) throw Error(ErrorCode::Shape, "conv3d_backward: input channel mismatch");
  const Shape5 expect{nb, layer.c_out, dx, dy, dz};
  if (grad_out.shape() != expect)
    throw Error(ErrorCode::Shape, "conv3d_backward: grad_out shape " + shape_str(grad_out.shape()) + ", expected " +
                                      shape_str(expect));
  const std::size_t c_in = layer.c_in, c_out = layer.c_out;
  ConvGrads<T> g;
  g.grad_w.assign(layer.weights.size(), 0.0);
  g.grad_b.assign(c_out, 0.0);

  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t co = 0; co < c_out; ++co) {
      const T* gp = grad_out.plane(b, co);
      double s = 0.0;
      for (std::size_t v = 0; v < x.spatial_size(); ++v) s += static_cast<double>(gp[v]);
      g.grad_b[co] += s;
    }

  // dL/dw = rows^T * G per output plane, where G holds grad_out voxel-major.
  set_single_threaded_blas();
  const std::size_t k_cols = kKernelTaps * c_in;
  const std::size_t n_rows = dy * dz;
  std::vector<T> rows(n_rows * k_cols), gmat(n_rows * c_out), partial(k_cols * c_out);
  std::vector<double> acc(k_cols * c_out, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto padded = pad_channels_last(x, b);
    for (std::size_t i = 0; i < dx; ++i) {
      fill_rows(padded, i, dy, dz, c_in, rows.data());
      for (std::size_t co = 0; co < c_out; ++co) {
        const T* src = grad_out.plane(b, co) + i * n_rows;
        for (std::size_t r = 0; r < n_rows; ++r) gmat[r * c_out + co] = src[r];
      }
      gemm(CblasTrans, CblasNoTrans, k_cols, c_out, n_rows, rows.data(), k_cols, gmat.data(), c_out, partial.data(),
           c_out);
      for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += static_cast<double>(partial[q]);
    }
  }
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t tap = 0; tap < kKernelTaps; ++tap)
        g.grad_w[(co * c_in + ci) * kKernelTaps + tap] = acc[row_col(ci, tap, c_in) * c_out + co];

  if (need_grad_x) {
    // Input gradient is a correlation of grad_out with the spatially flipped,
    // channel-transposed kernel.
    std::vector<T> wt(layer.weights.size());
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t tap = 0; tap < kKernelTaps; ++tap)
          wt[(ci * c_out + co) * kKernelTaps + (kKernelTaps - 1 - tap)] = static_cast<T>(layer.w(co, ci, tap));
    g.grad_x = conv_core(grad_out, c_in, c_out, wt, std::vector<T>(c_in, T(0)));
  }
  return g;
}

template <typename T>
Tensor5<T> relu_forward(const Tensor5<T>& x) {
  Tensor5<T> y = x;
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor5<T> relu_backward(const Tensor5<T>& x, const Tensor5<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw Error(ErrorCode::Shape, "relu_backward: shape mismatch");
  Tensor5<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] || sa[4] != sb[4])
    throw Error(ErrorCode::Shape, "concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  Tensor5<T> out({sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]});
  const std::size_t plane = a.spatial_size();
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(a.plane(n, 0), sa[1] * plane, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), sb[1] * plane, out.plane(n, sa[1]));
  }
  return out;
}

template <typename T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& grad, std::size_t channels_a) {
  const auto& s = grad.shape();
  if (channels_a > s[1]) throw Error(ErrorCode::Shape, "split_channels: split point beyond channel count");
  Tensor5<T> ga({s[0], channels_a, s[2], s[3], s[4]});
  Tensor5<T> gb({s[0], s[1] - channels_a, s[2], s[3], s[4]});
  const std::size_t plane = grad.spatial_size();
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::copy_n(grad.plane(n, 0), channels_a * plane, ga.plane(n, 0));
    std::copy_n(grad.plane(n, channels_a), (s[1] - channels_a) * plane, gb.plane(n, 0));
  }
  return {std::move(ga), std::move(gb)};
}

// ---------------------------------------------------------------------------
// MU-Net

void NetShape::validate() const {
  if (depth < 1) throw Error(ErrorCode::InvalidArgument, "network depth must be >= 1");
  if (width < 1) throw Error(ErrorCode::InvalidArgument, "network width must be >= 1");
}

std::size_t MuNet::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

int MuNet::skip_source(int dest) const {
  for (const auto& [src, dst] : skips)
    if (dst == dest) return src;
  return -1;
}

MuNet build_munet(const NetShape& shape) {
  shape.validate();
  MuNet net;
  net.shape = shape;
  const int depth = shape.depth;
  const auto width = static_cast<std::size_t>(shape.width);
  for (int i = 0; i < depth / 2 - 1; ++i) net.skips.emplace_back(i, depth - 1 - i);
  for (int l = 0; l < depth; ++l) {
    std::size_t c_in = l == 0 ? 1 : width;
    if (net.skip_source(l) >= 0) c_in += width;
    const std::size_t c_out = l == depth - 1 ? 1 : width;
    net.layers.emplace_back(c_out, c_in);
  }
  return net;
}

MuNet init_params(const NetShape& shape, std::uint64_t seed) {
  MuNet net = build_munet(shape);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(layer.c_in) * kKernelTaps));
    const std::uint64_t s = rng::derive(seed, "munet-layer", l);
    for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] = std_dev * rng::normal(s, i);
  }
  return net;
}

std::vector<std::string> describe_ops(const MuNet& net) {
  std::vector<std::string> ops;
  const int depth = static_cast<int>(net.layers.size());
  for (int l = 0; l < depth; ++l) {
    if (const int src = net.skip_source(l); src >= 0)
      ops.push_back("concat " + std::to_string(src) + "->" + std::to_string(l));
    const auto& layer = net.layers[l];
    ops.push_back("conv3x3x3 " + std::to_string(layer.c_in) + "->" + std::to_string(layer.c_out) + " same");
    if (l + 1 < depth) ops.emplace_back("relu");
  }
  return ops;
}

std::vector<double> flatten_params(const MuNet& net) {
  std::vector<double> flat;
  flat.reserve(net.param_count());
  for (const auto& l : net.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void assign_params(MuNet& net, std::span<const double> flat) {
  if (flat.size() != net.param_count())
    throw Error(ErrorCode::Shape, "parameter vector has " + std::to_string(flat.size()) + " entries, network needs " +
                                      std::to_string(net.param_count()));
  std::size_t off = 0;
  for (auto& l : net.layers) {
    std::copy_n(flat.begin() + off, l.weights.size(), l.weights.begin());
    off += l.weights.size();
    std::copy_n(flat.begin() + off, l.bias.size(), l.bias.begin());
    off += l.bias.size();
  }
}

namespace {

template <typename T>
Tensor5<T> layer_input(const MuNet& net, int l, const Tensor5<T>& x, const std::vector<Tensor5<T>>& acts) {
  if (l == 0) return x;
  if (const int src = net.skip_source(l); src >= 0) return concat_channels(acts[l - 1], acts[src]);
  return acts[l - 1];
}

template <typename T>
void check_input(const Tensor5<T>& x) {
  if (x.channels() != 1) throw Error(ErrorCode::Shape, "MU-Net input must have exactly one channel");
  if (x.size() == 0) throw Error(ErrorCode::Shape, "MU-Net input is empty");
}

template <typename T>
void add_into(Tensor5<T>& dst, const Tensor5<T>& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
std::pair<Tensor5<T>, Tape<T>> munet_forward(const MuNet& net, const Tensor5<T>& x) {
  check_input(x);
  const int depth = static_cast<int>(net.layers.size());
  Tape<T> tape;
  tape.input_shape = x.shape();
  tape.activations.resize(static_cast<std::size_t>(std::max(depth - 1, 0)));
  tape.input = x;
  Tensor5<T> out;
  for (int l = 0; l < depth; ++l) {
    const auto& layer = net.layers[l];
    tape.layer_dims.emplace_back(layer.c_out, layer.c_in);
    Tensor5<T> y = conv3d_forward(layer_input(net, l, x, tape.activations), layer);
    if (l + 1 < depth) {
      for (auto& v : y.data()) v = v > T(0) ? v : T(0);
      tape.activations[l] = std::move(y);
    } else {
      out = std::move(y);
    }
  }
  return {std::move(out), std::move(tape)};
}

template <typename T>
Tensor5<T> munet_residual(const MuNet& net, const Tensor5<T>& x) {
  check_input(x);
  const int depth = static_cast<int>(net.layers.size());
  // Keep only activations still needed by a later skip.
  std::vector<Tensor5<T>> acts(static_cast<std::size_t>(std::max(depth - 1, 0)));
  Tensor5<T> out;
  for (int l = 0; l < depth; ++l) {
    Tensor5<T> y = conv3d_forward(layer_input(net, l, x, acts), net.layers[l]);
    if (l >= 2) {
      const bool needed_later = std::any_of(net.skips.begin(), net.skips.end(), [&](const auto& s) {
        return s.first == l - 2 && s.second > l;
      });
      if (!needed_later) acts[l - 2] = Tensor5<T>();
    }
    if (l + 1 < depth) {
      for (auto& v : y.data()) v = v > T(0) ? v : T(0);
      acts[l] = std::move(y);
    } else {
      out = std::move(y);
    }
  }
  return out;
}

template <typename T>
Tensor5<T> munet_predict(const MuNet& net, const Tensor5<T>& x) {
  Tensor5<T> r = munet_residual(net, x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] + r[i];
  return r;
}

template <typename T>
MunetGrads<T> munet_backward(const MuNet& net, const Tape<T>& tape, const Tensor5<T>& grad_residual,
                             bool need_input_grad) {
  const int depth = static_cast<int>(net.layers.size());
  if (tape.layer_dims.size() != net.layers.size() || tape.input.size() == 0)
    throw Error(ErrorCode::InvalidTape, "tape was recorded for a different network");
  for (int l = 0; l < depth; ++l)
    if (tape.layer_dims[l] != std::make_pair(net.layers[l].c_out, net.layers[l].c_in))
      throw Error(ErrorCode::InvalidTape, "layer " + std::to_string(l) + " shape differs from tape");
  Shape5 expect = tape.input_shape;
  expect[1] = 1;
  if (grad_residual.shape() != expect)
    throw Error(ErrorCode::InvalidTape, "gradient shape " + shape_str(grad_residual.shape()) +
                                            " does not match recorded output " + shape_str(expect));

  std::vector<std::size_t> offsets(net.layers.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    offsets[l] = total;
    total += net.layers[l].weights.size() + net.layers[l].bias.size();
  }

  MunetGrads<T> result;
  result.params.assign(total, 0.0);
  std::vector<Tensor5<T>> grad_act(tape.activations.size());
  const Tensor5<T>& x = tape.input;
  for (int l = depth - 1; l >= 0; --l) {
    const auto& layer = net.layers[l];
    const Tensor5<T> g = l + 1 < depth ? relu_backward(tape.activations[l], grad_act[l]) : grad_residual;
    if (l + 1 < depth) grad_act[l] = Tensor5<T>();
    const bool need_gx = l > 0 || need_input_grad;
    auto cg = conv3d_backward(layer_input(net, l, x, tape.activations), layer, g, need_gx);
    std::copy(cg.grad_w.begin(), cg.grad_w.end(), result.params.begin() + offsets[l]);
    std::copy(cg.grad_b.begin(), cg.grad_b.end(), result.params.begin() + offsets[l] + layer.weights.size());
    if (!need_gx) continue;
    if (l == 0) {
      result.input = std::move(cg.grad_x);
    } else if (const int src = net.skip_source(l); src >= 0) {
      auto [g_prev, g_skip] = split_channels(cg.grad_x, net.layers[l - 1].c_out);
      add_into(grad_act[l - 1], g_prev);
      add_into(grad_act[src], g_skip);
    } else {
      add_into(grad_act[l - 1], cg.grad_x);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[] = "SRNRCKPT1";
constexpr std::size_t kMagicLen = 9;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.insert(out.end(), bytes.begin(), bytes.end());
  } else {
    const auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(v);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw Error(ErrorCode::UnsupportedFormat, "checkpoint truncated");
  std::array<std::uint8_t, sizeof(U)> bytes{};
  std::memcpy(bytes.data(), in.data() + pos, sizeof(U));
  pos += sizeof(U);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<U>(bytes);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const MuNet& net, std::uint64_t seed) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  put_le<std::uint64_t>(out, seed);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.shape.depth));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.shape.width));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.c_out));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.c_in));
    put_le<std::uint32_t>(out, 3);
  }
  const auto flat = flatten_params(net);
  put_le<std::uint64_t>(out, flat.size());
  for (double v : flat) put_le<float>(out, static_cast<float>(v));
  return out;
}

void save_checkpoint(const MuNet& net, std::uint64_t seed, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net, seed);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (in.size() < kMagicLen || std::memcmp(in.data(), kMagic, kMagicLen) != 0)
    throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not an SRNRCKPT1 checkpoint");
  std::size_t pos = kMagicLen;
  Checkpoint ck;
  ck.seed = get_le<std::uint64_t>(in, pos);
  NetShape shape;
  shape.depth = static_cast<int>(get_le<std::uint32_t>(in, pos));
  shape.width = static_cast<int>(get_le<std::uint32_t>(in, pos));
  ck.net = build_munet(shape);
  const auto n_layers = get_le<std::uint32_t>(in, pos);
  if (n_layers != ck.net.layers.size()) throw Error(ErrorCode::UnsupportedFormat, "checkpoint layer count mismatch");
  for (const auto& l : ck.net.layers) {
    const auto c_out = get_le<std::uint32_t>(in, pos);
    const auto c_in = get_le<std::uint32_t>(in, pos);
    const auto kernel = get_le<std::uint32_t>(in, pos);
    if (c_out != l.c_out || c_in != l.c_in || kernel != 3)
      throw Error(ErrorCode::UnsupportedFormat, "checkpoint layer manifest does not match its depth/width");
  }
  const auto count = get_le<std::uint64_t>(in, pos);
  if (count != ck.net.param_count()) throw Error(ErrorCode::UnsupportedFormat, "checkpoint parameter count mismatch");
  std::vector<double> flat(count);
  for (auto& v : flat) v = get_le<float>(in, pos);
  if (pos != in.size()) throw Error(ErrorCode::UnsupportedFormat, "trailing bytes in checkpoint");
  assign_params(ck.net, flat);
  return ck;
}

MuNet round_to_float(MuNet net) {
  for (auto& l : net.layers) {
    for (auto& v : l.weights) v = static_cast<float>(v);
    for (auto& v : l.bias) v = static_cast<float>(v);
  }
  return net;
}

#define SRNR_INSTANTIATE(T)                                                                                        \
  template class Tensor5<T>;                                                                                        \
  template Tensor5<T> conv3d_forward(const Tensor5<T>&, const ConvLayer&);                                          \
  template ConvGrads<T> conv3d_backward(const Tensor5<T>&, const ConvLayer&, const Tensor5<T>&, bool);              \
  template Tensor5<T> relu_forward(const Tensor5<T>&);                                                              \
  template Tensor5<T> relu_backward(const Tensor5<T>&, const Tensor5<T>&);                                          \
  template Tensor5<T> concat_channels(const Tensor5<T>&, const Tensor5<T>&);                                        \
  template std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>&, std::size_t);                        \
  template std::pair<Tensor5<T>, Tape<T>> munet_forward(const MuNet&, const Tensor5<T>&);                           \
  template Tensor5<T> munet_residual(const MuNet&, const Tensor5<T>&);                                              \
  template Tensor5<T> munet_predict(const MuNet&, const Tensor5<T>&);                                               \
  template MunetGrads<T> munet_backward(const MuNet&, const Tape<T>&, const Tensor5<T>&, bool);

SRNR_INSTANTIATE(float)
SRNR_INSTANTIATE(double)

#undef SRNR_INSTANTIATE

}  // namespace srnr::nn
