#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "popusense/tensor.hpp"

namespace popusense::pdc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Square convolution with replicate ("clamp") padding. The weight is stored
/// out_channels × (kernel·kernel·in_channels) in [out][ky][kx][in] order.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  RowMatrix weight;
  Eigen::VectorXd bias;
};

/// out = conv_b(relu(conv_a(x))) + skip(x); conv_a and skip halve the
/// resolution.
struct ResDownBlock {
  Conv2d conv_a;
  Conv2d conv_b;
  Conv2d skip;
};

/// u = nearest_up(x); out = relu(conv_b(relu(conv_a(u))) + skip(u)).
struct ResUpBlock {
  Conv2d conv_a;
  Conv2d conv_b;
  Conv2d skip;
};

/// Named view over one parameter tensor, in checkpoint order.
template <class T>
struct ParamRef {
  std::string name;
  std::vector<int> shape;
  std::span<T> values;
};

inline constexpr std::array<int, 3> kEncoderWidths{16, 32, 0};  // last = latent_channels
inline constexpr std::array<int, 3> kDecoderWidths{64, 32, 16};

/// Encoder (three residual down-blocks) and decoder (three residual
/// up-blocks plus a logistic head).
struct ModelParams {
  int image_size = 64;
  int latent_channels = 64;
  std::uint64_t seed = 0;
  std::array<ResDownBlock, 3> encoder;
  std::array<ResUpBlock, 3> decoder;
  Conv2d head;

  static ModelParams initialize(int image_size, int latent_channels, std::uint64_t seed);

  /// Same architecture, all parameters zero. Used as a gradient accumulator.
  ModelParams zeros_like() const;

  std::vector<ParamRef<double>> params();
  std::vector<ParamRef<const double>> params() const;

  int latent_size() const noexcept { return image_size / 8; }

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Activations saved by the training forward pass. Matrices are
/// channels × (batch·height·width), pixel-major within a sample. Convolution
/// columns are rebuilt in the backward pass rather than stored.
struct EncoderTrace {
  int batch = 0;
  struct Block {
    Eigen::MatrixXd in, act_a, out;
  };
  std::array<Block, 3> blocks;
};

struct DecoderTrace {
  int batch = 0;
  struct Block {
    Eigen::MatrixXd in, act_a, out;
  };
  std::array<Block, 3> blocks;
  Eigen::MatrixXd xhat;
};

/// x: B×1×S×S. Returns B×C×(S/8)×(S/8). Pure.
Tensor4 encode(const Tensor4& x, const ModelParams& m);
Tensor4 encode(const Tensor4& x, const ModelParams& m, EncoderTrace& trace);

/// z: B×C×s×s. Returns B×1×(8s)×(8s) in (0,1). Pure.
Tensor4 decode(const Tensor4& z, const ModelParams& m);
Tensor4 decode(const Tensor4& z, const ModelParams& m, DecoderTrace& trace);

/// Accumulates decoder gradients into grads; returns dLoss/dz.
Tensor4 decode_backward(const DecoderTrace& trace, const ModelParams& m, const Tensor4& d_xhat,
                        ModelParams& grads);

/// Accumulates encoder gradients into grads.
void encode_backward(const EncoderTrace& trace, const ModelParams& m, const Tensor4& d_z,
                     ModelParams& grads);

/// |x - xhat| per pixel followed by a Gaussian blur (sigma = 0: none).
/// Returns B×1×S×S.
Tensor4 residual_map(const Tensor4& x, const Tensor4& xhat, double smoothing_sigma);

/// Per image: mean of the ceil(top_q·H·W) largest map values.
std::vector<double> image_score(const Tensor4& anomaly_map, double top_q);

}  // namespace popusense::pdc
