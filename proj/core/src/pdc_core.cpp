#include "popusense/pdc_core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "popusense/error.hpp"
#include "popusense/image_ops.hpp"

namespace popusense::pdc {

namespace {

using Matrix = Eigen::MatrixXd;

// Gather table for one convolution: for output pixel p and tap t,
// table[p * taps + t] is the source pixel index within one sample.
struct Geometry {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0, kernel = 0;
  std::vector<int> table;

  int in_pixels() const { return in_h * in_w; }
  int out_pixels() const { return out_h * out_w; }
  int taps() const { return kernel * kernel; }
};

Geometry make_geometry(int in_h, int in_w, int kernel, int stride) {
  Geometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel = kernel;
  g.out_h = in_h / stride;
  g.out_w = in_w / stride;
  const int pad = kernel / 2;
  g.table.resize(static_cast<std::size_t>(g.out_pixels()) * g.taps());
  std::size_t i = 0;
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          const int iy = std::clamp(oy * stride + ky - pad, 0, in_h - 1);
          const int ix = std::clamp(ox * stride + kx - pad, 0, in_w - 1);
          g.table[i++] = iy * in_w + ix;
        }
  return g;
}

// Nearest 2x upsampling followed by a 3x3 conv is, for each output phase
// (py, px), a 2x2 conv on the low-resolution grid with folded weights.
// Clamping on the upsampled grid matches clamping the low-resolution index.
Geometry phase_geometry(int size, int py, int px) {
  Geometry g;
  g.in_h = g.in_w = g.out_h = g.out_w = size;
  g.kernel = 2;
  g.table.resize(static_cast<std::size_t>(size) * size * 4);
  std::size_t i = 0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          g.table[i++] = std::clamp(r + py - 1 + a, 0, size - 1) * size + std::clamp(c + px - 1 + b, 0, size - 1);
  return g;
}

// 3x3 tap k of phase p lands on 2x2 tap fold_tap(k, p).
int fold_tap(int k, int phase) { return (phase + k + 1) / 2 - phase; }

// Output columns per im2col chunk, sized so the column buffer stays in L2.
Eigen::Index chunk_columns(Eigen::Index rows) {
  return std::max<Eigen::Index>(64, (Eigen::Index{1} << 15) / rows);
}

// Columns [j0, j0 + count) of the batch im2col matrix.
void im2col_range(const Matrix& x, const Geometry& g, Eigen::Index j0, Eigen::Index count, Matrix& cols) {
  const auto channels = x.rows();
  const int taps = g.taps();
  cols.resize(channels * taps, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto b = (j0 + j) / g.out_pixels();
    const auto p = (j0 + j) % g.out_pixels();
    const Eigen::Index in_base = b * g.in_pixels();
    double* dst = cols.col(j).data();
    const int* src = g.table.data() + static_cast<std::size_t>(p) * taps;
    for (int t = 0; t < taps; ++t) {
      const double* from = x.col(in_base + src[t]).data();
      std::copy(from, from + channels, dst + t * channels);
    }
  }
}

void col2im_range_add(const Matrix& dcols, const Geometry& g, Eigen::Index j0, Matrix& dx) {
  const auto channels = dx.rows();
  const int taps = g.taps();
  for (Eigen::Index j = 0; j < dcols.cols(); ++j) {
    const auto b = (j0 + j) / g.out_pixels();
    const auto p = (j0 + j) % g.out_pixels();
    const Eigen::Index in_base = b * g.in_pixels();
    const double* from = dcols.col(j).data();
    const int* src = g.table.data() + static_cast<std::size_t>(p) * taps;
    for (int t = 0; t < taps; ++t) {
      double* to = dx.col(in_base + src[t]).data();
      for (Eigen::Index c = 0; c < channels; ++c) to[c] += from[t * channels + c];
    }
  }
}

// Calls fn(j0, n) over column chunks that never straddle two samples, so each
// sample's arithmetic is the same whatever else is in the batch.
template <class Fn>
void for_each_chunk(const Geometry& g, int batch, Eigen::Index rows, Fn&& fn) {
  const Eigen::Index pixels = g.out_pixels();
  const auto step = std::min(pixels, chunk_columns(rows));
  for (int b = 0; b < batch; ++b)
    for (Eigen::Index k = 0; k < pixels; k += step) fn(b * pixels + k, std::min(step, pixels - k));
}

// w * im2col(x), without bias.
Matrix conv_forward(const RowMatrix& w, const Matrix& x, const Geometry& g, int batch) {
  Matrix out(w.rows(), static_cast<Eigen::Index>(batch) * g.out_pixels());
  Matrix cols;
  for_each_chunk(g, batch, w.cols(), [&](Eigen::Index j0, Eigen::Index n) {
    im2col_range(x, g, j0, n, cols);
    out.middleCols(j0, n).noalias() = w * cols;
  });
  return out;
}

Matrix conv_forward(const Conv2d& c, const Matrix& x, const Geometry& g, int batch) {
  Matrix out = conv_forward(c.weight, x, g, batch);
  out.colwise() += c.bias;
  return out;
}

// Adds dLoss/dw into gw and, when dx is given, dLoss/dx into *dx.
// The columns are rebuilt chunk by chunk instead of being kept from the forward pass.
void conv_backward(const RowMatrix& w, const Matrix& x, const Geometry& g, const Matrix& d_out, RowMatrix& gw,
                   Matrix* dx) {
  Matrix cols, dcols;
  const int batch = static_cast<int>(d_out.cols() / g.out_pixels());
  for_each_chunk(g, batch, w.cols(), [&](Eigen::Index j0, Eigen::Index n) {
    im2col_range(x, g, j0, n, cols);
    gw.noalias() += d_out.middleCols(j0, n) * cols.transpose();
    if (dx) {
      dcols.noalias() = w.transpose() * d_out.middleCols(j0, n);
      col2im_range_add(dcols, g, j0, *dx);
    }
  });
}

void conv_backward(const Conv2d& c, const Matrix& x, const Geometry& g, const Matrix& d_out, Conv2d& grad,
                   Matrix* dx) {
  conv_backward(c.weight, x, g, d_out, grad.weight, dx);
  grad.bias += d_out.rowwise().sum();
}

Matrix relu(Matrix m) { return m.cwiseMax(0.0); }

// Output column of phase-local pixel (b, r, c) on the 2x grid.
Eigen::Index phase_column(int b, int r, int c, int py, int px, int size) {
  const int out = 2 * size;
  return (static_cast<Eigen::Index>(b) * out + 2 * r + py) * out + 2 * c + px;
}

RowMatrix fold_weight(const Conv2d& c, int py, int px) {
  const Eigen::Index in = c.in_channels;
  RowMatrix w = RowMatrix::Zero(c.out_channels, 4 * in);
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx)
      w.middleCols((fold_tap(ky, py) * 2 + fold_tap(kx, px)) * in, in) += c.weight.middleCols((ky * 3 + kx) * in, in);
  return w;
}

// conv3x3(nearest_up(x)) for x at size × size.
Matrix up_conv(const Conv2d& c, const Matrix& x, int batch, int size) {
  Matrix out(c.out_channels, static_cast<Eigen::Index>(batch) * 4 * size * size);
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      const Matrix o = conv_forward(fold_weight(c, py, px), x, phase_geometry(size, py, px), batch);
      for (int b = 0; b < batch; ++b)
        for (int r = 0; r < size; ++r)
          for (int cc = 0; cc < size; ++cc)
            out.col(phase_column(b, r, cc, py, px, size)) = o.col((static_cast<Eigen::Index>(b) * size + r) * size + cc);
    }
  out.colwise() += c.bias;
  return out;
}

// Accumulates the gradient of up_conv into grad; returns dLoss/dx.
Matrix up_conv_backward(const Conv2d& c, const Matrix& x, const Matrix& d_out, int batch, int size, Conv2d& grad) {
  const Eigen::Index in = c.in_channels;
  Matrix dx = Matrix::Zero(in, x.cols());
  Matrix d(c.out_channels, x.cols());
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      for (int b = 0; b < batch; ++b)
        for (int r = 0; r < size; ++r)
          for (int cc = 0; cc < size; ++cc)
            d.col((static_cast<Eigen::Index>(b) * size + r) * size + cc) = d_out.col(phase_column(b, r, cc, py, px, size));
      RowMatrix dw = RowMatrix::Zero(c.out_channels, 4 * in);
      conv_backward(fold_weight(c, py, px), x, phase_geometry(size, py, px), d, dw, &dx);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          grad.weight.middleCols((ky * 3 + kx) * in, in) +=
              dw.middleCols((fold_tap(ky, py) * 2 + fold_tap(kx, px)) * in, in);
    }
  grad.bias += d_out.rowwise().sum();
  return dx;
}

// Nearest 2x upsampling of a channels × (batch·size·size) matrix.
Matrix upsample(const Matrix& x, int batch, int size) {
  const int out = 2 * size;
  Matrix u(x.rows(), static_cast<Eigen::Index>(batch) * out * out);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < out; ++oy)
      for (int ox = 0; ox < out; ++ox)
        u.col((static_cast<Eigen::Index>(b) * out + oy) * out + ox) =
            x.col((static_cast<Eigen::Index>(b) * size + oy / 2) * size + ox / 2);
  return u;
}

// Adjoint of upsample: sums each 2x2 block.
Matrix downsum(const Matrix& d, int batch, int size) {
  const int out = 2 * size;
  Matrix s = Matrix::Zero(d.rows(), static_cast<Eigen::Index>(batch) * size * size);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < out; ++oy)
      for (int ox = 0; ox < out; ++ox)
        s.col((static_cast<Eigen::Index>(b) * size + oy / 2) * size + ox / 2) +=
            d.col((static_cast<Eigen::Index>(b) * out + oy) * out + ox);
  return s;
}

Matrix relu_mask(const Matrix& activated, const Matrix& upstream) {
  return (activated.array() > 0.0).select(upstream, 0.0);
}

// NCHW tensor <-> channels × (batch·pixels) matrix.
Matrix to_matrix(const Tensor4& t) {
  const int pixels = t.h * t.w;
  Matrix m(t.c, static_cast<Eigen::Index>(t.n) * pixels);
  for (int b = 0; b < t.n; ++b)
    for (int c = 0; c < t.c; ++c) {
      const double* src = t.data.data() + (static_cast<std::size_t>(b) * t.c + c) * pixels;
      for (int p = 0; p < pixels; ++p) m(c, static_cast<Eigen::Index>(b) * pixels + p) = src[p];
    }
  return m;
}

Tensor4 to_tensor(const Matrix& m, int batch, int h, int w) {
  Tensor4 t(batch, static_cast<int>(m.rows()), h, w);
  const int pixels = h * w;
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < t.c; ++c) {
      double* dst = t.data.data() + (static_cast<std::size_t>(b) * t.c + c) * pixels;
      for (int p = 0; p < pixels; ++p) dst[p] = m(c, static_cast<Eigen::Index>(b) * pixels + p);
    }
  return t;
}

Conv2d make_conv(int in_channels, int out_channels, int kernel) {
  Conv2d c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.kernel = kernel;
  c.weight = RowMatrix::Zero(out_channels, kernel * kernel * in_channels);
  c.bias = Eigen::VectorXd::Zero(out_channels);
  return c;
}

void init_uniform(Conv2d& c, double gain, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(c.kernel * c.kernel * c.in_channels);
  const double bound = std::sqrt(gain / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = dist(rng);
}

int encoder_width(int block, int latent_channels) {
  return block == 2 ? latent_channels : kEncoderWidths[static_cast<std::size_t>(block)];
}

void check_image_batch(const Tensor4& x, const ModelParams& m) {
  if (x.c != 1 || x.h != m.image_size || x.w != m.image_size || x.n < 1)
    throw Error(Errc::ShapeMismatch, "expected B×1×" + std::to_string(m.image_size) + "×" +
                                         std::to_string(m.image_size) + " image batch");
}

void check_latent(const Tensor4& z, const ModelParams& m) {
  if (z.c != m.latent_channels || z.h != m.latent_size() || z.w != m.latent_size() || z.n < 1)
    throw Error(Errc::ShapeMismatch, "expected B×" + std::to_string(m.latent_channels) + "×" +
                                         std::to_string(m.latent_size()) + "×" +
                                         std::to_string(m.latent_size()) + " latent map");
}

template <class Self, class T>
std::vector<ParamRef<T>> collect(Self& self) {
  std::vector<ParamRef<T>> refs;
  auto add = [&refs](const std::string& name, auto& conv) {
    refs.push_back({name + ".weight",
                    {conv.out_channels, conv.kernel, conv.kernel, conv.in_channels},
                    {conv.weight.data(), static_cast<std::size_t>(conv.weight.size())}});
    refs.push_back({name + ".bias",
                    {conv.out_channels},
                    {conv.bias.data(), static_cast<std::size_t>(conv.bias.size())}});
  };
  for (std::size_t i = 0; i < self.encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    add(prefix + ".conv_a", self.encoder[i].conv_a);
    add(prefix + ".conv_b", self.encoder[i].conv_b);
    add(prefix + ".skip", self.encoder[i].skip);
  }
  for (std::size_t i = 0; i < self.decoder.size(); ++i) {
    const std::string prefix = "decoder." + std::to_string(i);
    add(prefix + ".conv_a", self.decoder[i].conv_a);
    add(prefix + ".conv_b", self.decoder[i].conv_b);
    add(prefix + ".skip", self.decoder[i].skip);
  }
  add("head", self.head);
  return refs;
}

Tensor4 run_encoder(const Tensor4& x, const ModelParams& m, EncoderTrace* trace) {
  check_image_batch(x, m);
  const int batch = x.n;
  Matrix cur = to_matrix(x);
  int size = m.image_size;
  if (trace) trace->batch = batch;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& blk = m.encoder[i];
    Matrix act_a = relu(conv_forward(blk.conv_a, cur, make_geometry(size, size, 3, 2), batch));
    Matrix out = conv_forward(blk.conv_b, act_a, make_geometry(size / 2, size / 2, 3, 1), batch) +
                 conv_forward(blk.skip, cur, make_geometry(size, size, 1, 2), batch);
    if (i < 2) out = relu(std::move(out));
    size /= 2;
    if (trace) {
      auto& t = trace->blocks[i];
      t.in = std::move(cur);
      t.act_a = std::move(act_a);
      t.out = out;
    }
    cur = std::move(out);
  }
  return to_tensor(cur, batch, size, size);
}

Tensor4 run_decoder(const Tensor4& z, const ModelParams& m, DecoderTrace* trace) {
  check_latent(z, m);
  const int batch = z.n;
  Matrix cur = to_matrix(z);
  int size = m.latent_size();
  if (trace) trace->batch = batch;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& blk = m.decoder[i];
    Matrix act_a = relu(up_conv(blk.conv_a, cur, batch, size));
    // 1x1 conv commutes with nearest upsampling; run it at the low resolution.
    const Matrix skip = conv_forward(blk.skip, cur, make_geometry(size, size, 1, 1), batch);
    Matrix out = relu(conv_forward(blk.conv_b, act_a, make_geometry(2 * size, 2 * size, 3, 1), batch) +
                      upsample(skip, batch, size));
    size *= 2;
    if (trace) {
      auto& t = trace->blocks[i];
      t.in = std::move(cur);
      t.act_a = std::move(act_a);
      t.out = out;
    }
    cur = std::move(out);
  }
  Matrix xhat = conv_forward(m.head, cur, make_geometry(size, size, 3, 1), batch)
                    .unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  if (trace) trace->xhat = xhat;
  return to_tensor(xhat, batch, size, size);
}

}  // namespace

ModelParams ModelParams::initialize(int image_size, int latent_channels, std::uint64_t seed) {
  if (image_size < 8 || image_size % 8 != 0)
    throw Error(Errc::ShapeMismatch, "image size must be a positive multiple of 8");
  if (latent_channels < 1) throw Error(Errc::ShapeMismatch, "latent_channels must be >= 1");
  ModelParams m;
  m.image_size = image_size;
  m.latent_channels = latent_channels;
  m.seed = seed;
  std::mt19937_64 rng(seed);

  int in = 1;
  for (int i = 0; i < 3; ++i) {
    const int out = encoder_width(i, latent_channels);
    auto& blk = m.encoder[static_cast<std::size_t>(i)];
    blk.conv_a = make_conv(in, out, 3);
    blk.conv_b = make_conv(out, out, 3);
    blk.skip = make_conv(in, out, 1);
    init_uniform(blk.conv_a, 6.0, rng);
    init_uniform(blk.conv_b, 3.0, rng);
    init_uniform(blk.skip, 3.0, rng);
    in = out;
  }
  for (int i = 0; i < 3; ++i) {
    const int out = kDecoderWidths[static_cast<std::size_t>(i)];
    auto& blk = m.decoder[static_cast<std::size_t>(i)];
    blk.conv_a = make_conv(in, out, 3);
    blk.conv_b = make_conv(out, out, 3);
    blk.skip = make_conv(in, out, 1);
    init_uniform(blk.conv_a, 6.0, rng);
    init_uniform(blk.conv_b, 3.0, rng);
    init_uniform(blk.skip, 3.0, rng);
    in = out;
  }
  m.head = make_conv(in, 1, 3);
  init_uniform(m.head, 3.0, rng);
  return m;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& ref : z.params()) std::fill(ref.values.begin(), ref.values.end(), 0.0);
  return z;
}

std::vector<ParamRef<double>> ModelParams::params() { return collect<ModelParams, double>(*this); }

std::vector<ParamRef<const double>> ModelParams::params() const {
  return collect<const ModelParams, const double>(*this);
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.image_size != b.image_size || a.latent_channels != b.latent_channels || a.seed != b.seed)
    return false;
  const auto pa = a.params();
  const auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].shape != pb[i].shape ||
        !std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()))
      return false;
  return true;
}

Tensor4 encode(const Tensor4& x, const ModelParams& m) { return run_encoder(x, m, nullptr); }

Tensor4 encode(const Tensor4& x, const ModelParams& m, EncoderTrace& trace) {
  return run_encoder(x, m, &trace);
}

Tensor4 decode(const Tensor4& z, const ModelParams& m) { return run_decoder(z, m, nullptr); }

Tensor4 decode(const Tensor4& z, const ModelParams& m, DecoderTrace& trace) {
  return run_decoder(z, m, &trace);
}

Tensor4 decode_backward(const DecoderTrace& trace, const ModelParams& m, const Tensor4& d_xhat,
                        ModelParams& grads) {
  const int batch = trace.batch;
  const int size = m.image_size;
  if (d_xhat.n != batch || d_xhat.c != 1 || d_xhat.h != size || d_xhat.w != size)
    throw Error(Errc::ShapeMismatch, "decoder upstream gradient");

  const Matrix up = to_matrix(d_xhat);
  const Matrix d_logits = up.cwiseProduct(trace.xhat.cwiseProduct((1.0 - trace.xhat.array()).matrix()));
  Matrix d = Matrix::Zero(m.head.in_channels, d_logits.cols());
  conv_backward(m.head, trace.blocks[2].out, make_geometry(size, size, 3, 1), d_logits, grads.head, &d);

  int out_size = size;
  for (int i = 2; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const auto& t = trace.blocks[idx];
    const auto& blk = m.decoder[idx];
    auto& g = grads.decoder[idx];
    const int in_size = out_size / 2;
    d = relu_mask(t.out, d);

    Matrix d_a = Matrix::Zero(blk.conv_b.in_channels, d.cols());
    conv_backward(blk.conv_b, t.act_a, make_geometry(out_size, out_size, 3, 1), d, g.conv_b, &d_a);
    const Matrix d_skip = downsum(d, batch, in_size);
    g.skip.weight.noalias() += d_skip * t.in.transpose();
    g.skip.bias += d_skip.rowwise().sum();
    d_a = relu_mask(t.act_a, d_a);

    Matrix d_in = up_conv_backward(blk.conv_a, t.in, d_a, batch, in_size, g.conv_a);
    d_in.noalias() += blk.skip.weight.transpose() * d_skip;
    d = std::move(d_in);
    out_size = in_size;
  }
  return to_tensor(d, batch, out_size, out_size);
}

void encode_backward(const EncoderTrace& trace, const ModelParams& m, const Tensor4& d_z,
                     ModelParams& grads) {
  const int batch = trace.batch;
  if (d_z.n != batch || d_z.c != m.latent_channels || d_z.h != m.latent_size() ||
      d_z.w != m.latent_size())
    throw Error(Errc::ShapeMismatch, "encoder upstream gradient");

  Matrix d = to_matrix(d_z);
  int out_size = m.latent_size();
  for (int i = 2; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const auto& t = trace.blocks[idx];
    const auto& blk = m.encoder[idx];
    auto& g = grads.encoder[idx];
    const int in_size = out_size * 2;
    if (i < 2) d = relu_mask(t.out, d);

    Matrix d_a = Matrix::Zero(blk.conv_b.in_channels, d.cols());
    conv_backward(blk.conv_b, t.act_a, make_geometry(out_size, out_size, 3, 1), d, g.conv_b, &d_a);
    d_a = relu_mask(t.act_a, d_a);
    // The first block's input is the image; its gradient is not needed.
    Matrix d_in;
    if (i > 0) d_in = Matrix::Zero(blk.conv_a.in_channels, t.in.cols());
    Matrix* dx = i > 0 ? &d_in : nullptr;
    conv_backward(blk.skip, t.in, make_geometry(in_size, in_size, 1, 2), d, g.skip, dx);
    conv_backward(blk.conv_a, t.in, make_geometry(in_size, in_size, 3, 2), d_a, g.conv_a, dx);
    d = std::move(d_in);
    out_size = in_size;
  }
}

Tensor4 residual_map(const Tensor4& x, const Tensor4& xhat, double smoothing_sigma) {
  require_same_shape(x, xhat, "residual_map inputs differ in shape");
  if (x.c != 1) throw Error(Errc::ShapeMismatch, "residual_map expects single-channel images");
  if (smoothing_sigma < 0.0) throw Error(Errc::InvalidConfig, "smoothing sigma must be >= 0");
  Tensor4 out(x.n, 1, x.h, x.w);
  std::vector<double> diff(x.plane());
  for (int b = 0; b < x.n; ++b) {
    const auto xs = x.sample(b);
    const auto ys = xhat.sample(b);
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::abs(xs[i] - ys[i]);
    const auto smoothed = gaussian_blur(diff, x.h, x.w, smoothing_sigma);
    std::copy(smoothed.begin(), smoothed.end(), out.sample(b).begin());
  }
  return out;
}

std::vector<double> image_score(const Tensor4& anomaly_map, double top_q) {
  if (!(top_q > 0.0 && top_q <= 1.0)) throw Error(Errc::InvalidConfig, "top_q must lie in (0, 1]");
  const auto pixels = anomaly_map.sample_stride();
  if (pixels == 0) throw Error(Errc::ShapeMismatch, "empty anomaly map");
  // Guard against ceil(7.000000000000001) = 8 style round-up.
  auto count = static_cast<std::size_t>(std::ceil(top_q * static_cast<double>(pixels) - 1e-9));
  count = std::clamp<std::size_t>(count, 1, pixels);

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(anomaly_map.n));
  std::vector<double> values(pixels);
  for (int b = 0; b < anomaly_map.n; ++b) {
    const auto s = anomaly_map.sample(b);
    std::copy(s.begin(), s.end(), values.begin());
    std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(count), values.end(),
                      std::greater<>());
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) total += values[i];
    scores.push_back(total / static_cast<double>(count));
  }
  return scores;
}

}  // namespace popusense::pdc
