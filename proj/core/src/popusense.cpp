#include "popusense/popusense.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "popusense/error.hpp"

namespace popusense::context {

namespace hg = popusense::hypergraph;

std::string_view variant_name(Variant v) noexcept { return v == Variant::narrow ? "narrow" : "wide"; }

Variant parse_variant(std::string_view name) {
  if (name == "narrow") return Variant::narrow;
  if (name == "wide") return Variant::wide;
  throw Error(Errc::InvalidConfig, "unknown PopuSense variant '" + std::string(name) + "'");
}

PopuSenseConfig PopuSenseConfig::defaults(Variant v) {
  PopuSenseConfig cfg;
  cfg.variant = v;
  cfg.k = v == Variant::narrow ? 8 : 10;
  return cfg;
}

void PopuSenseConfig::validate() const {
  if (k < 1) throw Error(Errc::InvalidConfig, "popusense k must be >= 1");
  if (layers < 1) throw Error(Errc::InvalidConfig, "popusense layers must be >= 1");
}

MemoryBank::MemoryBank(std::size_t capacity, int dim)
    : capacity_(capacity), dim_(dim), storage_(Matrix::Zero(static_cast<Eigen::Index>(capacity), dim)) {}

Matrix MemoryBank::entries() const {
  Matrix out(static_cast<Eigen::Index>(count_), dim_);
  for (std::size_t i = 0; i < count_; ++i)
    out.row(static_cast<Eigen::Index>(i)) = storage_.row(static_cast<Eigen::Index>((head_ + i) % capacity_));
  return out;
}

void MemoryBank::push(const Matrix& rows) {
  if (rows.cols() != dim_) throw Error(Errc::ShapeMismatch, "bank entry width");
  if (capacity_ == 0) return;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (count_ < capacity_) {
      storage_.row(static_cast<Eigen::Index>((head_ + count_) % capacity_)) = rows.row(r);
      ++count_;
    } else {
      storage_.row(static_cast<Eigen::Index>(head_)) = rows.row(r);
      head_ = (head_ + 1) % capacity_;
    }
  }
}

bool operator==(const MemoryBank& a, const MemoryBank& b) {
  return a.capacity_ == b.capacity_ && a.dim_ == b.dim_ && a.count_ == b.count_ &&
         a.entries() == b.entries();
}

RefinerParams RefinerParams::initialize(int channels, std::size_t layers, std::uint64_t seed) {
  if (layers < 1) throw Error(Errc::InvalidConfig, "refiner needs at least one layer");
  RefinerParams p;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / channels);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t l = 0; l < layers; ++l) {
    hg::ConvParams layer;
    layer.theta = Matrix::Zero(channels, channels);
    layer.bias = Eigen::VectorXd::Zero(channels);
    const bool last = l + 1 == layers;
    layer.activation = last ? hg::Activation::linear : hg::Activation::relu;
    if (!last)
      for (Eigen::Index i = 0; i < layer.theta.size(); ++i) layer.theta.data()[i] = dist(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

RefinerParams RefinerParams::zeros_like() const {
  RefinerParams z = *this;
  for (auto& layer : z.layers) {
    layer.theta.setZero();
    layer.bias.setZero();
  }
  return z;
}

namespace {

template <class T, class Self>
std::vector<pdc::ParamRef<T>> collect(Self& self) {
  std::vector<pdc::ParamRef<T>> refs;
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    auto& layer = self.layers[l];
    const std::string prefix = "refiner." + std::to_string(l);
    refs.push_back({prefix + ".theta",
                    {static_cast<int>(layer.theta.rows()), static_cast<int>(layer.theta.cols())},
                    {layer.theta.data(), static_cast<std::size_t>(layer.theta.size())}});
    refs.push_back({prefix + ".bias",
                    {static_cast<int>(layer.bias.size())},
                    {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
  return refs;
}

// Row p of the result is the latent vector at spatial position p.
Matrix sample_vertices(const Tensor4& z, int b) {
  const auto pixels = static_cast<Eigen::Index>(z.plane());
  Matrix x(pixels, z.c);
  const double* base = z.data.data() + b * z.sample_stride();
  for (int c = 0; c < z.c; ++c)
    for (Eigen::Index p = 0; p < pixels; ++p) x(p, c) = base[static_cast<std::size_t>(c) * pixels + p];
  return x;
}

Matrix run_stack(const Matrix& x, const hg::Hypergraph& g, const RefinerParams& p,
                 std::vector<Matrix>* inputs) {
  Matrix cur = x;
  for (const auto& layer : p.layers) {
    if (inputs) inputs->push_back(cur);
    cur = hg::hgconv(cur, g, layer);
  }
  return cur;
}

Matrix stack_backward(const RefineTrace::Stack& s, const RefinerParams& p, Matrix upstream,
                      RefinerParams& grads) {
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    auto step = hg::hgconv_grad(s.inputs[l], s.graph, p.layers[l], upstream);
    grads.layers[l].theta += step.d_theta;
    grads.layers[l].bias += step.d_bias;
    upstream = std::move(step.d_x);
  }
  return upstream;
}

void check_refiner(const Tensor4& z, const RefinerParams& p) {
  if (p.layers.empty()) throw Error(Errc::InvalidConfig, "refiner has no layers");
  for (const auto& layer : p.layers)
    if (layer.theta.rows() != z.c || layer.theta.cols() != z.c)
      throw Error(Errc::ShapeMismatch, "refiner width does not match latent channels");
  if (z.n < 1) throw Error(Errc::ShapeMismatch, "empty latent batch");
}

Tensor4 narrow_impl(const Tensor4& z, const PopuSenseConfig& cfg, const RefinerParams& p,
                    RefineTrace* trace) {
  if (cfg.variant != Variant::narrow) throw Error(Errc::InvalidConfig, "refine_narrow needs variant=narrow");
  check_refiner(z, p);
  Tensor4 out = z;
  const auto pixels = z.plane();
  for (int b = 0; b < z.n; ++b) {
    const Matrix x = sample_vertices(z, b);
    RefineTrace::Stack stack{hg::knn_hyperedges(x, cfg.k), {}};
    const Matrix delta = run_stack(x, stack.graph, p, trace ? &stack.inputs : nullptr);
    double* base = out.data.data() + b * out.sample_stride();
    for (int c = 0; c < z.c; ++c)
      for (std::size_t q = 0; q < pixels; ++q)
        base[c * pixels + q] += delta(static_cast<Eigen::Index>(q), c);
    if (trace) trace->stacks.push_back(std::move(stack));
  }
  return out;
}

Tensor4 wide_impl(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                  const RefinerParams& p, RefineTrace* trace) {
  if (cfg.variant != Variant::wide) throw Error(Errc::InvalidConfig, "refine_wide needs variant=wide");
  check_refiner(z, p);
  if (bank.count() > 0 && bank.dim() != z.c) throw Error(Errc::ShapeMismatch, "bank width");
  const auto vertices = bank.count() + static_cast<std::size_t>(z.n);
  if (vertices <= cfg.k)
    throw Error(Errc::BankTooSmall, std::to_string(vertices) + " vertices for k=" + std::to_string(cfg.k));

  Matrix x(static_cast<Eigen::Index>(vertices), z.c);
  x.topRows(z.n) = pool_latent(z);
  if (bank.count() > 0) x.bottomRows(static_cast<Eigen::Index>(bank.count())) = bank.entries();

  RefineTrace::Stack stack{hg::knn_hyperedges(x, cfg.k), {}};
  const Matrix delta = run_stack(x, stack.graph, p, trace ? &stack.inputs : nullptr);

  Tensor4 out = z;
  const auto pixels = z.plane();
  for (int b = 0; b < z.n; ++b) {
    double* base = out.data.data() + b * out.sample_stride();
    for (int c = 0; c < z.c; ++c)
      for (std::size_t q = 0; q < pixels; ++q) base[c * pixels + q] += delta(b, c);
  }
  if (trace) trace->stacks.push_back(std::move(stack));
  return out;
}

}  // namespace

std::vector<pdc::ParamRef<double>> RefinerParams::params() { return collect<double>(*this); }

std::vector<pdc::ParamRef<const double>> RefinerParams::params() const {
  return collect<const double>(*this);
}

bool operator==(const RefinerParams& a, const RefinerParams& b) {
  if (a.seed != b.seed || a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.activation != y.activation || x.theta.rows() != y.theta.rows() ||
        x.theta.cols() != y.theta.cols() || x.theta != y.theta || x.bias != y.bias)
      return false;
  }
  return true;
}

Matrix pool_latent(const Tensor4& z) {
  Matrix pooled(z.n, z.c);
  const auto pixels = z.plane();
  for (int b = 0; b < z.n; ++b)
    for (int c = 0; c < z.c; ++c) {
      const double* plane = z.data.data() + b * z.sample_stride() + c * pixels;
      double total = 0.0;
      for (std::size_t q = 0; q < pixels; ++q) total += plane[q];
      pooled(b, c) = total / static_cast<double>(pixels);
    }
  return pooled;
}

MemoryBank bank_update(MemoryBank bank, const Tensor4& z) {
  bank.push(pool_latent(z));
  return bank;
}

Tensor4 refine_narrow(const Tensor4& z, const PopuSenseConfig& cfg, const RefinerParams& p) {
  return narrow_impl(z, cfg, p, nullptr);
}

Tensor4 refine_wide(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                    const RefinerParams& p) {
  return wide_impl(z, bank, cfg, p, nullptr);
}

Tensor4 refine(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
               const RefinerParams& p) {
  return cfg.variant == Variant::narrow ? refine_narrow(z, cfg, p) : refine_wide(z, bank, cfg, p);
}

Tensor4 refine_traced(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                      const RefinerParams& p, RefineTrace& trace) {
  trace = RefineTrace{};
  trace.variant = cfg.variant;
  trace.batch = z.n;
  trace.channels = z.c;
  trace.height = z.h;
  trace.width = z.w;
  return cfg.variant == Variant::narrow ? narrow_impl(z, cfg, p, &trace)
                                        : wide_impl(z, bank, cfg, p, &trace);
}

Tensor4 refine_backward(const RefineTrace& trace, const RefinerParams& p, const Tensor4& d_out,
                        RefinerParams& grads) {
  if (d_out.n != trace.batch || d_out.c != trace.channels || d_out.h != trace.height ||
      d_out.w != trace.width)
    throw Error(Errc::ShapeMismatch, "refine upstream gradient");
  Tensor4 d_z = d_out;
  const auto pixels = d_out.plane();

  if (trace.variant == Variant::narrow) {
    for (int b = 0; b < trace.batch; ++b) {
      const Matrix up = sample_vertices(d_out, b);
      const Matrix d_x = stack_backward(trace.stacks[static_cast<std::size_t>(b)], p, up, grads);
      double* base = d_z.data.data() + b * d_z.sample_stride();
      for (int c = 0; c < d_z.c; ++c)
        for (std::size_t q = 0; q < pixels; ++q)
          base[c * pixels + q] += d_x(static_cast<Eigen::Index>(q), c);
    }
    return d_z;
  }

  const auto& stack = trace.stacks.front();
  Matrix up = Matrix::Zero(static_cast<Eigen::Index>(stack.graph.num_vertices()), trace.channels);
  // Broadcast over the grid in the forward pass sums over it here.
  for (int b = 0; b < trace.batch; ++b)
    for (int c = 0; c < trace.channels; ++c) {
      const double* plane = d_out.data.data() + b * d_out.sample_stride() + c * pixels;
      double total = 0.0;
      for (std::size_t q = 0; q < pixels; ++q) total += plane[q];
      up(b, c) = total;
    }
  const Matrix d_x = stack_backward(stack, p, std::move(up), grads);
  const double inv = 1.0 / static_cast<double>(pixels);
  for (int b = 0; b < trace.batch; ++b) {
    double* base = d_z.data.data() + b * d_z.sample_stride();
    for (int c = 0; c < d_z.c; ++c) {
      const double share = d_x(b, c) * inv;
      for (std::size_t q = 0; q < pixels; ++q) base[c * pixels + q] += share;
    }
  }
  return d_z;
}

}  // namespace popusense::context
