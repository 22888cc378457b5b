#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "popusense/hypergraph.hpp"
#include "popusense/pdc_core.hpp"
#include "popusense/tensor.hpp"

namespace popusense::context {

using Matrix = Eigen::MatrixXd;

/// Narrow: hypergraph over one sample's spatial latent vectors.
/// Wide: hypergraph over pooled latents of the batch plus the memory bank.
enum class Variant { narrow, wide };

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);

struct PopuSenseConfig {
  Variant variant = Variant::narrow;
  std::size_t k = 8;
  std::size_t layers = 2;
  std::size_t bank_capacity = 256;

  static PopuSenseConfig defaults(Variant v);
  void validate() const;

  friend bool operator==(const PopuSenseConfig&, const PopuSenseConfig&) = default;
};

/// FIFO store of pooled latent vectors from normal training samples.
/// Entries are reported oldest first.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, int dim);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t count() const noexcept { return count_; }
  int dim() const noexcept { return dim_; }

  /// count × dim, oldest entry first.
  Matrix entries() const;

  /// Appends rows in order, evicting the oldest beyond capacity.
  void push(const Matrix& rows);

  friend bool operator==(const MemoryBank& a, const MemoryBank& b);

 private:
  std::size_t capacity_ = 0;
  int dim_ = 0;
  std::size_t count_ = 0;
  std::size_t head_ = 0;  // slot of the oldest entry
  Matrix storage_;
};

/// Stack of hypergraph convolutions C → C. Hidden layers use relu, the last
/// layer (the output projection) is linear and starts at zero so that a
/// fresh refiner is the identity.
struct RefinerParams {
  std::vector<hypergraph::ConvParams> layers;
  std::uint64_t seed = 0;

  static RefinerParams initialize(int channels, std::size_t layers, std::uint64_t seed);
  RefinerParams zeros_like() const;

  std::vector<pdc::ParamRef<double>> params();
  std::vector<pdc::ParamRef<const double>> params() const;

  hypergraph::ConvParams& output_projection() { return layers.back(); }
  const hypergraph::ConvParams& output_projection() const { return layers.back(); }

  friend bool operator==(const RefinerParams& a, const RefinerParams& b);
};

/// Spatial mean per sample and channel: B×C.
Matrix pool_latent(const Tensor4& z);

MemoryBank bank_update(MemoryBank bank, const Tensor4& z);

Tensor4 refine_narrow(const Tensor4& z, const PopuSenseConfig& cfg, const RefinerParams& p);
Tensor4 refine_wide(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                    const RefinerParams& p);
Tensor4 refine(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
               const RefinerParams& p);

/// State kept by refine_traced() for refine_backward(). One graph per sample
/// for the narrow variant, a single graph for the wide variant.
struct RefineTrace {
  Variant variant = Variant::narrow;
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  struct Stack {
    hypergraph::Hypergraph graph;
    std::vector<Matrix> inputs;  // input to each layer
  };
  std::vector<Stack> stacks;
};

Tensor4 refine_traced(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                      const RefinerParams& p, RefineTrace& trace);

/// Accumulates parameter gradients into grads and returns dLoss/dz. Bank
/// vertices act as constants.
Tensor4 refine_backward(const RefineTrace& trace, const RefinerParams& p, const Tensor4& d_out,
                        RefinerParams& grads);

}  // namespace popusense::context
