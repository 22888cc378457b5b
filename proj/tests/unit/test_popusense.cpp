#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "popusense/error.hpp"
#include "popusense/popusense.hpp"

using namespace popusense;
using namespace popusense::context;
using hypergraph::Activation;
using Matrix = Eigen::MatrixXd;

namespace {

Tensor4 random_latent(int n, int c, int s, std::uint64_t seed, int w = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  Tensor4 z(n, c, s, w ? w : s);
  for (auto& v : z.data) v = d(rng);
  return z;
}

RefinerParams randomized(RefinerParams p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 0.7);
  for (auto& ref : p.params())
    for (auto& v : ref.values) v = d(rng);
  return p;
}

PopuSenseConfig config(Variant v, std::size_t k, std::size_t layers = 2, std::size_t capacity = 256) {
  PopuSenseConfig c;
  c.variant = v;
  c.k = k;
  c.layers = layers;
  c.bank_capacity = capacity;
  return c;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::IoError;
}

}  // namespace

TEST(PopuSenseConfig, Defaults) {
  EXPECT_EQ(PopuSenseConfig::defaults(Variant::narrow).k, 8u);
  EXPECT_EQ(PopuSenseConfig::defaults(Variant::wide).k, 10u);
  EXPECT_EQ(PopuSenseConfig::defaults(Variant::wide).layers, 2u);
  EXPECT_EQ(PopuSenseConfig::defaults(Variant::wide).bank_capacity, 256u);
  EXPECT_EQ(code_of([] { config(Variant::narrow, 0).validate(); }), Errc::InvalidConfig);
  EXPECT_EQ(code_of([] { config(Variant::narrow, 2, 0).validate(); }), Errc::InvalidConfig);
}

TEST(PoolLatent, Examples) {
  const auto constant = pool_latent(Tensor4(2, 3, 4, 4, 1.25));
  EXPECT_EQ(constant, Matrix::Constant(2, 3, 1.25));
  Tensor4 one(1, 2, 8, 8);
  one.at(0, 1, 3, 5) = 6.4;
  const auto p = pool_latent(one);
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(p(0, 1), 6.4 / 64);
  const auto z = random_latent(2, 3, 2, 1);
  const auto pr = pool_latent(z);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(pr(b, c), (z.at(b, c, 0, 0) + z.at(b, c, 0, 1) + z.at(b, c, 1, 0) + z.at(b, c, 1, 1)) / 4, 1e-15);
}

TEST(MemoryBank, Fifo) {
  MemoryBank bank(2, 1);
  bank.push(rows({{1}, {2}, {3}}));
  EXPECT_EQ(bank.count(), 2u);
  EXPECT_EQ(bank.entries(), rows({{2}, {3}}));

  MemoryBank roomy(8, 2);
  roomy.push(rows({{1, 1}, {2, 2}, {3, 3}}));
  EXPECT_EQ(roomy.count(), 3u);
  EXPECT_EQ(roomy.entries(), rows({{1, 1}, {2, 2}, {3, 3}}));
}

TEST(MemoryBank, ReplayAgainstListOracle) {
  MemoryBank bank(256, 3);
  std::vector<std::array<double, 3>> all;
  for (int step = 0; step < 75; ++step) {
    Tensor4 z(4, 3, 2, 2);
    for (int b = 0; b < 4; ++b) {
      const double id = step * 4 + b;
      all.push_back({id, -id, 0.5 * id});
      for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 4; ++p) z.data[(b * 3 + c) * 4 + p] = all.back()[c];
    }
    bank = bank_update(std::move(bank), z);
  }
  ASSERT_EQ(all.size(), 300u);
  ASSERT_EQ(bank.count(), 256u);
  const Matrix e = bank.entries();
  for (int i = 0; i < 256; ++i)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(e(i, c), all[44 + i][c]);
}

TEST(Refine, IdentityAtInitialization) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto z = random_latent(3, 8, 4, seed);
    const auto p = RefinerParams::initialize(8, 2, seed);
    EXPECT_EQ(refine_narrow(z, config(Variant::narrow, 8), p), z);
    MemoryBank bank(16, 8);
    bank.push(pool_latent(random_latent(9, 8, 4, seed + 10)));
    EXPECT_EQ(refine_wide(z, bank, config(Variant::wide, 10), p), z);
  }
}

TEST(Refine, NarrowSpatialExample) {
  Tensor4 z(1, 1, 2, 2);
  z.data = {1, 3, 5, 7};
  auto p = RefinerParams::initialize(1, 1, 0);
  p.layers[0].theta = Matrix::Ones(1, 1);
  // Brute-force kNN on the line 1,3,5,7 with ties to the lower index:
  // edges {0,1}, {1,2}, {2,3}.
  Matrix h = Matrix::Zero(4, 3);
  h(0, 0) = h(1, 0) = h(1, 1) = h(2, 1) = h(2, 2) = h(3, 2) = 1;
  const Matrix x = rows({{1}, {3}, {5}, {7}});
  const Matrix delta =
      oracle::dense_hgconv({h, Eigen::VectorXd::Ones(3)}, x, Matrix::Ones(1, 1), Eigen::VectorXd::Zero(1), false);
  const auto out = refine_narrow(z, config(Variant::narrow, 1, 1), p);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data[i], z.data[i] + delta(i, 0), 1e-14);
}

TEST(Refine, NarrowSamplesAreIndependent) {
  const auto p = randomized(RefinerParams::initialize(4, 2, 1), 2);
  const auto cfg = config(Variant::narrow, 3);
  auto z = random_latent(3, 4, 4, 5);
  std::copy(z.sample(0).begin(), z.sample(0).end(), z.sample(2).begin());
  const auto out = refine_narrow(z, cfg, p);
  EXPECT_TRUE(std::equal(out.sample(0).begin(), out.sample(0).end(), out.sample(2).begin()));

  Tensor4 single(1, 4, 4, 4);
  std::copy(z.sample(1).begin(), z.sample(1).end(), single.data.begin());
  const auto alone = refine_narrow(single, cfg, p);
  EXPECT_TRUE(std::equal(alone.data.begin(), alone.data.end(), out.sample(1).begin()));

  Tensor4 swapped = z;
  std::copy(z.sample(0).begin(), z.sample(0).end(), swapped.sample(1).begin());
  std::copy(z.sample(1).begin(), z.sample(1).end(), swapped.sample(0).begin());
  const auto sout = refine_narrow(swapped, cfg, p);
  EXPECT_TRUE(std::equal(sout.sample(0).begin(), sout.sample(0).end(), out.sample(1).begin()));
  EXPECT_TRUE(std::equal(sout.sample(1).begin(), sout.sample(1).end(), out.sample(0).begin()));
}

TEST(Refine, NarrowKTooLarge) {
  EXPECT_EQ(code_of([] {
              refine_narrow(random_latent(1, 2, 2, 1), config(Variant::narrow, 4),
                            RefinerParams::initialize(2, 2, 1));
            }),
            Errc::KTooLarge);
}

TEST(Refine, WideEmptyBankUsesBatchOnly) {
  const auto z = random_latent(2, 2, 2, 3);
  auto p = RefinerParams::initialize(2, 1, 0);
  p.layers[0].theta = Matrix::Identity(2, 2);
  const auto out = refine_wide(z, MemoryBank(8, 2), config(Variant::wide, 1, 1), p);
  const Matrix pooled = pool_latent(z);
  const Matrix delta = oracle::dense_hgconv({Matrix::Ones(2, 1), Eigen::VectorXd::Ones(1)}, pooled,
                                            Matrix::Identity(2, 2), Eigen::VectorXd::Zero(2), false);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) EXPECT_NEAR(out.at(b, c, y, x), z.at(b, c, y, x) + delta(b, c), 1e-14);
}

TEST(Refine, WideTwoVertexClosedForm) {
  const auto z = random_latent(1, 2, 2, 4);
  MemoryBank bank(4, 2);
  bank.push(rows({{0.5, -1.5}}));
  auto p = RefinerParams::initialize(2, 1, 0);
  p.layers[0].theta = Matrix::Identity(2, 2);
  const auto out = refine_wide(z, bank, config(Variant::wide, 1, 1), p);
  // Single edge {batch, u}: both vertices receive (pooled + u) / 2.
  const Matrix pooled = pool_latent(z);
  for (int c = 0; c < 2; ++c) {
    const double delta = (pooled(0, c) + bank.entries()(0, c)) / 2;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) EXPECT_NEAR(out.at(0, c, y, x), z.at(0, c, y, x) + delta, 1e-14);
  }
}

TEST(Refine, WideBankTooSmall) {
  const auto p = RefinerParams::initialize(2, 1, 0);
  EXPECT_EQ(code_of([&] { refine_wide(random_latent(1, 2, 2, 1), MemoryBank(4, 2), config(Variant::wide, 1, 1), p); }),
            Errc::BankTooSmall);
}

TEST(Refine, WideIsContextSensitive) {
  const auto z = random_latent(1, 3, 2, 6);
  const auto p = randomized(RefinerParams::initialize(3, 2, 0), 7);
  const Matrix pooled = pool_latent(z);
  MemoryBank a(4, 3), b(4, 3);
  Matrix near = pooled;
  near(0, 0) += 0.1;
  Matrix far = Matrix::Constant(1, 3, 50.0);
  a.push(near);
  a.push(far);
  Matrix moved = near;
  moved(0, 1) -= 0.2;
  b.push(moved);
  b.push(far);
  const auto cfg = config(Variant::wide, 1);
  const auto out_a = refine_wide(z, a, cfg, p), out_b = refine_wide(z, b, cfg, p);
  double diff = 0.0;
  for (std::size_t i = 0; i < out_a.size(); ++i) diff += std::abs(out_a.data[i] - out_b.data[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Refine, Dispatch) {
  const auto z = random_latent(2, 3, 4, 8);
  const auto p = randomized(RefinerParams::initialize(3, 2, 0), 9);
  MemoryBank bank(8, 3);
  bank.push(pool_latent(random_latent(6, 3, 4, 10)));
  EXPECT_EQ(refine(z, bank, config(Variant::narrow, 3), p), refine_narrow(z, config(Variant::narrow, 3), p));
  EXPECT_EQ(refine(z, bank, config(Variant::wide, 3), p), refine_wide(z, bank, config(Variant::wide, 3), p));
}

namespace {

void check_refine_gradients(const Tensor4& z, const MemoryBank& bank, const PopuSenseConfig& cfg,
                            const RefinerParams& p, std::uint64_t seed) {
  const auto u = random_latent(z.n, z.c, z.h, seed, z.w);
  auto objective = [&](const Tensor4& zz, const RefinerParams& pp) {
    const auto out = refine(zz, bank, cfg, pp);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * u.data[i];
    return s;
  };
  RefineTrace trace;
  refine_traced(z, bank, cfg, p, trace);
  auto grads = p.zeros_like();
  const auto dz = refine_backward(trace, p, u, grads);

  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Tensor4 zp = z, zm = z;
    zp.data[i] += h;
    zm.data[i] -= h;
    EXPECT_LT(oracle::grad_rel_error(dz.data[i], (objective(zp, p) - objective(zm, p)) / (2 * h)), 1e-4) << "z" << i;
  }
  auto probe = p;
  auto refs = probe.params();
  const auto grefs = std::as_const(grads).params();
  for (std::size_t b = 0; b < refs.size(); ++b)
    for (std::size_t i = 0; i < refs[b].values.size(); ++i) {
      const double saved = refs[b].values[i];
      refs[b].values[i] = saved + h;
      const double up = objective(z, probe);
      refs[b].values[i] = saved - h;
      const double down = objective(z, probe);
      refs[b].values[i] = saved;
      EXPECT_LT(oracle::grad_rel_error(grefs[b].values[i], (up - down) / (2 * h)), 1e-4) << refs[b].name << i;
    }
}

}  // namespace

TEST(RefineGradients, NarrowMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto z = random_latent(2, 3, 2, 20 + seed, 4);  // 8 spatial vertices per sample
    const auto p = randomized(RefinerParams::initialize(3, 2, 0), 30 + seed);
    check_refine_gradients(z, MemoryBank(4, 3), config(Variant::narrow, 2), p, 40 + seed);
  }
}

TEST(RefineGradients, WideMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto z = random_latent(3, 3, 2, 50 + seed);
    MemoryBank bank(5, 3);
    bank.push(pool_latent(random_latent(5, 3, 2, 60 + seed)));  // 3 batch + 5 bank vertices
    const auto p = randomized(RefinerParams::initialize(3, 2, 0), 70 + seed);
    check_refine_gradients(z, bank, config(Variant::wide, 3), p, 80 + seed);
  }
}

TEST(RefineGradients, BankEntriesInfluenceLossButAreNotWritten) {
  const auto z = random_latent(2, 3, 2, 90);
  MemoryBank bank(6, 3);
  bank.push(pool_latent(random_latent(6, 3, 2, 91)));
  const MemoryBank before = bank;
  const auto p = randomized(RefinerParams::initialize(3, 2, 0), 92);
  const auto cfg = config(Variant::wide, 3);
  RefineTrace trace;
  const auto out = refine_traced(z, bank, cfg, p, trace);
  auto grads = p.zeros_like();
  refine_backward(trace, p, out, grads);
  EXPECT_EQ(bank, before);

  auto loss_with = [&](const MemoryBank& b) {
    const auto o = refine_wide(z, b, cfg, p);
    double s = 0.0;
    for (double v : o.data) s += v * v;
    return s;
  };
  Matrix e = bank.entries();
  e.array() += 1e-3;
  MemoryBank nudged(6, 3);
  nudged.push(e);
  EXPECT_NE(loss_with(nudged), loss_with(bank));
}
