#include "gema/error.hpp"
#include "gema/geometry.hpp"
#include "gema/proman_vae.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace gema;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Internal;
}

DatasetFrame io_frame(std::size_t n, int dx, int dy, std::uint64_t seed) {
  RngStream rng(seed, 3);
  std::ostringstream csv;
  Schema schema;
  for (int j = 0; j < dx; ++j) {
    csv << (j ? "," : "") << "x" << j + 1;
    schema["x" + std::to_string(j + 1)] = ColumnRole::Input;
  }
  for (int k = 0; k < dy; ++k) {
    csv << ",y" << k + 1;
    schema["y" + std::to_string(k + 1)] = ColumnRole::Output;
  }
  csv << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < dx; ++j) csv << (j ? "," : "") << rng.uniform(0.5, 4.0);
    for (int k = 0; k < dy; ++k) csv << "," << rng.uniform(0.5, 4.0);
    csv << "\n";
  }
  return parse_csv(csv.str(), schema);
}

ProManModel random_model(const DatasetFrame& frame, Activation act, bool spectral, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.latent_dim = 2;
  cfg.activation = act;
  cfg.spectral_norm = spectral;
  RngStream rng(seed, 1);
  ProManModel m = make_model(fit_features(frame, cfg), cfg, rng);
  for (auto span : m.parameter_spans()) {
    for (double& p : span) p = rng.uniform(-0.8, 0.8);
  }
  m.decoder.reset_power_iteration(50);
  m.set_dropout(0.0);
  m.fitted = true;
  return m;
}

// Replace the decoder with the given linear layers; whitening becomes `w`.
void set_linear_decoder(ProManModel& m, const std::vector<Matrix>& weights, const Matrix& w) {
  auto& layers = m.decoder.layers();
  layers.clear();
  for (const Matrix& wt : weights) {
    DenseLayer l;
    l.weight = wt;
    l.bias = Vector::Zero(wt.rows());
    l.activation = Activation::Linear;
    l.sn_u = Vector::Ones(wt.rows()).normalized();
    l.sn_v = Vector::Ones(wt.cols()).normalized();
    layers.push_back(l);
  }
  m.decoder.spectral_norm = false;
  m.meta.whitening.w = w;
  m.meta.whitening.mean = Vector::Zero(w.cols());
}

}  // namespace

TEST_CASE("jacobian of a linear decoder is A W") {
  const DatasetFrame f = io_frame(20, 3, 2, 1);
  ProManModel m = random_model(f, Activation::Gelu, false, 2);
  Matrix a(2, 3);
  a << 1, -2, 0.5, 0.3, 4, -1;
  Matrix full = Matrix::Zero(2, 3 + 2);
  full.leftCols(3) = a;
  full.rightCols(2) << 7, 8, 9, 10;
  Matrix w(3, 3);
  w << 2, 0, 0, 0.5, 1, 0, -1, 0.25, 3;
  set_linear_decoder(m, {full}, w);
  const Matrix j = decoder_jacobian(m, Vector::Ones(3), Vector::Zero(2));
  CHECK((j - a * w).cwiseAbs().maxCoeff() < 1e-12);

  set_linear_decoder(m, {(Matrix(2, 5) << 1, 0, 0, 0, 0, 0, 1, 0, 0, 0).finished()}, Matrix::Identity(3, 3));
  const Matrix j2 = decoder_jacobian(m, Vector::Zero(3), Vector::Ones(2));
  CHECK((j2 - (Matrix(2, 3) << 1, 0, 0, 0, 1, 0).finished()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(code_of([&] { decoder_jacobian(m, Vector::Zero(2), Vector::Ones(2)); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("jacobian matches finite differences") {
  for (Activation act : {Activation::Gelu, Activation::Silu, Activation::Softplus}) {
    for (bool spectral : {false, true}) {
      const DatasetFrame f = io_frame(40, 2, 2, 5);
      const ProManModel m = random_model(f, act, spectral, 9);
      const ModelData data = prepare(m, f);
      RngStream rng(13);
      double worst = 0.0;
      for (int r = 0; r < 20; ++r) {
        const Vector x = data.x.col(static_cast<Eigen::Index>(rng.index(data.size())));
        const Vector z = Vector::NullaryExpr(2, [&] { return rng.normal(); });
        const Matrix j = decoder_jacobian(m, x, z);
        const double h = 1e-6;
        for (int c = 0; c < 2; ++c) {
          Vector up = x;
          Vector down = x;
          up(c) += h;
          down(c) -= h;
          const Vector fd = (decode_frontier(m, up, z) - decode_frontier(m, down, z)) / (2.0 * h);
          for (int o = 0; o < 2; ++o) {
            const double scale = std::max({std::abs(fd(o)), std::abs(j(o, c)), 1e-3});
            worst = std::max(worst, std::abs(fd(o) - j(o, c)) / scale);
          }
        }
      }
      CHECK(worst < 1e-5);
    }
  }
}

TEST_CASE("lipschitz bound hand cases") {
  const DatasetFrame f1 = io_frame(10, 1, 1, 2);
  ProManModel m = random_model(f1, Activation::Gelu, false, 3);
  set_linear_decoder(m, {(Matrix(1, 3) << 2, 100, -100).finished()}, Matrix::Identity(1, 1));
  CHECK(std::abs(lipschitz_bound(m) - 2.0) < 1e-12);

  const DatasetFrame f2 = io_frame(10, 2, 2, 2);
  ProManModel m2 = random_model(f2, Activation::Gelu, false, 3);
  Matrix first = Matrix::Zero(2, 4);
  first.leftCols(2) = 2.0 * Matrix::Identity(2, 2);
  set_linear_decoder(m2, {first, 3.0 * Matrix::Identity(2, 2)}, Matrix::Identity(2, 2));
  CHECK(std::abs(lipschitz_bound(m2) - 6.0) < 1e-12);

  set_linear_decoder(m2, {Matrix::Zero(2, 4), Matrix::Identity(2, 2)}, Matrix::Identity(2, 2));
  CHECK(code_of([&] { lipschitz_bound(m2); }) == ErrorCode::ZeroMatrix);
}

TEST_CASE("lipschitz bound survives random probes") {
  for (Activation act : {Activation::Gelu, Activation::Silu, Activation::Softplus}) {
    for (bool spectral : {false, true}) {
      const DatasetFrame f = io_frame(60, 2, 2, 21);
      const ProManModel m = random_model(f, act, spectral, 4);
      const double l = lipschitz_bound(m);
      const ModelData data = prepare(m, f);
      const Vector lo = data.x.rowwise().minCoeff();
      const Vector hi = data.x.rowwise().maxCoeff();
      const Vector z = encode_batch(m, data).mu_z.col(0);
      RngStream rng(101);
      const int pairs = 100000;
      Matrix a(2, pairs);
      Matrix b(2, pairs);
      for (int p = 0; p < pairs; ++p) {
        for (int c = 0; c < 2; ++c) {
          a(c, p) = rng.uniform(lo(c), hi(c));
          // Half the probes are close pairs where the local slope dominates.
          b(c, p) = p % 2 ? rng.uniform(lo(c), hi(c)) : a(c, p) + 1e-3 * rng.normal();
        }
      }
      const std::vector<int> zeros(static_cast<std::size_t>(pairs), 0);
      const Matrix zz = z.replicate(1, pairs);
      const Matrix ga = decode_frontier_batch(m, a, zz, zeros, zeros);
      const Matrix gb = decode_frontier_batch(m, b, zz, zeros, zeros);
      double worst = 0.0;
      for (int p = 0; p < pairs; ++p) {
        const double dx = (a.col(p) - b.col(p)).norm();
        if (dx > 0.0) worst = std::max(worst, (ga.col(p) - gb.col(p)).norm() / dx);
      }
      INFO(to_string(act) << " spectral=" << spectral << " worst=" << worst << " bound=" << l);
      CHECK(worst <= l);
    }
  }
}

TEST_CASE("radius of an exact linear decoder") {
  const DatasetFrame f = io_frame(15, 1, 1, 8);
  ProManModel m = random_model(f, Activation::Gelu, false, 3);
  set_linear_decoder(m, {(Matrix(1, 3) << 2, 0.5, -0.5).finished()}, Matrix::Identity(1, 1));
  for (const CertificationRecord& r : certification_radius(m, f)) {
    CHECK(std::abs(r.sigma_min - 2.0) < 1e-12);
    CHECK(std::abs(r.l_bound - 2.0) < 1e-12);
    CHECK(std::abs(r.r_cert - 1.0) < 1e-12);
  }

  const DatasetFrame g = io_frame(15, 2, 2, 8);
  ProManModel d = random_model(g, Activation::Gelu, false, 3);
  Matrix rank1 = Matrix::Zero(2, 4);
  rank1.leftCols(2) << 1, 2, 2, 4;
  set_linear_decoder(d, {rank1}, Matrix::Identity(2, 2));
  for (const CertificationRecord& r : certification_radius(d, g)) {
    CHECK(r.r_cert < 1e-12);
    CHECK(r.r_cert >= 0.0);
  }
}

TEST_CASE("radius records are consistent and thread independent") {
  const DatasetFrame f = io_frame(80, 2, 2, 30);
  const ProManModel m = random_model(f, Activation::Gelu, false, 31);
  const auto one = certification_radius(m, f, 1);
  const auto four = certification_radius(m, f, 4);
  REQUIRE(one.size() == f.n_rows());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].row == i);
    CHECK(one[i].r_cert >= 0.0);
    CHECK(std::abs(one[i].r_cert * one[i].l_bound - one[i].sigma_min) <= 1e-12 * std::max(1.0, one[i].sigma_min));
    CHECK(one[i].r_cert == four[i].r_cert);
    CHECK(one[i].sigma_min == four[i].sigma_min);
  }
  const DatasetFrame other = io_frame(5, 1, 2, 1);
  CHECK(code_of([&] { certification_radius(m, other); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("radius is invariant to rescaling the output layer") {
  const DatasetFrame f = io_frame(50, 2, 2, 40);
  const ProManModel m = random_model(f, Activation::Gelu, false, 41);
  ProManModel scaled = m;
  scaled.decoder.layers().back().weight *= 3.0;
  const auto base = certification_radius(m, f);
  const auto after = certification_radius(scaled, f);
  CHECK(std::abs(lipschitz_bound(scaled) - 3.0 * lipschitz_bound(m)) <= 1e-12 * lipschitz_bound(scaled));
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(after[i].sigma_min - 3.0 * base[i].sigma_min) <= 1e-10 * std::max(1.0, after[i].sigma_min));
    CHECK(std::abs(after[i].r_cert - base[i].r_cert) <= 1e-10);
  }
}

TEST_CASE("percentiles use linear interpolation") {
  CHECK(percentile(std::vector<double>(7, 0.3), 5) == doctest::Approx(0.3));
  std::vector<double> tenths;
  for (int i = 1; i <= 10; ++i) tenths.push_back(0.1 * i);
  CHECK(std::abs(percentile(tenths, 50) - 0.55) < 1e-15);
  CHECK(percentile({0.1, 0.9}, 100) == 0.9);
  CHECK(percentile({0.1, 0.9}, 0) == 0.1);
  CHECK(percentile({4.0, 1.0, 3.0, 2.0}, 25) == doctest::Approx(1.75));
  CHECK(code_of([] { percentile({}, 50); }) == ErrorCode::EmptyInput);

  RngStream rng(2);
  std::vector<double> v(37);
  for (double& x : v) x = rng.normal();
  double prev = -std::numeric_limits<double>::infinity();
  for (int p = 0; p <= 100; ++p) {
    const double q = percentile(v, p);
    CHECK(q >= prev);
    prev = q;
  }

  std::vector<CertificationRecord> recs(tenths.size());
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].r_cert = tenths[i];
  const PercentileTable t = certification_percentiles(recs);
  CHECK(t.levels == kDefaultPercentiles);
  CHECK(t.n == 10);
  CHECK(std::abs(t.values[3] - 0.55) < 1e-15);
  CHECK(code_of([] { certification_percentiles({}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("fragile flags") {
  std::vector<double> rank(100);
  std::iota(rank.begin(), rank.end(), 1.0);
  std::vector<double> reversed(rank.rbegin(), rank.rend());

  CHECK(fragile_flags(rank, rank).count == 0);

  const FragileResult r = fragile_flags(rank, reversed);
  CHECK(r.count == 10);
  for (std::size_t i = 0; i < 100; ++i) CHECK(r.flags[i] == (i >= 90));

  // Tied scores all clear the score threshold; the radius quartile decides.
  const FragileResult tied = fragile_flags(std::vector<double>(100, 0.5), rank);
  CHECK(tied.count == 25);
  for (std::size_t i = 0; i < 100; ++i) CHECK(tied.flags[i] == (i < 25));

  CHECK(code_of([&] { fragile_flags(rank, std::vector<double>(3, 1.0)); }) == ErrorCode::LengthMismatch);
}
