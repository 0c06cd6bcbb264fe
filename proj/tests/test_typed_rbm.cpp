#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mtdbn/serialization.hpp"
#include "mtdbn/typed_rbm.hpp"
#include "test_util.hpp"

using namespace mtdbn;

TEST_CASE("sigmoid closed forms and stability") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5));
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75));
  CHECK(sigmoid(2.5) + sigmoid(-2.5) == doctest::Approx(1.0));
  CHECK(std::isfinite(sigmoid(700.0)));
  CHECK(std::isfinite(sigmoid(-700.0)));
  CHECK(sigmoid(700.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-700.0) == doctest::Approx(0.0));
}

TEST_CASE("energy per unit type") {
  RbmParams p;
  p.unit_type = UnitType::kBinary;
  p.W = Matrix::Constant(1, 1, 3.0);
  p.a = Vector::Constant(1, 1.0);
  p.b = Vector::Constant(1, 2.0);

  SUBCASE("binary all-zero configuration vanishes") {
    Vector v = Vector::Zero(1), h = Vector::Zero(1);
    CHECK(energy(p, v, h) == doctest::Approx(0.0));
  }
  SUBCASE("binary hand evaluation") {
    Vector v = Vector::Constant(1, 1.0), h = Vector::Constant(1, 1.0);
    CHECK(energy(p, v, h) == doctest::Approx(-6.0));
  }
  SUBCASE("real quadratic form at the mean") {
    RbmParams g;
    g.unit_type = UnitType::kReal;
    g.W = Matrix::Zero(1, 1);
    g.a = Vector::Constant(1, 2.0);
    g.b = Vector::Zero(1);
    Vector v = Vector::Constant(1, 2.0), h = Vector::Zero(1);
    CHECK(energy(g, v, h) == doctest::Approx(0.0));
  }
  SUBCASE("count log-factorial term") {
    RbmParams c;
    c.unit_type = UnitType::kCount;
    c.W = Matrix::Zero(1, 1);
    c.a = Vector::Zero(1);
    c.b = Vector::Zero(1);
    Vector v = Vector::Constant(1, 3.0), h = Vector::Zero(1);
    CHECK(energy(c, v, h) == doctest::Approx(std::log(6.0)).epsilon(1e-10));
  }
  SUBCASE("dimension mismatch throws") {
    Vector v = Vector::Zero(2), h = Vector::Zero(1);
    CHECK_THROWS_AS(energy(p, v, h), std::invalid_argument);
  }
}

TEST_CASE("hidden posterior closed forms") {
  RbmParams p;
  p.unit_type = UnitType::kBinary;

  SUBCASE("zero parameters give 0.5") {
    p.W = Matrix::Zero(3, 2);
    p.a = Vector::Zero(3);
    p.b = Vector::Zero(2);
    Vector v(3);
    v << 1, 0, 1;
    const Vector post = hidden_posterior(p, v);
    for (int k = 0; k < 2; ++k) CHECK(post(k) == doctest::Approx(0.5));
  }
  SUBCASE("bias ln 3") {
    p.W = Matrix::Zero(1, 1);
    p.a = Vector::Zero(1);
    p.b = Vector::Constant(1, std::log(3.0));
    CHECK(hidden_posterior(p, Vector::Zero(1))(0) == doctest::Approx(0.75));
  }
  SUBCASE("two-unit input sum") {
    p.W = Matrix::Ones(2, 1);
    p.a = Vector::Zero(2);
    p.b = Vector::Zero(1);
    Vector v = Vector::Ones(2);
    CHECK(hidden_posterior(p, v)(0) == doctest::Approx(sigmoid(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("posterior form is identical for all unit types") {
  Rng rng(99);
  for (UnitType type : {UnitType::kBinary, UnitType::kReal, UnitType::kCount}) {
    const RbmParams p = testutil::random_params(type, 5, 4, rng);
    Vector v(5);
    v << 2, 0, 1, 3, 1;  // valid for every type
    const Vector post = hidden_posterior(p, v);
    for (int k = 0; k < 4; ++k) {
      const double z = p.b(k) + p.W.col(k).dot(v);
      CHECK(post(k) == doctest::Approx(sigmoid(z)).epsilon(1e-14));
    }
  }
}

TEST_CASE("visible mean per unit type") {
  SUBCASE("real with zero coupling returns the bias") {
    RbmParams p;
    p.unit_type = UnitType::kReal;
    p.W = Matrix::Zero(3, 2);
    p.a = Vector::LinSpaced(3, -1.0, 1.0);
    p.b = Vector::Zero(2);
    const Vector mu = visible_mean(p, Vector::Ones(2));
    for (int i = 0; i < 3; ++i) CHECK(mu(i) == doctest::Approx(p.a(i)));
  }
  SUBCASE("count rates split the document length evenly when uniform") {
    RbmParams p;
    p.unit_type = UnitType::kCount;
    p.W = Matrix::Zero(5, 2);
    p.a = Vector::Constant(5, 0.7);
    p.b = Vector::Zero(2);
    const Vector lambda = visible_mean(p, Vector::Zero(2), 10.0);
    for (int i = 0; i < 5; ++i) CHECK(lambda(i) == doctest::Approx(2.0));
  }
  SUBCASE("binary zero parameters give 0.5") {
    RbmParams p;
    p.unit_type = UnitType::kBinary;
    p.W = Matrix::Zero(4, 2);
    p.a = Vector::Zero(4);
    p.b = Vector::Zero(2);
    const Vector mean = visible_mean(p, Vector::Ones(2));
    for (int i = 0; i < 4; ++i) CHECK(mean(i) == doctest::Approx(0.5));
  }
  SUBCASE("count without document length throws") {
    RbmParams p;
    p.unit_type = UnitType::kCount;
    p.W = Matrix::Zero(2, 1);
    p.a = Vector::Zero(2);
    p.b = Vector::Zero(1);
    CHECK_THROWS_AS(visible_mean(p, Vector::Zero(1)), std::invalid_argument);
  }
}

TEST_CASE("rate conservation over random draws") {
  Rng rng(1234);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(uni(rng) * 6);
    const int k = 1 + static_cast<int>(uni(rng) * 4);
    const RbmParams p = testutil::random_params(UnitType::kCount, n, k, rng, 1.5);
    const Vector h = testutil::random_binary_vector(k, rng);
    const double m = std::floor(uni(rng) * 50.0) + 1.0;
    const Vector lambda = visible_mean(p, h, m);
    CHECK(std::abs(lambda.sum() - m) / m < 1e-9);
    CHECK(lambda.minCoeff() >= 0.0);
  }
}

// The posterior must agree with the Boltzmann conditional computed by
// enumerating every hidden configuration through the energy function.
TEST_CASE("binary posterior matches brute-force enumeration") {
  Rng rng(4242);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 3;
    const int k = 2 + trial % 3;
    const RbmParams p = testutil::random_params(UnitType::kBinary, n, k, rng);
    const Vector v = testutil::random_binary_vector(n, rng);

    Vector marginal = Vector::Zero(k);
    double z = 0.0;
    for (int mask = 0; mask < (1 << k); ++mask) {
      Vector h(k);
      for (int bit = 0; bit < k; ++bit) h(bit) = (mask >> bit) & 1;
      const double w = std::exp(-energy(p, v, h));
      z += w;
      for (int bit = 0; bit < k; ++bit) {
        if ((mask >> bit) & 1) marginal(bit) += w;
      }
    }
    marginal /= z;

    const Vector post = hidden_posterior(p, v);
    for (int bit = 0; bit < k; ++bit) {
      CHECK(std::abs(post(bit) - marginal(bit)) < 1e-10);
    }
  }
}

TEST_CASE("sampling contracts") {
  SUBCASE("saturated posterior yields all ones") {
    RbmParams p;
    p.unit_type = UnitType::kBinary;
    p.W = Matrix::Zero(2, 3);
    p.a = Vector::Zero(2);
    p.b = Vector::Constant(3, 50.0);
    Rng rng(7);
    const Vector h = sample_hidden(p, Vector::Zero(2), rng);
    CHECK(h.sum() == doctest::Approx(3.0));
  }
  SUBCASE("identical seeds give identical draws") {
    Rng rng_a(11), rng_b(11), param_rng(3);
    RbmParams p = testutil::random_params(UnitType::kBinary, 6, 5, param_rng);
    const Vector v = Vector::Ones(6);
    const Vector h1 = sample_hidden(p, v, rng_a);
    const Vector h2 = sample_hidden(p, v, rng_b);
    CHECK((h1.array() == h2.array()).all());
  }
  SUBCASE("empirical Bernoulli mean") {
    Rng rng(2024);
    const Vector p = Vector::Constant(1, 0.3);
    double total = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) total += sample_bernoulli(p, rng)(0);
    CHECK(std::abs(total / draws - 0.3) < 0.01);
  }
  SUBCASE("gaussian visible sample is deterministic under seed") {
    Rng param_rng(5);
    RbmParams p = testutil::random_params(UnitType::kReal, 4, 2, param_rng);
    Rng a(17), b(17);
    const Vector h = Vector::Ones(2);
    CHECK((sample_visible(p, h, -1.0, a).array() ==
           sample_visible(p, h, -1.0, b).array()).all());
  }
}

TEST_CASE("cd_update identities") {
  Rng rng(31);
  const Matrix data = testutil::two_prototype_data(20, 8);
  const VisibleBatch batch = VisibleBatch::make(UnitType::kBinary, data);

  SUBCASE("zero rates leave parameters unchanged") {
    RbmParams p = testutil::random_params(UnitType::kBinary, 8, 4, rng);
    SparseCdConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.sparsity_weight = 0.0;
    const RbmParams updated = cd_update(p, batch, cfg, rng);
    CHECK((updated.W.array() == p.W.array()).all());
    CHECK((updated.a.array() == p.a.array()).all());
    CHECK((updated.b.array() == p.b.array()).all());
  }
  SUBCASE("sparsity residual of zero is a fixed point") {
    // zero parameters make every posterior exactly 0.5 = q
    RbmParams p;
    p.unit_type = UnitType::kBinary;
    p.W = Matrix::Zero(8, 4);
    p.a = Vector::Zero(8);
    p.b = Vector::Zero(4);
    SparseCdConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.sparsity_weight = 0.7;
    cfg.sparsity_target = 0.5;
    const RbmParams updated = cd_update(p, batch, cfg, rng);
    CHECK(updated.W.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(updated.b.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
}

// Scripted replay of the one-step chain: a single binary unit and a single
// hidden unit, all-zero init, v = [1].
TEST_CASE("cd_update single-unit hand simulation") {
  RbmParams p;
  p.unit_type = UnitType::kBinary;
  p.W = Matrix::Zero(1, 1);
  p.a = Vector::Zero(1);
  p.b = Vector::Zero(1);
  VisibleBatch batch = VisibleBatch::make(UnitType::kBinary, Matrix::Ones(1, 1));

  SparseCdConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.sparsity_weight = 0.05;
  cfg.sparsity_target = 0.2;

  const std::uint64_t seed = 2718;
  Rng impl_rng(seed);
  const RbmParams updated = cd_update(p, batch, cfg, impl_rng);

  // independent replay with the same uniform stream
  Rng oracle_rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double h_bar = 0.5;              // sigmoid(0)
  const double h_hat = uni(oracle_rng) < h_bar ? 1.0 : 0.0;
  const double v_bar = 0.5;              // sigmoid(0) from the old weights
  const double expect_dw = 0.1 * (1.0 * h_bar - v_bar * h_hat) +
                           0.05 * 1.0 * (0.2 - h_bar);
  const double expect_db = 0.1 * (h_bar - h_hat) + 0.05 * (0.2 - h_bar);
  const double expect_da = 0.1 * (1.0 - v_bar);

  CHECK(updated.W(0, 0) == doctest::Approx(expect_dw).epsilon(1e-14));
  CHECK(updated.b(0) == doctest::Approx(expect_db).epsilon(1e-14));
  CHECK(updated.a(0) == doctest::Approx(expect_da).epsilon(1e-14));
}

TEST_CASE("train_rbm basics") {
  const Matrix data = testutil::two_prototype_data(100, 7);
  const VisibleBatch batch = VisibleBatch::make(UnitType::kBinary, data);

  SUBCASE("zero epochs returns the initialization") {
    SparseCdConfig cfg;
    cfg.epochs = 0;
    cfg.rng_seed = 7;
    const RbmTrainResult result = train_rbm(batch, 4, cfg);
    CHECK(result.params.a.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(result.params.b.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(result.params.W.cwiseAbs().maxCoeff() > 0.0);
    CHECK(result.params.W.cwiseAbs().maxCoeff() < 0.1);
    CHECK(result.recon_trace.size() == 1);
  }
  SUBCASE("identical seeds give bitwise-identical parameters") {
    SparseCdConfig cfg;
    cfg.epochs = 5;
    cfg.minibatch_size = 10;
    cfg.rng_seed = 7;
    const RbmTrainResult a = train_rbm(batch, 4, cfg);
    const RbmTrainResult b = train_rbm(batch, 4, cfg);
    CHECK((a.params.W.array() == b.params.W.array()).all());
    CHECK((a.params.a.array() == b.params.a.array()).all());
    CHECK((a.params.b.array() == b.params.b.array()).all());
    CHECK(a.recon_trace == b.recon_trace);
  }
  SUBCASE("empty data is rejected") {
    VisibleBatch empty;
    empty.unit_type = UnitType::kBinary;
    empty.data = Matrix(0, 4);
    SparseCdConfig cfg;
    CHECK_THROWS_AS(train_rbm(empty, 3, cfg), std::invalid_argument);
  }
}

// Learning-signal fixture: the reconstruction cross-entropy of the noisy
// two-prototype corpus must drop below 0.7x its initial value in 50 epochs.
// The endpoints are frozen from a seeded reference run as a regression pin.
TEST_CASE("train_rbm learning signal on the two-prototype fixture") {
  const Matrix data = testutil::two_prototype_data(100, 7);
  const VisibleBatch batch = VisibleBatch::make(UnitType::kBinary, data);
  SparseCdConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.sparsity_target = 0.2;
  cfg.sparsity_weight = 0.02;
  cfg.minibatch_size = 10;
  cfg.epochs = 50;
  cfg.rng_seed = 7;
  const RbmTrainResult result = train_rbm(batch, 4, cfg);
  REQUIRE(result.recon_trace.size() == 51);
  CHECK(result.recon_trace.back() < 0.7 * result.recon_trace.front());
  CHECK(result.recon_trace.front() == doctest::Approx(5.54551281154972).epsilon(1e-9));
  CHECK(result.recon_trace.back() == doctest::Approx(2.19690248799991).epsilon(1e-9));
}

TEST_CASE("train_rbm divergence guard") {
  const Matrix data = testutil::two_prototype_data(40, 3);
  const VisibleBatch batch = VisibleBatch::make(UnitType::kBinary, data);
  SparseCdConfig cfg;
  cfg.learning_rate = 1e12;
  cfg.epochs = 3;
  cfg.minibatch_size = 10;
  cfg.rng_seed = 1;
  CHECK_THROWS_AS(train_rbm(batch, 4, cfg), TrainingError);
}

TEST_CASE("visible batch domain validation") {
  SUBCASE("binary rejects fractional values") {
    Matrix bad = Matrix::Constant(1, 2, 0.5);
    CHECK_THROWS_AS(VisibleBatch::make(UnitType::kBinary, bad), DataError);
  }
  SUBCASE("count rejects negatives and keeps row sums") {
    Matrix bad = Matrix::Constant(1, 2, -1.0);
    CHECK_THROWS_AS(VisibleBatch::make(UnitType::kCount, bad), DataError);
    Matrix ok(2, 3);
    ok << 1, 2, 3, 0, 0, 5;
    const VisibleBatch batch = VisibleBatch::make(UnitType::kCount, ok);
    CHECK(batch.doc_length(0) == doctest::Approx(6.0));
    CHECK(batch.doc_length(1) == doctest::Approx(5.0));
  }
  SUBCASE("probability inputs accept the open interval") {
    Matrix probs = Matrix::Constant(2, 2, 0.25);
    const VisibleBatch batch = VisibleBatch::make_binary_probabilities(probs);
    CHECK(batch.unit_type == UnitType::kBinary);
    Matrix bad = Matrix::Constant(1, 1, 1.5);
    CHECK_THROWS_AS(VisibleBatch::make_binary_probabilities(bad), DataError);
  }
}

TEST_CASE("rbm parameter file round trip") {
  Rng rng(55);
  const RbmParams p = testutil::random_params(UnitType::kCount, 6, 3, rng);
  const std::string path = "rbm_roundtrip.bin";
  save_rbm(path, p);
  const RbmParams q = load_rbm(path);
  CHECK(q.unit_type == p.unit_type);
  CHECK((q.W.array() == p.W.array()).all());
  CHECK((q.a.array() == p.a.array()).all());
  CHECK((q.b.array() == p.b.array()).all());

  std::ofstream bad("rbm_bad.bin", std::ios::binary);
  bad << "NOTMAGIC overwrite";
  bad.close();
  CHECK_THROWS_AS(load_rbm("rbm_bad.bin"), DataError);
  std::remove(path.c_str());
  std::remove("rbm_bad.bin");
}
