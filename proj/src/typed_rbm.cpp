#include "mtdbn/typed_rbm.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mtdbn {

namespace {

constexpr double kWeightGuard = 1e6;
constexpr double kProbClamp = 1e-12;

void check_vector_dim(const char* what, Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    std::ostringstream os;
    os << what << " has length " << got << ", expected " << want;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

void RbmParams::check_consistent() const {
  if (W.rows() != a.size() || W.cols() != b.size()) {
    std::ostringstream os;
    os << "inconsistent RBM shapes: W " << W.rows() << "x" << W.cols()
       << ", a " << a.size() << ", b " << b.size();
    throw std::invalid_argument(os.str());
  }
}

void SparseCdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (!(sparsity_target > 0.0 && sparsity_target < 1.0)) {
    throw ConfigError("sparsity_target must lie in (0, 1)");
  }
  if (!(sparsity_weight >= 0.0)) {
    throw ConfigError("sparsity_weight must be >= 0");
  }
  if (cd_steps < 1) throw ConfigError("cd_steps must be >= 1");
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

VisibleBatch VisibleBatch::make(UnitType type, Matrix data) {
  VisibleBatch batch;
  batch.unit_type = type;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      const double v = data(r, c);
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite value at row " << r << ", column " << c;
        throw DataError(os.str());
      }
      if (type == UnitType::kBinary && v != 0.0 && v != 1.0) {
        std::ostringstream os;
        os << "binary value " << v << " at row " << r << ", column " << c
           << " is not in {0,1}";
        throw DataError(os.str());
      }
      if (type == UnitType::kCount && (v < 0.0 || v != std::floor(v))) {
        std::ostringstream os;
        os << "count value " << v << " at row " << r << ", column " << c
           << " is not a nonnegative integer";
        throw DataError(os.str());
      }
    }
  }
  if (type == UnitType::kCount) {
    batch.doc_length = data.rowwise().sum();
  }
  batch.data = std::move(data);
  return batch;
}

VisibleBatch VisibleBatch::make_binary_probabilities(Matrix data) {
  if ((data.array() < 0.0).any() || (data.array() > 1.0).any() ||
      !data.allFinite()) {
    throw DataError("binary probability inputs must lie in [0,1]");
  }
  VisibleBatch batch;
  batch.unit_type = UnitType::kBinary;
  batch.data = std::move(data);
  return batch;
}

VisibleBatch VisibleBatch::slice_rows(const std::vector<int>& idx) const {
  VisibleBatch out;
  out.unit_type = unit_type;
  out.data.resize(static_cast<Eigen::Index>(idx.size()), data.cols());
  if (doc_length.size() > 0) {
    out.doc_length.resize(static_cast<Eigen::Index>(idx.size()));
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.data.row(static_cast<Eigen::Index>(i)) = data.row(idx[i]);
    if (doc_length.size() > 0) {
      out.doc_length(static_cast<Eigen::Index>(i)) = doc_length(idx[i]);
    }
  }
  return out;
}

double energy(const RbmParams& params, const Vector& v, const Vector& h) {
  params.check_consistent();
  check_vector_dim("visible vector", v.size(), params.W.rows());
  check_vector_dim("hidden vector", h.size(), params.W.cols());

  const double interaction = v.dot(params.W * h);
  const double hidden_term = params.b.dot(h);
  switch (params.unit_type) {
    case UnitType::kBinary:
      return -params.a.dot(v) - hidden_term - interaction;
    case UnitType::kReal:
      return 0.5 * (v - params.a).squaredNorm() - hidden_term - interaction;
    case UnitType::kCount: {
      double visible_term = 0.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        visible_term += std::lgamma(v(i) + 1.0) - params.a(i) * v(i);
      }
      return visible_term - hidden_term - interaction;
    }
  }
  return 0.0;
}

Vector hidden_posterior(const RbmParams& params, const Vector& v) {
  params.check_consistent();
  check_vector_dim("visible vector", v.size(), params.W.rows());
  Vector z = params.b + params.W.transpose() * v;
  return z.unaryExpr([](double x) { return sigmoid(x); });
}

Matrix hidden_posterior_batch(const RbmParams& params, const Matrix& v) {
  params.check_consistent();
  if (v.cols() != params.W.rows()) {
    throw std::invalid_argument("batch column count does not match RBM visible dim");
  }
  Matrix z = (v * params.W).rowwise() + params.b.transpose();
  return z.unaryExpr([](double x) { return sigmoid(x); });
}

Vector visible_mean(const RbmParams& params, const Vector& h,
                    double doc_length) {
  params.check_consistent();
  check_vector_dim("hidden vector", h.size(), params.W.cols());
  Vector mu = params.a + params.W * h;
  switch (params.unit_type) {
    case UnitType::kBinary:
      return mu.unaryExpr([](double x) { return sigmoid(x); });
    case UnitType::kReal:
      return mu;
    case UnitType::kCount: {
      if (doc_length < 0.0) {
        throw std::invalid_argument(
            "count visible_mean requires the instance document length");
      }
      // softmax(mu) * M, stabilized; the rates sum to M by construction.
      const double m = mu.maxCoeff();
      Vector e = (mu.array() - m).exp();
      return e * (doc_length / e.sum());
    }
  }
  return mu;
}

Vector sample_bernoulli(const Vector& p, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out(i) = uni(rng) < p(i) ? 1.0 : 0.0;
  }
  return out;
}

Vector sample_hidden(const RbmParams& params, const Vector& v, Rng& rng) {
  return sample_bernoulli(hidden_posterior(params, v), rng);
}

Vector sample_visible(const RbmParams& params, const Vector& h,
                      double doc_length, Rng& rng) {
  switch (params.unit_type) {
    case UnitType::kBinary:
      return sample_bernoulli(visible_mean(params, h), rng);
    case UnitType::kReal: {
      Vector mu = visible_mean(params, h);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) += gauss(rng);
      return mu;
    }
    case UnitType::kCount: {
      Vector lambda = visible_mean(params, h, doc_length);
      Vector out(lambda.size());
      for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) <= 0.0) {
          out(i) = 0.0;
        } else {
          std::poisson_distribution<long> pois(lambda(i));
          out(i) = static_cast<double>(pois(rng));
        }
      }
      return out;
    }
  }
  return Vector();
}

namespace {

// Negative-phase chain for a whole minibatch. Returns the final binary
// hidden sample and the type-specific visible mean computed from it.
// Uniforms are consumed row-major (instance, then unit).
void negative_phase(const RbmParams& params, const VisibleBatch& batch,
                    int cd_steps, Rng& rng, Matrix* h_hat, Matrix* v_bar) {
  const int rows = batch.rows();
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Matrix probs = hidden_posterior_batch(params, batch.data);
  Matrix h = Matrix::Zero(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      h(r, k) = uni(rng) < probs(r, k) ? 1.0 : 0.0;
    }
  }
  for (int step = 1; step < cd_steps; ++step) {
    Matrix v(rows, batch.cols());
    for (int r = 0; r < rows; ++r) {
      const double m =
          batch.unit_type == UnitType::kCount ? batch.doc_length(r) : -1.0;
      v.row(r) = sample_visible(params, h.row(r).transpose(), m, rng).transpose();
    }
    probs = hidden_posterior_batch(params, v);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      for (Eigen::Index k = 0; k < probs.cols(); ++k) {
        h(r, k) = uni(rng) < probs(r, k) ? 1.0 : 0.0;
      }
    }
  }

  v_bar->resize(rows, batch.cols());
  for (int r = 0; r < rows; ++r) {
    const double m =
        batch.unit_type == UnitType::kCount ? batch.doc_length(r) : -1.0;
    v_bar->row(r) = visible_mean(params, h.row(r).transpose(), m).transpose();
  }
  *h_hat = std::move(h);
}

}  // namespace

void cd_update_inplace(RbmParams& params, const VisibleBatch& batch,
                       const SparseCdConfig& cfg, Rng& rng) {
  params.check_consistent();
  cfg.validate();
  if (batch.unit_type != params.unit_type) {
    throw std::invalid_argument("batch unit type does not match RBM unit type");
  }
  if (batch.cols() != params.visible_dim()) {
    throw std::invalid_argument("batch width does not match RBM visible dim");
  }
  if (batch.rows() == 0) return;

  const double inv_b = 1.0 / static_cast<double>(batch.rows());
  const Matrix h_bar = hidden_posterior_batch(params, batch.data);

  Matrix h_hat, v_bar;
  negative_phase(params, batch, cfg.cd_steps, rng, &h_hat, &v_bar);

  const double eta = cfg.learning_rate;
  const double gamma = cfg.sparsity_weight;
  const double q = cfg.sparsity_target;

  Matrix sparsity_resid = (q - h_bar.array()).matrix();  // B x K
  params.W += inv_b * (eta * (batch.data.transpose() * h_bar -
                              v_bar.transpose() * h_hat) +
                       gamma * (batch.data.transpose() * sparsity_resid));
  params.b += inv_b * (eta * (h_bar - h_hat).colwise().sum().transpose() +
                       gamma * sparsity_resid.colwise().sum().transpose());
  params.a += inv_b * eta * (batch.data - v_bar).colwise().sum().transpose();

  if (!params.all_finite()) {
    throw TrainingError("non-finite parameter after CD update");
  }
}

RbmParams cd_update(const RbmParams& params, const VisibleBatch& batch,
                    const SparseCdConfig& cfg, Rng& rng) {
  RbmParams out = params;
  cd_update_inplace(out, batch, cfg, rng);
  return out;
}

RbmParams init_rbm(UnitType type, int visible, int hidden,
                   std::uint64_t seed) {
  if (visible < 1 || hidden < 1) {
    throw std::invalid_argument("RBM dimensions must be positive");
  }
  RbmParams params;
  params.unit_type = type;
  params.W.resize(visible, hidden);
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.01);
  for (int i = 0; i < visible; ++i) {
    for (int k = 0; k < hidden; ++k) {
      params.W(i, k) = gauss(rng);
    }
  }
  params.a = Vector::Zero(visible);
  params.b = Vector::Zero(hidden);
  return params;
}

double reconstruction_error(const RbmParams& params,
                            const VisibleBatch& batch) {
  if (batch.rows() == 0) return 0.0;
  const Matrix h_bar = hidden_posterior_batch(params, batch.data);
  double total = 0.0;
  for (int r = 0; r < batch.rows(); ++r) {
    const double m =
        batch.unit_type == UnitType::kCount ? batch.doc_length(r) : -1.0;
    const Vector rec = visible_mean(params, h_bar.row(r).transpose(), m);
    switch (batch.unit_type) {
      case UnitType::kBinary:
        for (Eigen::Index i = 0; i < rec.size(); ++i) {
          const double p = std::min(1.0 - kProbClamp, std::max(kProbClamp, rec(i)));
          const double v = batch.data(r, i);
          total += -(v * std::log(p) + (1.0 - v) * std::log(1.0 - p));
        }
        break;
      case UnitType::kReal:
        total += 0.5 * (batch.data.row(r).transpose() - rec).squaredNorm();
        break;
      case UnitType::kCount:
        for (Eigen::Index i = 0; i < rec.size(); ++i) {
          const double lam = std::max(rec(i), kProbClamp);
          total += lam - batch.data(r, i) * std::log(lam);
        }
        break;
    }
  }
  return total / static_cast<double>(batch.rows());
}

RbmTrainResult train_rbm(const VisibleBatch& data, int hidden,
                         const SparseCdConfig& cfg) {
  cfg.validate();
  if (data.rows() == 0) {
    throw std::invalid_argument("train_rbm requires nonempty data");
  }
  RbmTrainResult result;
  result.params = init_rbm(data.unit_type, data.cols(), hidden, cfg.rng_seed);
  result.recon_trace.push_back(reconstruction_error(result.params, data));

  Rng rng(derive_seed(cfg.rng_seed, 0xCD));
  const int rows = data.rows();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int start = 0, index = 0; start < rows;
         start += cfg.minibatch_size, ++index) {
      const int count = std::min(cfg.minibatch_size, rows - start);
      VisibleBatch mb;
      mb.unit_type = data.unit_type;
      mb.data = data.data.middleRows(start, count);
      if (data.doc_length.size() > 0) {
        mb.doc_length = data.doc_length.segment(start, count);
      }
      try {
        cd_update_inplace(result.params, mb, cfg, rng);
      } catch (const TrainingError& e) {
        std::ostringstream os;
        os << e.what() << " (epoch " << epoch << ", batch " << index << ")";
        throw TrainingError(os.str());
      }
      if (result.params.W.cwiseAbs().maxCoeff() > kWeightGuard) {
        std::ostringstream os;
        os << "weight magnitude exceeded " << kWeightGuard
           << ", training diverged (epoch " << epoch << ", batch " << index
           << ")";
        throw TrainingError(os.str());
      }
    }
    result.recon_trace.push_back(reconstruction_error(result.params, data));
  }
  return result;
}

}  // namespace mtdbn
