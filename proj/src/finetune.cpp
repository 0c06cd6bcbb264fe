#include "mtdbn/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mtdbn {

void FinetuneConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cg_restart < 1) throw ConfigError("cg_restart must be >= 1");
}

GradientBundle GradientBundle::zeros_like(const DeepNet& net) {
  GradientBundle g;
  for (std::size_t s = 0; s < net.view_params.size(); ++s) {
    const auto& p = net.view_params[s];
    g.view_W.push_back(Matrix::Zero(p.W.rows(), p.W.cols()));
    g.view_b.push_back(Vector::Zero(p.b.size()));
    g.view_a.push_back(Vector::Zero(p.a.size()));
  }
  g.joint_W = Matrix::Zero(net.joint.W.rows(), net.joint.W.cols());
  g.joint_b = Vector::Zero(net.joint.b.size());
  for (const auto& head : net.heads) {
    g.head_V.push_back(Matrix::Zero(head.V.rows(), head.V.cols()));
    g.head_bias.push_back(Vector::Zero(head.bias.size()));
  }
  return g;
}

void GradientBundle::add(const GradientBundle& other) {
  for (std::size_t s = 0; s < view_W.size(); ++s) {
    view_W[s] += other.view_W[s];
    view_b[s] += other.view_b[s];
    view_a[s] += other.view_a[s];
  }
  joint_W += other.joint_W;
  joint_b += other.joint_b;
  for (std::size_t h = 0; h < head_V.size(); ++h) {
    head_V[h] += other.head_V[h];
    head_bias[h] += other.head_bias[h];
  }
}

void GradientBundle::scale(double factor) {
  for (std::size_t s = 0; s < view_W.size(); ++s) {
    view_W[s] *= factor;
    view_b[s] *= factor;
    view_a[s] *= factor;
  }
  joint_W *= factor;
  joint_b *= factor;
  for (std::size_t h = 0; h < head_V.size(); ++h) {
    head_V[h] *= factor;
    head_bias[h] *= factor;
  }
}

bool GradientBundle::all_finite() const {
  for (std::size_t s = 0; s < view_W.size(); ++s) {
    if (!view_W[s].allFinite() || !view_b[s].allFinite() ||
        !view_a[s].allFinite()) {
      return false;
    }
  }
  if (!joint_W.allFinite() || !joint_b.allFinite()) return false;
  for (std::size_t h = 0; h < head_V.size(); ++h) {
    if (!head_V[h].allFinite() || !head_bias[h].allFinite()) return false;
  }
  return true;
}

namespace {

void check_targets(const DeepNet& net, const InstanceTargets& targets) {
  if (targets.size() != net.heads.size()) {
    throw std::invalid_argument("targets are not aligned with net heads");
  }
}

}  // namespace

double total_loss(const DeepNet& net, const std::vector<Vector>& instance_views,
                  const InstanceTargets& targets) {
  check_targets(net, targets);
  const Vector f = forward(net, instance_views);
  double loss = 0.0;
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    if (!targets[h].has_value()) continue;
    loss += net.heads[h].task_weight * head_loss(net.heads[h], f, *targets[h]);
  }
  return loss;
}

double dataset_loss(const DeepNet& net, const std::vector<Matrix>& view_data,
                    const std::vector<InstanceTargets>& targets,
                    std::vector<double>* per_head) {
  const Eigen::Index rows = view_data.empty() ? 0 : view_data.front().rows();
  if (static_cast<std::size_t>(rows) != targets.size()) {
    throw std::invalid_argument("targets are not aligned with the corpus");
  }
  if (per_head != nullptr) {
    per_head->assign(net.heads.size(), 0.0);
  }
  if (rows == 0) return 0.0;
  double total = 0.0;
  std::vector<Vector> instance(view_data.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (std::size_t s = 0; s < view_data.size(); ++s) {
      instance[s] = view_data[s].row(r).transpose();
    }
    const Vector f = forward(net, instance);
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
      if (!targets[static_cast<std::size_t>(r)][h].has_value()) continue;
      const double l = net.heads[h].task_weight *
                       head_loss(net.heads[h], f,
                                 *targets[static_cast<std::size_t>(r)][h]);
      total += l;
      if (per_head != nullptr) (*per_head)[h] += l;
    }
  }
  total /= static_cast<double>(rows);
  if (per_head != nullptr) {
    for (auto& v : *per_head) v /= static_cast<double>(rows);
  }
  return total;
}

GradientBundle backward(const DeepNet& net,
                        const std::vector<Vector>& instance_views,
                        const InstanceTargets& targets) {
  check_targets(net, targets);

  // forward pass, keeping the layer activations
  Vector concat(net.joint_input_dim());
  Eigen::Index offset = 0;
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    concat.segment(offset, net.views[s].hidden) =
        hidden_posterior(net.view_params[s], instance_views[s]);
    offset += net.views[s].hidden;
  }
  const Vector f = hidden_posterior(net.joint, concat);

  GradientBundle grad = GradientBundle::zeros_like(net);
  Vector df = Vector::Zero(f.size());
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    if (!targets[h].has_value()) continue;
    const TaskHead& head = net.heads[h];
    const Vector scores = head_score(head, f);
    Vector dg = head_loss_score_grad(head, scores, *targets[h]);
    dg *= head.task_weight;
    grad.head_V[h] = dg * f.transpose();
    grad.head_bias[h] = dg;
    df += head.V.transpose() * dg;
  }

  // chain rule through both sigmoid layers
  const Vector dz2 = df.cwiseProduct(f).cwiseProduct(Vector::Ones(f.size()) - f);
  grad.joint_W = concat * dz2.transpose();
  grad.joint_b = dz2;
  const Vector dconcat = net.joint.W * dz2;

  offset = 0;
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    const int k = net.views[s].hidden;
    const Vector hs = concat.segment(offset, k);
    const Vector dz1 = dconcat.segment(offset, k)
                           .cwiseProduct(hs)
                           .cwiseProduct(Vector::Ones(k) - hs);
    grad.view_W[s] = instance_views[s] * dz1.transpose();
    grad.view_b[s] = dz1;
    // view_a stays zero: visible biases do not appear in the forward map
    offset += k;
  }

  if (!grad.all_finite()) {
    throw TrainingError("non-finite gradient in backward pass");
  }
  return grad;
}

namespace {

// Parameter-flattening helpers shared by the FD checker and CG. Order:
// per-view (W row-major, b), joint W row-major, joint b, per-head (V
// row-major, bias). Visible biases are excluded (their gradient is
// structurally zero).
struct ParamRef {
  std::string group;
  double* value;
  const double* grad;
};

std::vector<ParamRef> collect_params(DeepNet& net, const GradientBundle& g) {
  std::vector<ParamRef> refs;
  for (std::size_t s = 0; s < net.view_params.size(); ++s) {
    const std::string base = "view:" + net.views[s].name;
    auto& p = net.view_params[s];
    for (Eigen::Index i = 0; i < p.W.rows(); ++i) {
      for (Eigen::Index k = 0; k < p.W.cols(); ++k) {
        refs.push_back({base + ".W", &p.W(i, k), &g.view_W[s](i, k)});
      }
    }
    for (Eigen::Index k = 0; k < p.b.size(); ++k) {
      refs.push_back({base + ".b", &p.b(k), &g.view_b[s](k)});
    }
    for (Eigen::Index i = 0; i < p.a.size(); ++i) {
      refs.push_back({base + ".a", &p.a(i), &g.view_a[s](i)});
    }
  }
  for (Eigen::Index i = 0; i < net.joint.W.rows(); ++i) {
    for (Eigen::Index k = 0; k < net.joint.W.cols(); ++k) {
      refs.push_back({"joint.W", &net.joint.W(i, k), &g.joint_W(i, k)});
    }
  }
  for (Eigen::Index k = 0; k < net.joint.b.size(); ++k) {
    refs.push_back({"joint.b", &net.joint.b(k), &g.joint_b(k)});
  }
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    const std::string base = "head:" + net.heads[h].name;
    auto& head = net.heads[h];
    for (Eigen::Index l = 0; l < head.V.rows(); ++l) {
      for (Eigen::Index k = 0; k < head.V.cols(); ++k) {
        refs.push_back({base + ".V", &head.V(l, k), &g.head_V[h](l, k)});
      }
    }
    for (Eigen::Index l = 0; l < head.bias.size(); ++l) {
      refs.push_back({base + ".bias", &head.bias(l), &g.head_bias[h](l)});
    }
  }
  return refs;
}

}  // namespace

namespace {

// Extended-precision replay of the forward map and head losses. The
// difference quotient at epsilon = 1e-6 is noise-limited in plain double
// (the two loss values agree to ~10 digits), so the checker evaluates the
// perturbed losses with 80-bit arithmetic to keep the quadrature honest.
long double sigmoid_ld(long double z) {
  if (z >= 0.0L) return 1.0L / (1.0L + std::exp(-z));
  const long double e = std::exp(z);
  return e / (1.0L + e);
}

long double total_loss_ld(const DeepNet& net,
                          const std::vector<Vector>& instance_views,
                          const InstanceTargets& targets) {
  std::vector<long double> concat(
      static_cast<std::size_t>(net.joint_input_dim()));
  std::size_t offset = 0;
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    const auto& p = net.view_params[s];
    for (int m = 0; m < p.hidden_dim(); ++m) {
      long double z = p.b(m);
      for (int i = 0; i < p.visible_dim(); ++i) {
        z += static_cast<long double>(p.W(i, m)) * instance_views[s](i);
      }
      concat[offset + static_cast<std::size_t>(m)] = sigmoid_ld(z);
    }
    offset += static_cast<std::size_t>(p.hidden_dim());
  }
  std::vector<long double> f(static_cast<std::size_t>(net.top_dim()));
  for (int k = 0; k < net.top_dim(); ++k) {
    long double z = net.joint.b(k);
    for (std::size_t i = 0; i < concat.size(); ++i) {
      z += static_cast<long double>(net.joint.W(static_cast<Eigen::Index>(i), k)) *
           concat[i];
    }
    f[static_cast<std::size_t>(k)] = sigmoid_ld(z);
  }

  long double loss = 0.0L;
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    if (!targets[h].has_value()) continue;
    const TaskHead& head = net.heads[h];
    const TaskTarget& target = *targets[h];
    std::vector<long double> scores(static_cast<std::size_t>(head.output_dim()));
    for (int l = 0; l < head.output_dim(); ++l) {
      long double g = head.bias(l);
      for (int k = 0; k < head.feature_dim(); ++k) {
        g += static_cast<long double>(head.V(l, k)) *
             f[static_cast<std::size_t>(k)];
      }
      scores[static_cast<std::size_t>(l)] = g;
    }
    long double term = 0.0L;
    switch (head.kind) {
      case HeadKind::kRegression: {
        const long double r = target.value - scores[0];
        term = 0.5L * r * r;
        break;
      }
      case HeadKind::kLogistic: {
        const long double z = -static_cast<long double>(target.value) * scores[0];
        term = z > 0.0L ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        break;
      }
      case HeadKind::kPoisson:
        term = -static_cast<long double>(target.value) * scores[0] +
               std::exp(scores[0]);
        break;
      default: {
        for (const auto& [label, pool] :
             candidate_sets(head.kind, target, head.num_labels())) {
          long double max_score = scores[static_cast<std::size_t>(pool[0])];
          for (int l : pool) {
            max_score = std::max(max_score, scores[static_cast<std::size_t>(l)]);
          }
          long double denom = 0.0L;
          for (int l : pool) {
            denom += std::exp(scores[static_cast<std::size_t>(l)] - max_score);
          }
          term -= scores[static_cast<std::size_t>(label)] - max_score -
                  std::log(denom);
        }
        break;
      }
    }
    loss += static_cast<long double>(head.task_weight) * term;
  }
  return loss;
}

}  // namespace

GradCheckReport gradient_check(const DeepNet& net,
                               const std::vector<Vector>& instance_views,
                               const InstanceTargets& targets, double epsilon,
                               double tolerance) {
  DeepNet work = net;
  const GradientBundle analytic = backward(work, instance_views, targets);
  std::vector<ParamRef> refs = collect_params(work, analytic);

  GradCheckReport report;
  auto group_of = [&](const std::string& name) -> GradCheckGroup& {
    for (auto& g : report.groups) {
      if (g.name == name) return g;
    }
    report.groups.push_back({name, 0.0, true});
    return report.groups.back();
  };

  for (auto& ref : refs) {
    const double saved = *ref.value;
    // use the exactly-representable step so the quotient denominator is exact
    const double up_x = saved + epsilon;
    const double down_x = saved - epsilon;
    *ref.value = up_x;
    const long double up = total_loss_ld(work, instance_views, targets);
    *ref.value = down_x;
    const long double down = total_loss_ld(work, instance_views, targets);
    *ref.value = saved;
    const double numeric = static_cast<double>(
        (up - down) / static_cast<long double>(up_x - down_x));
    const double denom = std::max({std::abs(*ref.grad), std::abs(numeric), 1e-8});
    const double rel = std::abs(*ref.grad - numeric) / denom;
    auto& group = group_of(ref.group);
    group.max_rel_error = std::max(group.max_rel_error, rel);
  }
  for (auto& g : report.groups) {
    g.ok = g.max_rel_error < tolerance;
    report.worst = std::max(report.worst, g.max_rel_error);
    report.all_ok = report.all_ok && g.ok;
  }
  return report;
}

namespace {

std::vector<Vector> instance_of(const std::vector<Matrix>& view_data,
                                Eigen::Index r) {
  std::vector<Vector> instance(view_data.size());
  for (std::size_t s = 0; s < view_data.size(); ++s) {
    instance[s] = view_data[s].row(r).transpose();
  }
  return instance;
}

GradientBundle batch_gradient(const DeepNet& net,
                              const std::vector<Matrix>& view_data,
                              const std::vector<InstanceTargets>& targets,
                              const std::vector<int>& rows) {
  GradientBundle sum = GradientBundle::zeros_like(net);
  for (int r : rows) {
    sum.add(backward(net, instance_of(view_data, r),
                     targets[static_cast<std::size_t>(r)]));
  }
  if (!rows.empty()) sum.scale(1.0 / static_cast<double>(rows.size()));
  return sum;
}

void sgd_train(DeepNet& net, const std::vector<Matrix>& view_data,
               const std::vector<InstanceTargets>& targets,
               const FinetuneConfig& cfg, FinetuneResult& result) {
  const int rows = static_cast<int>(view_data.front().rows());
  std::vector<int> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.rng_seed, 0xF7));

  GradientBundle velocity = GradientBundle::zeros_like(net);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < rows; start += cfg.minibatch_size) {
      const int count = std::min(cfg.minibatch_size, rows - start);
      std::vector<int> batch(order.begin() + start,
                             order.begin() + start + count);
      GradientBundle grad = batch_gradient(net, view_data, targets, batch);
      velocity.scale(cfg.momentum);
      grad.scale(-cfg.learning_rate);
      velocity.add(grad);
      for (std::size_t s = 0; s < net.view_params.size(); ++s) {
        net.view_params[s].W += velocity.view_W[s];
        net.view_params[s].b += velocity.view_b[s];
      }
      net.joint.W += velocity.joint_W;
      net.joint.b += velocity.joint_b;
      for (std::size_t h = 0; h < net.heads.size(); ++h) {
        net.heads[h].V += velocity.head_V[h];
        net.heads[h].bias += velocity.head_bias[h];
      }
      bool finite = net.joint.all_finite();
      for (const auto& p : net.view_params) finite = finite && p.all_finite();
      for (const auto& h : net.heads) {
        finite = finite && h.V.allFinite() && h.bias.allFinite();
      }
      if (!finite) {
        std::ostringstream os;
        os << "fine-tuning diverged at epoch " << epoch;
        throw TrainingError(os.str());
      }
    }
    std::vector<double> per_head;
    result.loss_trace.push_back(dataset_loss(net, view_data, targets, &per_head));
    result.per_head_trace.push_back(std::move(per_head));
  }
}

// --- full-batch nonlinear conjugate gradient ------------------------------

Eigen::VectorXd pack_params(DeepNet& net) {
  GradientBundle dummy = GradientBundle::zeros_like(net);
  std::vector<ParamRef> refs = collect_params(net, dummy);
  Eigen::VectorXd x(static_cast<Eigen::Index>(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    x(static_cast<Eigen::Index>(i)) = *refs[i].value;
  }
  return x;
}

void unpack_params(DeepNet& net, const Eigen::VectorXd& x) {
  GradientBundle dummy = GradientBundle::zeros_like(net);
  std::vector<ParamRef> refs = collect_params(net, dummy);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    *refs[i].value = x(static_cast<Eigen::Index>(i));
  }
}

Eigen::VectorXd pack_gradient(DeepNet& net, const GradientBundle& g) {
  std::vector<ParamRef> refs = collect_params(net, g);
  Eigen::VectorXd out(static_cast<Eigen::Index>(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = *refs[i].grad;
  }
  return out;
}

void cg_train(DeepNet& net, const std::vector<Matrix>& view_data,
              const std::vector<InstanceTargets>& targets,
              const FinetuneConfig& cfg, FinetuneResult& result) {
  const int rows = static_cast<int>(view_data.front().rows());
  std::vector<int> all(static_cast<std::size_t>(rows));
  std::iota(all.begin(), all.end(), 0);

  auto loss_at = [&](const Eigen::VectorXd& x) {
    unpack_params(net, x);
    return dataset_loss(net, view_data, targets, nullptr);
  };
  auto grad_at = [&](const Eigen::VectorXd& x) {
    unpack_params(net, x);
    return pack_gradient(net, batch_gradient(net, view_data, targets, all));
  };

  Eigen::VectorXd x = pack_params(net);
  double fx = loss_at(x);
  Eigen::VectorXd g = grad_at(x);
  Eigen::VectorXd direction = -g;
  bool is_steepest = true;

  constexpr double kArmijo = 1e-4;
  for (int iter = 0; iter < cfg.epochs; ++iter) {
    double slope = g.dot(direction);
    if (slope >= 0.0) {  // not a descent direction: restart
      direction = -g;
      is_steepest = true;
      slope = g.dot(direction);
      if (slope >= 0.0) break;  // gradient is zero
    }
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const double f_new = loss_at(x + step * direction);
      if (std::isfinite(f_new) && f_new <= fx + kArmijo * step * slope) {
        x += step * direction;
        fx = f_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (is_steepest) break;  // converged: even steepest descent stalls
      direction = -g;
      is_steepest = true;
      std::vector<double> per_head_r;
      unpack_params(net, x);
      result.loss_trace.push_back(
          dataset_loss(net, view_data, targets, &per_head_r));
      result.per_head_trace.push_back(std::move(per_head_r));
      continue;
    }

    const Eigen::VectorXd g_new = grad_at(x);
    // Polak-Ribiere with nonnegativity clamp and periodic restart
    double beta = g_new.dot(g_new - g) / std::max(g.dot(g), 1e-300);
    beta = std::max(0.0, beta);
    if ((iter + 1) % cfg.cg_restart == 0) beta = 0.0;
    direction = -g_new + beta * direction;
    is_steepest = beta == 0.0;
    g = g_new;

    std::vector<double> per_head;
    unpack_params(net, x);
    result.loss_trace.push_back(dataset_loss(net, view_data, targets, &per_head));
    result.per_head_trace.push_back(std::move(per_head));
  }
  unpack_params(net, x);
}

}  // namespace

FinetuneResult finetune(DeepNet net, const std::vector<Matrix>& view_data,
                        const std::vector<InstanceTargets>& targets,
                        const FinetuneConfig& cfg) {
  cfg.validate();
  net.check_consistent();
  if (view_data.size() != net.views.size()) {
    throw std::invalid_argument("corpus does not supply every view");
  }
  const Eigen::Index rows = view_data.empty() ? 0 : view_data.front().rows();
  if (static_cast<std::size_t>(rows) != targets.size()) {
    throw std::invalid_argument("targets are not aligned with the corpus");
  }

  FinetuneResult result;
  std::vector<double> per_head0;
  result.loss_trace.push_back(dataset_loss(net, view_data, targets, &per_head0));
  result.per_head_trace.push_back(std::move(per_head0));

  if (rows > 0 && cfg.epochs > 0) {
    if (cfg.optimizer == FinetuneConfig::Optimizer::kSgd) {
      sgd_train(net, view_data, targets, cfg, result);
    } else {
      cg_train(net, view_data, targets, cfg, result);
    }
  }
  result.net = std::move(net);
  return result;
}

}  // namespace mtdbn
