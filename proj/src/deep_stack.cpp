#include "mtdbn/deep_stack.hpp"

#include <sstream>

namespace mtdbn {

int DeepNet::joint_input_dim() const {
  int total = 0;
  for (const auto& spec : views) total += spec.hidden;
  return total;
}

void DeepNet::check_consistent() const {
  if (views.size() != view_params.size()) {
    throw std::invalid_argument("view spec / parameter count mismatch");
  }
  for (std::size_t s = 0; s < views.size(); ++s) {
    const auto& spec = views[s];
    const auto& p = view_params[s];
    p.check_consistent();
    if (p.unit_type != spec.unit_type || p.visible_dim() != spec.dim ||
        p.hidden_dim() != spec.hidden) {
      throw std::invalid_argument("view '" + spec.name +
                                  "' parameters do not match its spec");
    }
  }
  joint.check_consistent();
  if (joint.unit_type != UnitType::kBinary) {
    throw std::invalid_argument("joint layer must be binary");
  }
  if (joint.visible_dim() != joint_input_dim()) {
    throw std::invalid_argument(
        "joint input dim does not equal the sum of view hidden dims");
  }
  for (const auto& head : heads) {
    head.check_consistent();
    if (head.feature_dim() != top_dim()) {
      throw std::invalid_argument("head '" + head.name +
                                  "' width does not match the top layer");
    }
  }
}

PretrainViewsResult pretrain_views(const std::vector<ViewSpec>& specs,
                                   const std::vector<VisibleBatch>& views,
                                   const std::vector<SparseCdConfig>& cfgs) {
  if (specs.empty()) throw std::invalid_argument("no views declared");
  if (views.size() != specs.size() || cfgs.size() != specs.size()) {
    throw std::invalid_argument("views/specs/configs must align");
  }
  const int rows = views.front().rows();
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (views[s].unit_type != specs[s].unit_type ||
        views[s].cols() != specs[s].dim) {
      throw DataError("view '" + specs[s].name +
                      "' data does not match its declaration");
    }
    if (views[s].rows() != rows || views[s].rows() == 0) {
      std::ostringstream os;
      os << "view '" << specs[s].name << "' has " << views[s].rows()
         << " instances, expected " << rows;
      throw DataError(os.str());
    }
  }

  PretrainViewsResult result;
  result.params.reserve(specs.size());
  result.posteriors.reserve(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    RbmTrainResult trained = train_rbm(views[s], specs[s].hidden, cfgs[s]);
    result.posteriors.push_back(
        hidden_posterior_batch(trained.params, views[s].data));
    result.params.push_back(std::move(trained.params));
    result.recon_traces.push_back(std::move(trained.recon_trace));
  }
  return result;
}

PretrainJointResult pretrain_joint(const std::vector<Matrix>& posteriors,
                                   int hidden, const SparseCdConfig& cfg) {
  if (posteriors.empty()) throw std::invalid_argument("no posteriors given");
  const Eigen::Index rows = posteriors.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : posteriors) {
    if (p.rows() != rows) {
      throw std::invalid_argument("posterior matrices are not row-aligned");
    }
    total += p.cols();
  }
  Matrix concat(rows, total);
  Eigen::Index offset = 0;
  for (const auto& p : posteriors) {
    concat.middleCols(offset, p.cols()) = p;
    offset += p.cols();
  }

  const VisibleBatch batch = VisibleBatch::make_binary_probabilities(std::move(concat));
  RbmTrainResult trained = train_rbm(batch, hidden, cfg);
  return PretrainJointResult{std::move(trained.params),
                             std::move(trained.recon_trace)};
}

Vector forward(const DeepNet& net, const std::vector<Vector>& instance_views) {
  if (instance_views.size() != net.views.size()) {
    throw std::invalid_argument("instance does not supply every view");
  }
  Vector concat(net.joint_input_dim());
  Eigen::Index offset = 0;
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    if (instance_views[s].size() != net.views[s].dim) {
      throw std::invalid_argument("view '" + net.views[s].name +
                                  "' vector has the wrong dimension");
    }
    concat.segment(offset, net.views[s].hidden) =
        hidden_posterior(net.view_params[s], instance_views[s]);
    offset += net.views[s].hidden;
  }
  return hidden_posterior(net.joint, concat);
}

Matrix embed_corpus(const DeepNet& net, const std::vector<Matrix>& view_data) {
  if (view_data.size() != net.views.size()) {
    throw std::invalid_argument("corpus does not supply every view");
  }
  const Eigen::Index rows = view_data.empty() ? 0 : view_data.front().rows();
  for (std::size_t s = 0; s < view_data.size(); ++s) {
    if (view_data[s].rows() != rows) {
      throw std::invalid_argument("corpus views are not row-aligned");
    }
    if (view_data[s].cols() != net.views[s].dim) {
      throw std::invalid_argument("view '" + net.views[s].name +
                                  "' matrix has the wrong dimension");
    }
  }
  Matrix out(rows, net.top_dim());
  parallel_for(rows, [&](std::int64_t r) {
    std::vector<Vector> instance;
    instance.reserve(view_data.size());
    for (const auto& v : view_data) {
      instance.push_back(v.row(r).transpose());
    }
    out.row(r) = forward(net, instance).transpose();
  });
  return out;
}

}  // namespace mtdbn
