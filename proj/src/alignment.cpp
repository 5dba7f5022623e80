#include "mvct/alignment.hpp"

#include <cmath>

namespace mvct {

using namespace ad;

Mat normalized_adjacency(const Mat& adj) {
  require(adj.rows() == adj.cols(), "adjacency must be square");
  require(adj.allFinite(), "adjacency has non-finite entries");
  Eigen::Index n = adj.rows();
  Mat with_loops = adj + Mat::Identity(n, n);
  Vec deg = with_loops.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i)
    require(deg(i) > 0.0, "non-positive degree at node " + std::to_string(i));
  Vec dinv = deg.array().rsqrt().matrix();
  return dinv.asDiagonal() * with_loops * dinv.asDiagonal();
}

Var gcn_stack(Fwd& f, const std::string& group, ad::Var h, const Mat& norm_adj,
              int layers) {
  require(layers >= 1, "GCN stack needs at least one layer");
  Var a = f.t.input(norm_adj);
  for (int i = 0; i < layers; ++i) {
    std::string wname = group + ".W" + std::to_string(i);
    h = relu(f.t, matmul(f.t, matmul(f.t, a, h), f.p(wname)));
  }
  return h;
}

AlignOut align(Fwd& f, const ModelState& ms, ad::Var h, const Mat& conn) {
  const ModelConfig& cfg = ms.cfg;
  Mat adj = threshold_adjacency(conn, cfg.threshold, cfg.threshold_abs);
  Mat norm_adj = normalized_adjacency(adj);
  AlignOut out;
  out.feat = gcn_stack(f, "align.feat", h, norm_adj, cfg.gcn_layers);
  Var pool = gcn_stack(f, "align.pool", h, norm_adj, cfg.gcn_layers);
  out.assign = row_softmax(f.t, pool);
  out.super = matmul(f.t, transpose(f.t, out.assign), out.feat);
  return out;
}

Var assignment_entropy(Fwd& f, ad::Var assign) {
  Var safe = cmax(f.t, assign, 1e-8);
  Var plogp = mul(f.t, assign, log_op(f.t, safe));
  Eigen::Index n = f.t.val(assign).rows();
  return scale(f.t, sum_all(f.t, plogp), -1.0 / double(n));
}

}  // namespace mvct
