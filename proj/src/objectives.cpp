#include "mvct/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace mvct {

using namespace ad;

bool MaskPlan::is_masked(int i) const {
  return std::binary_search(masked.begin(), masked.end(), i);
}

MaskPlan mask_split(int n, double ratio, Stream& s) {
  require(n >= 1, "cannot mask an empty set of supernodes");
  require(ratio > 0.0 && ratio <= 1.0, "mask ratio must be in (0, 1]");
  int m = int(std::llround(ratio * double(n)));
  require(m >= 1, "mask ratio " + std::to_string(ratio) + " selects zero of " +
                      std::to_string(n) + " supernodes");
  m = std::min(m, n);
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < m; ++i)
    std::swap(idx[i], idx[i + int(s.below(std::uint64_t(n - i)))]);
  MaskPlan plan;
  plan.total = n;
  plan.masked.assign(idx.begin(), idx.begin() + m);
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

Mat row_mask_matrix(Eigen::Index rows, Eigen::Index cols,
                    const std::vector<int>& rows_set, double inside,
                    double outside) {
  Mat m = Mat::Constant(rows, cols, outside);
  for (int r : rows_set) {
    require(r >= 0 && Eigen::Index(r) < rows, "mask row out of range");
    m.row(r).setConstant(inside);
  }
  return m;
}

Var decoder_forward(Fwd& f, const ModelState& ms, const std::string& atlas_id,
                    ad::Var h, DropCtx& drop) {
  const ModelConfig& cfg = ms.cfg;
  require(ms.has_atlas(atlas_id),
          "atlas '" + atlas_id + "' has no decoder; register the atlas first");
  double inv_sqrt_dh = 1.0 / std::sqrt(double(cfg.head_dim()));
  constexpr double ln_eps = 1e-5;
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string lp = "dec." + atlas_id + ".l" + std::to_string(l);
    std::vector<Var> head_outs;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      std::string hp = lp + ".h" + std::to_string(hd);
      Var q = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wq")), f.p(hp + ".bq"));
      Var k = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wk")), f.p(hp + ".bk"));
      Var v = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wv")), f.p(hp + ".bv"));
      Var a = row_softmax(
          f.t, scale(f.t, matmul(f.t, q, transpose(f.t, k)), inv_sqrt_dh));
      head_outs.push_back(matmul(f.t, drop.apply(f, a), v));
    }
    Var mh = add_rowvec(f.t, matmul(f.t, concat_cols(f.t, head_outs),
                                    f.p(lp + ".WO")),
                        f.p(lp + ".bO"));
    Var res1 = add(f.t, h, mh);
    h = add_rowvec(f.t,
                   mul_rowvec(f.t, layer_norm_rows(f.t, res1, ln_eps),
                              f.p(lp + ".ln1.g")),
                   f.p(lp + ".ln1.b"));
    Var hidden = gelu(f.t, add_rowvec(f.t, matmul(f.t, h, f.p(lp + ".ffn.W1")),
                                      f.p(lp + ".ffn.b1")));
    hidden = drop.apply(f, hidden);
    Var ffn_out = add_rowvec(f.t, matmul(f.t, hidden, f.p(lp + ".ffn.W2")),
                             f.p(lp + ".ffn.b2"));
    Var res2 = add(f.t, h, ffn_out);
    h = add_rowvec(f.t,
                   mul_rowvec(f.t, layer_norm_rows(f.t, res2, ln_eps),
                              f.p(lp + ".ln2.g")),
                   f.p(lp + ".ln2.b"));
  }
  return h;
}

Var masked_reconstruction_loss(Fwd& f, ad::Var pred, ad::Var target,
                               const MaskPlan& plan) {
  // Copy the dims out: val() references tape storage, which node creation
  // below may reallocate.
  const Eigen::Index rows = f.t.val(pred).rows();
  const Eigen::Index cols = f.t.val(pred).cols();
  require(f.t.val(target).rows() == rows && f.t.val(target).cols() == cols,
          "prediction/target shape mismatch");
  require(Eigen::Index(plan.total) == rows,
          "mask plan covers " + std::to_string(plan.total) +
              " rows but prediction has " + std::to_string(rows));
  require(!plan.masked.empty(), "mask plan selects no rows");
  // Zero the unmasked rows before the penalty so they contribute exactly
  // nothing, then average over masked entries only.
  Mat keep = row_mask_matrix(rows, cols, plan.masked, 1.0, 0.0);
  Var diff = mul_cmat(f.t, sub(f.t, pred, target), keep);
  double denom = double(plan.masked.size()) * double(cols);
  return scale(f.t, sum_all(f.t, smooth_l1(f.t, diff)), 1.0 / denom);
}

Var prototype_assign(Fwd& f, const ModelState& ms, ad::Var super) {
  Var h = super;
  for (int i = 0; i < ms.cfg.proto_layers; ++i) {
    std::string wi = "proto.W" + std::to_string(i);
    std::string bi = "proto.b" + std::to_string(i);
    h = add_rowvec(f.t, matmul(f.t, h, f.p(wi)), f.p(bi));
    if (i + 1 < ms.cfg.proto_layers) h = relu(f.t, h);
  }
  return row_softmax(f.t, h);
}

Var clustering_consistency_loss(Fwd& f, const std::vector<ad::Var>& probs) {
  require(probs.size() >= 2,
          "cross-view consistency needs at least two views");
  std::size_t m = probs.size();
  // The mean as p0 + mean(p_i - p0): same value, but bitwise equal to the
  // views when they coincide, which makes the loss an exact 0.0 there.
  Var dev = sub(f.t, probs[1], probs[0]);
  for (std::size_t i = 2; i < m; ++i)
    dev = add(f.t, dev, sub(f.t, probs[i], probs[0]));
  Var pbar = add(f.t, probs[0], scale(f.t, dev, 1.0 / double(m)));
  Var lbar = log_op(f.t, cmax(f.t, pbar, 1e-8));
  Var total{-1};
  for (std::size_t i = 0; i < m; ++i) {
    Var lp = log_op(f.t, cmax(f.t, probs[i], 1e-8));
    Var fwd_kl = mul(f.t, probs[i], sub(f.t, lp, lbar));
    Var rev_kl = mul(f.t, pbar, sub(f.t, lbar, lp));
    Var both = sum_all(f.t, add(f.t, fwd_kl, rev_kl));
    total = (i == 0) ? both : add(f.t, total, both);
  }
  Eigen::Index n = f.t.val(probs[0]).rows();
  return scale(f.t, total, 1.0 / (2.0 * double(m) * double(n)));
}

SubjectLossOut pretrain_subject_loss(
    Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
    const MultiViewSample& sample, const PretrainCfg& pcfg, DropCtx& drop,
    uint64_t run_seed, int64_t epoch,
    const std::map<std::string, Mat>* frozen_targets) {
  require(!sample.views.empty(),
          "subject '" + sample.subject_id + "' has no views");
  SubjectLossOut out;
  std::vector<Var> rec_terms, ent_terms;
  std::vector<Var> probs;
  std::uint64_t subj_key = hash_str(sample.subject_id);
  std::uint64_t view_idx = 0;
  for (const auto& [atlas_id, conn] : sample.views) {
    const Atlas& atlas = reg.get(atlas_id);
    Var h = encode(f, ms, atlas, conn, drop);
    AlignOut ao = align(f, ms, h, conn);
    ent_terms.push_back(assignment_entropy(f, ao.assign));
    probs.push_back(prototype_assign(f, ms, ao.super));

    std::uint64_t mask_slot = pcfg.shared_mask ? 0 : view_idx;
    Stream mstream(run_seed, {stream_tag::mask, std::uint64_t(epoch), subj_key,
                              mask_slot});
    MaskPlan plan = mask_split(ms.cfg.n_super, pcfg.mask_ratio, mstream);
    Mat keep = row_mask_matrix(ms.cfg.n_super, ms.cfg.d, plan.masked, 0.0, 1.0);
    Var masked_in = mul_cmat(f.t, ao.super, keep);
    Var pred = decoder_forward(f, ms, atlas_id, masked_in, drop);
    Var target{-1};
    if (frozen_targets) {
      auto fit = frozen_targets->find(atlas_id);
      require(fit != frozen_targets->end(),
              "no frozen target for atlas '" + atlas_id + "'");
      target = f.t.input(fit->second);
    } else {
      target = detach(f.t, ao.super);
    }
    rec_terms.push_back(masked_reconstruction_loss(f, pred, target, plan));
    ++view_idx;
  }
  int m = int(rec_terms.size());
  auto mean_of = [&](std::vector<Var>& terms) {
    Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i)
      acc = add(f.t, acc, terms[i]);
    return scale(f.t, acc, 1.0 / double(m));
  };
  Var rec = mean_of(rec_terms);
  Var ent = mean_of(ent_terms);
  Var total = add(f.t, rec, scale(f.t, ent, pcfg.entropy_sign));
  out.cc = 0.0;
  if (m >= 2) {
    Var cc = clustering_consistency_loss(f, probs);
    total = add(f.t, total, cc);
    out.cc = f.t.val(cc)(0, 0);
    out.cc_var = cc;
  }
  out.total = total;
  out.rec_var = rec;
  out.ent_var = ent;
  out.rec = f.t.val(rec)(0, 0);
  out.ent = f.t.val(ent)(0, 0);
  out.views = m;
  return out;
}

std::map<std::string, Mat> supernode_targets(const ModelState& ms,
                                             const AtlasRegistry& reg,
                                             const MultiViewSample& sample) {
  std::map<std::string, Mat> out;
  for (const auto& [atlas_id, conn] : sample.views) {
    ad::Tape t;
    Fwd f(t, const_cast<ad::ParamStore&>(ms.params));  // read-only use
    DropCtx drop = DropCtx::off();
    Var h = encode(f, ms, reg.get(atlas_id), conn, drop);
    out[atlas_id] = t.val(align(f, ms, h, conn).super);
  }
  return out;
}

}  // namespace mvct
