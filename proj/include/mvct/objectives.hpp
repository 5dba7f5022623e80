#pragma once

#include "mvct/alignment.hpp"

namespace mvct {

struct MaskPlan {
  int total = 0;
  std::vector<int> masked;  // sorted supernode indices

  bool is_masked(int i) const;
};

// Draws round(ratio * n) distinct indices (must be >= 1) via partial shuffle.
MaskPlan mask_split(int n, double ratio, Stream& s);

// rows x cols matrix with `inside` on the rows listed in `rows_set` and
// `outside` elsewhere.
Mat row_mask_matrix(Eigen::Index rows, Eigen::Index cols,
                    const std::vector<int>& rows_set, double inside,
                    double outside);

// Per-atlas decoder: standard post-norm transformer blocks (plain attention,
// no distance bias, no gating).
ad::Var decoder_forward(Fwd& f, const ModelState& ms,
                        const std::string& atlas_id, ad::Var h, DropCtx& drop);

// Smooth-L1 between pred and target restricted to the masked rows, averaged
// over masked entries. Rows of `target` outside the plan never touch the
// result.
ad::Var masked_reconstruction_loss(Fwd& f, ad::Var pred, ad::Var target,
                                   const MaskPlan& plan);

// Soft prototype assignment of supernode embeddings, rows sum to 1.
ad::Var prototype_assign(Fwd& f, const ModelState& ms, ad::Var super);

// Symmetrized mean KL between each view's assignment and the view average.
// Requires at least two views.
ad::Var clustering_consistency_loss(Fwd& f, const std::vector<ad::Var>& probs);

struct PretrainCfg {
  double mask_ratio = 0.5;
  double entropy_sign = -1.0;  // +1 penalizes entropy, -1 rewards it
  bool shared_mask = false;    // one supernode mask reused across views
};

struct SubjectLossOut {
  ad::Var total;
  ad::Var rec_var, ent_var;  // view-averaged components
  ad::Var cc_var;            // only valid when views >= 2
  double rec = 0.0;
  double cc = 0.0;
  double ent = 0.0;
  int views = 0;
};

// Full self-supervised loss for one subject: masked supernode reconstruction
// (targets detached) + cross-view consistency (when >= 2 views) + the signed
// assignment-entropy term, each averaged over the subject's views.
//
// `frozen_targets` (atlas id -> n_super x d) substitutes fixed reconstruction
// targets for the usual same-pass detached ones. Training never needs it; the
// finite-difference gradient checks do, because a difference quotient cannot
// hold the detached branch constant unless the targets really are constants.
SubjectLossOut pretrain_subject_loss(
    Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
    const MultiViewSample& sample, const PretrainCfg& pcfg, DropCtx& drop,
    uint64_t run_seed, int64_t epoch,
    const std::map<std::string, Mat>* frozen_targets = nullptr);

// The per-view supernode embeddings at the current parameter values (dropout
// off) — the reconstruction targets a same-pass run would detach.
std::map<std::string, Mat> supernode_targets(const ModelState& ms,
                                             const AtlasRegistry& reg,
                                             const MultiViewSample& sample);

}  // namespace mvct
