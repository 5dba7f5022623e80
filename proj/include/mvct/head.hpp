#pragma once

#include "mvct/objectives.hpp"

namespace mvct {

// Pooled 1 x d embedding for one view: node-mean of the backbone output, or
// supernode-mean when the model was configured that way.
ad::Var view_readout(Fwd& f, const ModelState& ms, const Atlas& atlas,
                     const Mat& conn, DropCtx& drop);

// Class logits for a subject: per-view readouts are summed, then mapped by the
// shared linear head. Views whose atlas is not registered are an error.
ad::Var subject_logits(Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
                       const MultiViewSample& sample, DropCtx& drop);

// Cross entropy of the subject's logits against its label.
ad::Var classify_loss(Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
                      const MultiViewSample& sample, int label, DropCtx& drop);

// Plain-value class probabilities (1 x C), dropout off.
Vec predict_scores(const ModelState& ms, const AtlasRegistry& reg,
                   const MultiViewSample& sample);

// Mann-Whitney AUC from scores for the positive class; 0/1 labels.
// Ties get average ranks. Errors if either class is absent.
double binary_auc(const std::vector<double>& pos_scores,
                  const std::vector<int>& labels);

struct EvalReport {
  int n_eval = 0;
  int n_skipped = 0;  // unlabeled subjects
  double accuracy = 0.0;
  double auc = 0.0;                 // binary AUC or macro one-vs-rest
  std::vector<double> per_class_auc;
};

// Runs the model over the listed subjects (all labeled ones when `subset`
// is empty) and reports accuracy and AUC.
EvalReport evaluate(const ModelState& ms, const AtlasRegistry& reg,
                    const Dataset& ds, const std::vector<int>& subset = {});

}  // namespace mvct
