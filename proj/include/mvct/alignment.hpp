#pragma once

#include "mvct/connectome.hpp"
#include "mvct/encoder.hpp"
#include "mvct/model.hpp"

namespace mvct {

// Symmetric renormalization with self loops: D~^{-1/2} (Z + I) D~^{-1/2}.
Mat normalized_adjacency(const Mat& adj);

struct AlignOut {
  ad::Var feat;    // per-node features after the feature GCN, N x d
  ad::Var assign;  // soft node-to-supernode assignment, rows sum to 1
  ad::Var super;   // supernode embeddings S^T F, n_super x d
};

// One GCN stack; every layer is ReLU(A^ H W), no bias.
ad::Var gcn_stack(Fwd& f, const std::string& group, ad::Var h,
                  const Mat& norm_adj, int layers);

AlignOut align(Fwd& f, const ModelState& ms, ad::Var h, const Mat& conn);

// Mean over nodes of the entropy of each assignment row (rows clamped away
// from zero before the log).
ad::Var assignment_entropy(Fwd& f, ad::Var assign);

}  // namespace mvct
