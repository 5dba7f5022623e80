#pragma once

#include "mvct/train.hpp"

namespace mvct {

struct BiasEdge {
  int layer = 0, head = 0;
  int rank = 0;   // 1-based within its (layer, head)
  int i = 0, j = 0;  // ROI indices, i < j
  double distance = 0.0;
  double bias = 0.0;
};

// Strongest learned spatial-prior edges: for every (layer, head), undirected
// ROI pairs ranked by bias value, descending; ties break on (i, j). k is
// clamped to the number of pairs.
std::vector<BiasEdge> top_bias_edges(const ModelState& ms, const Atlas& atlas,
                                     int k);

// Mean distance of one (layer, head) group's selected edges — the spatial
// scale that head's prior concentrates on.
double mean_selected_distance(const std::vector<BiasEdge>& edges, int layer,
                              int head);

// Per-ROI received attention for one subject view: column means of the
// attention maps, averaged over heads (last layer, or all layers when the
// model is configured with mean_all). Normalized to sum to 1.
Vec saliency_scores(const ModelState& ms, const Atlas& atlas, const Mat& conn);

struct SalientRoi {
  int rank = 0;  // 1-based
  int roi = 0;
  double score = 0.0;
};

// Top-k ROIs by saliency, ties to the lower index. k is clamped to the ROI
// count.
std::vector<SalientRoi> salient_rois(const ModelState& ms, const Atlas& atlas,
                                     const Mat& conn, int k);

}  // namespace mvct
