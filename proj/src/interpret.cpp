#include "mvct/interpret.hpp"

#include <algorithm>

namespace mvct {

std::vector<BiasEdge> top_bias_edges(const ModelState& ms, const Atlas& atlas,
                                     int k) {
  require(k >= 1, "edge count must be >= 1");
  int n = atlas.roi_count();
  int n_pairs = n * (n - 1) / 2;
  int take = std::min(k, n_pairs);
  std::vector<BiasEdge> out;
  for (int l = 0; l < ms.cfg.layers; ++l)
    for (int h = 0; h < ms.cfg.heads; ++h) {
      Mat b = distance_bias_value(ms, l, h, atlas);
      std::vector<std::pair<int, int>> pairs;
      pairs.reserve(std::size_t(n_pairs));
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
      std::sort(pairs.begin(), pairs.end(),
                [&](const std::pair<int, int>& a,
                    const std::pair<int, int>& c) {
                  double ba = b(a.first, a.second);
                  double bc = b(c.first, c.second);
                  if (ba != bc) return ba > bc;
                  return a < c;
                });
      for (int r = 0; r < take; ++r) {
        BiasEdge e;
        e.layer = l;
        e.head = h;
        e.rank = r + 1;
        e.i = pairs[std::size_t(r)].first;
        e.j = pairs[std::size_t(r)].second;
        e.distance = atlas.dist(e.i, e.j);
        e.bias = b(e.i, e.j);
        out.push_back(e);
      }
    }
  return out;
}

double mean_selected_distance(const std::vector<BiasEdge>& edges, int layer,
                              int head) {
  double sum = 0;
  int n = 0;
  for (const BiasEdge& e : edges)
    if (e.layer == layer && e.head == head) {
      sum += e.distance;
      ++n;
    }
  require(n > 0, "no edges for layer " + std::to_string(layer) + ", head " +
                     std::to_string(head));
  return sum / n;
}

Vec saliency_scores(const ModelState& ms, const Atlas& atlas, const Mat& conn) {
  EncodeTrace trace;
  encode_value(ms, atlas, conn, &trace);
  require(!trace.attn.empty(), "model has no attention layers");
  int n = atlas.roi_count();
  Vec score = Vec::Zero(n);
  bool all_layers = ms.cfg.saliency_layer == "mean_all";
  std::size_t first = all_layers ? 0 : trace.attn.size() - 1;
  int used = 0;
  for (std::size_t l = first; l < trace.attn.size(); ++l) {
    for (const Mat& a : trace.attn[l]) {
      score += a.colwise().mean().transpose();
      ++used;
    }
  }
  score /= double(used);
  double total = score.sum();
  require(total > 0.0, "degenerate attention maps");
  return score / total;
}

std::vector<SalientRoi> salient_rois(const ModelState& ms, const Atlas& atlas,
                                     const Mat& conn, int k) {
  require(k >= 1, "ROI count must be >= 1");
  Vec score = saliency_scores(ms, atlas, conn);
  int n = int(score.size());
  int take = std::min(k, n);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[std::size_t(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (score(a) != score(b)) return score(a) > score(b);
    return a < b;
  });
  std::vector<SalientRoi> out;
  for (int r = 0; r < take; ++r)
    out.push_back({r + 1, idx[std::size_t(r)], score(idx[std::size_t(r)])});
  return out;
}

}  // namespace mvct
