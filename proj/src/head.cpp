#include "mvct/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvct {

using namespace ad;

Var view_readout(Fwd& f, const ModelState& ms, const Atlas& atlas,
                 const Mat& conn, DropCtx& drop) {
  Var h = encode(f, ms, atlas, conn, drop);
  if (ms.cfg.readout_source == "supernodes") {
    AlignOut ao = align(f, ms, h, conn);
    return col_mean(f.t, ao.super);
  }
  return col_mean(f.t, h);
}

Var subject_logits(Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
                   const MultiViewSample& sample, DropCtx& drop) {
  require(!sample.views.empty(),
          "subject '" + sample.subject_id + "' has no views");
  require(f.ps.has("head.W"),
          "model has no classification head; run fine-tuning first");
  Var pooled{-1};
  bool first = true;
  for (const auto& [atlas_id, conn] : sample.views) {
    Var r = view_readout(f, ms, reg.get(atlas_id), conn, drop);
    pooled = first ? r : add(f.t, pooled, r);
    first = false;
  }
  return add_rowvec(f.t, matmul(f.t, pooled, f.p("head.W")), f.p("head.b"));
}

Var classify_loss(Fwd& f, const ModelState& ms, const AtlasRegistry& reg,
                  const MultiViewSample& sample, int label, DropCtx& drop) {
  return ce_loss(f.t, subject_logits(f, ms, reg, sample, drop), label);
}

Vec predict_scores(const ModelState& ms, const AtlasRegistry& reg,
                   const MultiViewSample& sample) {
  ad::Tape t;
  Fwd f(t, const_cast<ad::ParamStore&>(ms.params));  // read-only use
  DropCtx drop = DropCtx::off();
  Var logits = subject_logits(f, ms, reg, sample, drop);
  Mat p = t.val(row_softmax(t, logits));
  return p.row(0).transpose();
}

double binary_auc(const std::vector<double>& pos_scores,
                  const std::vector<int>& labels) {
  require(pos_scores.size() == labels.size(), "scores/labels size mismatch");
  std::size_t n = labels.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "binary AUC needs 0/1 labels");
    n_pos += std::size_t(l);
  }
  require(n_pos > 0 && n_pos < n,
          "AUC undefined: evaluation set has a single class");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return pos_scores[a] < pos_scores[b];
  });
  // Average ranks across tied scores, then the Mann-Whitney statistic.
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pos_scores[order[j + 1]] == pos_scores[order[i]]) ++j;
    double avg = 0.5 * double(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] == 1) rank_sum_pos += rank[k];
  double np = double(n_pos), nn = double(n - n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

EvalReport evaluate(const ModelState& ms, const AtlasRegistry& reg,
                    const Dataset& ds, const std::vector<int>& subset) {
  require(ms.cfg.num_classes >= 2, "model has no trained head to evaluate");
  std::vector<int> idx = subset;
  if (idx.empty())
    for (int i = 0; i < int(ds.samples.size()); ++i) idx.push_back(i);
  EvalReport rep;
  int c = ms.cfg.num_classes;
  std::vector<std::vector<double>> scores;
  scores.resize(std::size_t(c));
  std::vector<int> labels;
  int correct = 0;
  for (int i : idx) {
    require(i >= 0 && i < int(ds.samples.size()),
            "evaluation index out of range");
    const MultiViewSample& s = ds.samples[std::size_t(i)];
    if (!s.label) {
      ++rep.n_skipped;
      continue;
    }
    require(*s.label >= 0 && *s.label < c,
            "subject '" + s.subject_id + "' has label " +
                std::to_string(*s.label) + " outside the trained head");
    Vec p = predict_scores(ms, reg, s);
    int pred = 0;
    for (int k = 1; k < c; ++k)
      if (p(k) > p(pred)) pred = k;
    if (pred == *s.label) ++correct;
    for (int k = 0; k < c; ++k) scores[std::size_t(k)].push_back(p(k));
    labels.push_back(*s.label);
    ++rep.n_eval;
  }
  require(rep.n_eval > 0, "no labeled subjects to evaluate");
  rep.accuracy = double(correct) / double(rep.n_eval);
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    std::vector<int> ovr(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j)
      ovr[j] = labels[j] == k ? 1 : 0;
    double a = binary_auc(scores[std::size_t(k)], ovr);
    rep.per_class_auc.push_back(a);
    sum += a;
  }
  // Two classes: the standard positive-class AUC. More: macro one-vs-rest.
  rep.auc = c == 2 ? rep.per_class_auc[1] : sum / double(c);
  return rep;
}

}  // namespace mvct
