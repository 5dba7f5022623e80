#include "mvct/train.hpp"

#include <algorithm>
#include <cmath>

namespace mvct {

using namespace ad;

// ---- optimizer --------------------------------------------------------------

void optim_ensure(OptimState& opt, const ParamStore& ps) {
  for (const auto& [name, v] : ps.value) {
    auto it = opt.m.find(name);
    if (it == opt.m.end()) {
      opt.m[name] = Mat::Zero(v.rows(), v.cols());
      opt.v[name] = Mat::Zero(v.rows(), v.cols());
    } else {
      require(it->second.rows() == v.rows() && it->second.cols() == v.cols(),
              "optimizer state shape mismatch for " + name);
    }
  }
}

void adam_step(ParamStore& ps, OptimState& opt, double lr, double beta1,
               double beta2, double eps) {
  optim_ensure(opt, ps);
  ++opt.t;
  double bc1 = 1.0 - std::pow(beta1, double(opt.t));
  double bc2 = 1.0 - std::pow(beta2, double(opt.t));
  for (auto& [name, value] : ps.value) {
    const Mat& g = ps.grad.at(name);
    Mat& m = opt.m[name];
    Mat& v = opt.v[name];
    m = beta1 * m + (1.0 - beta1) * g;
    v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    value -= (lr * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
  }
}

double clip_global_norm(ParamStore& ps, double max_norm) {
  double norm = std::sqrt(ps.grad_sq_norm());
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [name, g] : ps.grad) g *= s;
  }
  return norm;
}

// ---- schedule / batching ----------------------------------------------------

void TrainConfig::validate(int) const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(base_lr > 0.0, "learning rate must be positive");
  require(warmup_epochs >= 0, "warmup epochs must be >= 0");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(val_fraction > 0.0 && val_fraction < 1.0,
          "validation fraction must be in (0, 1)");
}

std::vector<std::vector<int>> make_batches(int n, int batch_size,
                                           std::uint64_t seed,
                                           std::int64_t epoch) {
  require(n >= 1, "cannot batch an empty sample set");
  require(batch_size >= 1, "batch size must be >= 1");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  Stream s(seed, {stream_tag::batch, std::uint64_t(epoch)});
  for (int i = n - 1; i > 0; --i)
    std::swap(order[std::size_t(i)],
              order[std::size_t(s.below(std::uint64_t(i) + 1))]);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

double pretrain_lr(const TrainConfig& tc, int) { return tc.base_lr; }

double finetune_lr(const TrainConfig& tc, int epoch) {
  require(epoch >= 0 && epoch < tc.epochs, "epoch outside schedule");
  if (epoch < tc.warmup_epochs)
    return tc.base_lr * double(epoch + 1) / double(tc.warmup_epochs);
  int decay_span = tc.epochs - tc.warmup_epochs;
  if (decay_span <= 1) return tc.base_lr;
  double progress = double(epoch - tc.warmup_epochs) / double(decay_span - 1);
  return tc.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---- pretraining ------------------------------------------------------------

PretrainResult pretrain(ModelState& ms, const AtlasRegistry& reg,
                        const std::vector<const Dataset*>& data,
                        const TrainConfig& tc, OptimState& opt,
                        int start_epoch, const MetricsSink& sink,
                        const CheckpointFn& checkpoint) {
  tc.validate();
  require(!data.empty(), "pretraining needs at least one dataset");
  std::vector<const MultiViewSample*> samples;
  for (const Dataset* ds : data) {
    require(ds != nullptr, "null dataset");
    for (const MultiViewSample& s : ds->samples) samples.push_back(&s);
  }
  require(!samples.empty(), "pretraining datasets contain no subjects");
  for (const MultiViewSample* s : samples)
    for (const auto& [atlas_id, conn] : s->views) {
      (void)conn;
      require(ms.has_atlas(atlas_id),
              "subject '" + s->subject_id + "' uses atlas '" + atlas_id +
                  "' which is not registered on the model");
      require(reg.has(atlas_id),
              "atlas '" + atlas_id + "' missing from the registry");
    }
  require(start_epoch >= 0 && start_epoch <= tc.epochs,
          "resume epoch outside the configured schedule");

  int n = int(samples.size());
  PretrainResult result;
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    double lr = pretrain_lr(tc, epoch);
    auto batches = make_batches(n, tc.batch_size, tc.seed, epoch);
    double ep_loss = 0, ep_rec = 0, ep_cc = 0, ep_ent = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape t;
      Fwd f(t, ms.params);
      DropCtx drop =
          tc.dropout > 0.0
              ? DropCtx::active(tc.dropout,
                                Stream(tc.seed, {stream_tag::dropout,
                                                 std::uint64_t(epoch),
                                                 std::uint64_t(b)}))
              : DropCtx::off();
      Var total{-1};
      double b_rec = 0, b_cc = 0, b_ent = 0;
      for (std::size_t k = 0; k < batches[b].size(); ++k) {
        const MultiViewSample& s = *samples[std::size_t(batches[b][k])];
        SubjectLossOut lo = pretrain_subject_loss(f, ms, reg, s, tc.pretrain,
                                                  drop, tc.seed, epoch);
        total = (k == 0) ? lo.total : add(t, total, lo.total);
        b_rec += lo.rec;
        b_cc += lo.cc;
        b_ent += lo.ent;
      }
      double bs = double(batches[b].size());
      Var batch_loss = scale(t, total, 1.0 / bs);
      double lv = t.val(batch_loss)(0, 0);
      if (!std::isfinite(lv))
        fail("non-finite pretraining loss at epoch " + std::to_string(epoch) +
             " batch " + std::to_string(b) + " (rec=" +
             std::to_string(b_rec / bs) + ", consistency=" +
             std::to_string(b_cc / bs) + ", entropy=" +
             std::to_string(b_ent / bs) + "); lower the learning rate");
      ms.params.zero_grad();
      t.backward(batch_loss);
      clip_global_norm(ms.params, tc.clip_norm);
      adam_step(ms.params, opt, lr);
      ep_loss += lv * bs;
      ep_rec += b_rec;
      ep_cc += b_cc;
      ep_ent += b_ent;
    }
    EpochReport rep;
    rep.phase = "pretrain";
    rep.epoch = epoch;
    rep.lr = lr;
    rep.loss = ep_loss / double(n);
    rep.rec = ep_rec / double(n);
    rep.cc = ep_cc / double(n);
    rep.ent = ep_ent / double(n);
    result.history.push_back(rep);
    if (sink) sink(rep);
    if (checkpoint) checkpoint(epoch);
  }
  return result;
}

// ---- fine-tuning ------------------------------------------------------------

SplitResult stratified_split(const Dataset& ds, double val_fraction,
                             std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0,
          "validation fraction must be in (0, 1)");
  std::map<int, std::vector<int>> by_class;
  SplitResult out;
  for (int i = 0; i < int(ds.samples.size()); ++i) {
    const auto& s = ds.samples[std::size_t(i)];
    if (!s.label) {
      ++out.skipped_unlabeled;
      continue;
    }
    by_class[*s.label].push_back(i);
  }
  require(!by_class.empty(), "dataset has no labeled subjects");
  for (auto& [label, idx] : by_class) {
    Stream s(seed, {stream_tag::split, std::uint64_t(label)});
    for (int i = int(idx.size()) - 1; i > 0; --i)
      std::swap(idx[std::size_t(i)],
                idx[std::size_t(s.below(std::uint64_t(i) + 1))]);
    int n = int(idx.size());
    int n_val = std::max(1, int(std::llround(val_fraction * double(n))));
    require(n - n_val >= 1,
            "class " + std::to_string(label) + " has only " +
                std::to_string(n) +
                " labeled subjects; cannot hold out a validation set");
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + n_val);
    out.train.insert(out.train.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

FinetuneResult finetune(ModelState& ms, const AtlasRegistry& reg,
                        const Dataset& ds, const TrainConfig& tc,
                        const MetricsSink& sink) {
  tc.validate();
  for (const std::string& id : ds.atlas_ids())
    if (!ms.has_atlas(id)) ms.register_atlas(reg.get(id));

  int num_classes = ds.num_classes;
  if (num_classes <= 0) {
    for (const auto& s : ds.samples)
      if (s.label) num_classes = std::max(num_classes, *s.label + 1);
  }
  require(num_classes >= 2, "fine-tuning needs at least two classes");
  ms.ensure_head(num_classes);

  SplitResult split = stratified_split(ds, tc.val_fraction, tc.seed);
  FinetuneResult result;
  result.n_train = int(split.train.size());
  result.n_val = int(split.val.size());
  result.skipped_unlabeled = split.skipped_unlabeled;

  OptimState opt;
  std::map<std::string, Mat> best_params = ms.snapshot_params();
  int n = result.n_train;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double lr = finetune_lr(tc, epoch);
    auto batches = make_batches(n, tc.batch_size, tc.seed, epoch);
    double ep_loss = 0;
    int ep_correct = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape t;
      Fwd f(t, ms.params);
      DropCtx drop =
          tc.dropout > 0.0
              ? DropCtx::active(tc.dropout,
                                Stream(tc.seed, {stream_tag::dropout,
                                                 std::uint64_t(epoch),
                                                 std::uint64_t(b)}))
              : DropCtx::off();
      Var total{-1};
      for (std::size_t k = 0; k < batches[b].size(); ++k) {
        const MultiViewSample& s =
            ds.samples[std::size_t(split.train[std::size_t(batches[b][k])])];
        Var logits = subject_logits(f, ms, reg, s, drop);
        const Mat& lv = t.val(logits);
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
          if (lv(0, c) > lv(0, pred)) pred = c;
        if (pred == *s.label) ++ep_correct;
        Var ce = ce_loss(t, logits, *s.label);
        total = (k == 0) ? ce : add(t, total, ce);
      }
      double bs = double(batches[b].size());
      Var batch_loss = scale(t, total, 1.0 / bs);
      double lv = t.val(batch_loss)(0, 0);
      if (!std::isfinite(lv))
        fail("non-finite fine-tuning loss at epoch " + std::to_string(epoch) +
             " batch " + std::to_string(b) + "; lower the learning rate");
      ms.params.zero_grad();
      t.backward(batch_loss);
      clip_global_norm(ms.params, tc.clip_norm);
      adam_step(ms.params, opt, lr);
      ep_loss += lv * bs;
    }
    EvalReport val = evaluate(ms, reg, ds, split.val);
    EpochReport rep;
    rep.phase = "finetune";
    rep.epoch = epoch;
    rep.lr = lr;
    rep.loss = ep_loss / double(n);
    rep.train_accuracy = double(ep_correct) / double(n);
    rep.val_auc = val.auc;
    result.history.push_back(rep);
    if (sink) sink(rep);
    if (val.auc > result.best_val_auc || result.best_epoch < 0) {
      result.best_val_auc = val.auc;
      result.best_epoch = epoch;
      best_params = ms.snapshot_params();
    }
  }
  ms.install_params(best_params);
  return result;
}

// ---- gradient verification --------------------------------------------------

std::vector<GradCheckReport> grad_check(ParamStore& ps, const MultiLossFn& fn,
                                        const std::vector<std::string>& names,
                                        double eps, double rel_floor) {
  require(eps > 0.0, "finite-difference step must be positive");
  require(!names.empty(), "no losses to check");

  auto eval_values = [&]() {
    Tape t;
    Fwd f(t, ps);
    std::vector<Var> ls = fn(f);
    require(ls.size() == names.size(), "loss count mismatch");
    std::vector<double> out;
    for (Var l : ls) {
      const Mat& v = t.val(l);
      require(v.rows() == 1 && v.cols() == 1, "losses must be scalars");
      out.push_back(v(0, 0));
    }
    return out;
  };

  // Analytic gradients: one forward pass, one backward sweep per loss.
  std::size_t k = names.size();
  std::vector<std::map<std::string, Mat>> analytic(k);
  {
    Tape t;
    Fwd f(t, ps);
    std::vector<Var> ls = fn(f);
    require(ls.size() == k, "loss count mismatch");
    for (std::size_t i = 0; i < k; ++i) {
      ps.zero_grad();
      t.clear_grads();
      t.backward(ls[i]);
      analytic[i] = ps.grad;
    }
    ps.zero_grad();
  }

  std::vector<GradCheckReport> reports(k);
  for (std::size_t i = 0; i < k; ++i) reports[i].loss_name = names[i];
  for (auto& [pname, value] : ps.value) {
    std::vector<GradCheckEntry> ent(k);
    for (std::size_t i = 0; i < k; ++i) ent[i].param = pname;
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        double orig = value(r, c);
        value(r, c) = orig + eps;
        std::vector<double> up = eval_values();
        value(r, c) = orig - eps;
        std::vector<double> down = eval_values();
        value(r, c) = orig;
        for (std::size_t i = 0; i < k; ++i) {
          double gf = (up[i] - down[i]) / (2.0 * eps);
          double ga = analytic[i].at(pname)(r, c);
          double rel =
              std::fabs(ga - gf) / std::max(rel_floor,
                                            std::fabs(ga) + std::fabs(gf));
          ent[i].analytic_norm += ga * ga;
          ent[i].fd_norm += gf * gf;
          ent[i].max_rel = std::max(ent[i].max_rel, rel);
        }
      }
    for (std::size_t i = 0; i < k; ++i) {
      ent[i].analytic_norm = std::sqrt(ent[i].analytic_norm);
      ent[i].fd_norm = std::sqrt(ent[i].fd_norm);
      reports[i].max_rel = std::max(reports[i].max_rel, ent[i].max_rel);
      reports[i].entries.push_back(ent[i]);
    }
  }
  return reports;
}

}  // namespace mvct
