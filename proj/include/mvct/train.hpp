#pragma once

#include <functional>
#include <optional>

#include "mvct/head.hpp"

namespace mvct {

// ---- optimizer --------------------------------------------------------------

void optim_ensure(OptimState& opt, const ad::ParamStore& ps);

// One Adam update from ps.grad into ps.value. Bias-corrected, no weight decay.
void adam_step(ad::ParamStore& ps, OptimState& opt, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Scales all grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(ad::ParamStore& ps, double max_norm);

// ---- schedule / batching ----------------------------------------------------

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double base_lr = 1e-4;
  int warmup_epochs = 5;   // finetune only
  std::uint64_t seed = 0;
  double dropout = 0.0;
  double clip_norm = 0.0;  // 0 = off
  double val_fraction = 0.2;
  PretrainCfg pretrain;    // mask ratio / entropy sign / shared mask

  void validate(int phase_epochs_min = 1) const;
};

// Deterministic shuffled batches for one epoch; the short final batch is kept.
std::vector<std::vector<int>> make_batches(int n, int batch_size,
                                           std::uint64_t seed,
                                           std::int64_t epoch);

// Pretraining uses the constant base rate. Fine-tuning warms up linearly for
// warmup_epochs, then follows a cosine decay to zero.
double pretrain_lr(const TrainConfig& tc, int epoch);
double finetune_lr(const TrainConfig& tc, int epoch);

// ---- epoch reporting --------------------------------------------------------

struct EpochReport {
  std::string phase;
  int epoch = 0;  // 0-based
  double lr = 0.0;
  double loss = 0.0;
  double rec = 0.0, cc = 0.0, ent = 0.0;    // pretraining components
  std::optional<double> train_accuracy;     // finetuning, training-pass argmax
  std::optional<double> val_auc;            // finetuning
};

using MetricsSink = std::function<void(const EpochReport&)>;
using CheckpointFn = std::function<void(int completed_epoch)>;

// ---- pretraining ------------------------------------------------------------

struct PretrainResult {
  std::vector<EpochReport> history;
};

// Self-supervised training over every subject in `data` (labels ignored).
// start_epoch > 0 resumes mid-run: epochs [start_epoch, epochs) are executed
// and reproduce a straight-through run bit for bit when ms/opt come from the
// matching checkpoint.
PretrainResult pretrain(ModelState& ms, const AtlasRegistry& reg,
                        const std::vector<const Dataset*>& data,
                        const TrainConfig& tc, OptimState& opt,
                        int start_epoch = 0, const MetricsSink& sink = {},
                        const CheckpointFn& checkpoint = {});

// ---- fine-tuning ------------------------------------------------------------

struct SplitResult {
  std::vector<int> train, val;  // indices into ds.samples
  int skipped_unlabeled = 0;
};

// Stratified by label: per class, max(1, round(fraction * n)) subjects go to
// validation and at least one must remain for training.
SplitResult stratified_split(const Dataset& ds, double val_fraction,
                             std::uint64_t seed);

struct FinetuneResult {
  std::vector<EpochReport> history;
  double best_val_auc = 0.0;
  int best_epoch = -1;  // earliest epoch attaining best_val_auc
  int n_train = 0, n_val = 0, skipped_unlabeled = 0;
};

// Supervised training of head + backbone. Registers any atlases the model has
// not seen, attaches the head, and leaves the best-validation-AUC parameters
// installed on return.
FinetuneResult finetune(ModelState& ms, const AtlasRegistry& reg,
                        const Dataset& ds, const TrainConfig& tc,
                        const MetricsSink& sink = {});

// ---- gradient verification --------------------------------------------------

// Builds named scalar losses on a shared forward pass. Implementations must be
// deterministic: the checker replays them many times.
using MultiLossFn =
    std::function<std::vector<ad::Var>(Fwd& f)>;

struct GradCheckEntry {
  std::string param;
  double analytic_norm = 0.0;
  double fd_norm = 0.0;
  double max_rel = 0.0;  // worst relative disagreement over entries
};

struct GradCheckReport {
  std::string loss_name;
  std::vector<GradCheckEntry> entries;
  double max_rel = 0.0;

  bool pass(double tol) const { return max_rel < tol; }
};

// Central finite differences against the analytic backward pass for every
// parameter entry and every loss. rel = |ga-gf| / max(floor, |ga|+|gf|).
// The default step is small because frequency parameters multiply mm-scale
// coordinates: third derivatives there reach (2 pi * 120)^3, so a 1e-5 step
// leaves percent-level truncation error while 3e-7 keeps both truncation and
// double roundoff orders below the tolerances used in the tests.
std::vector<GradCheckReport> grad_check(ad::ParamStore& ps,
                                        const MultiLossFn& fn,
                                        const std::vector<std::string>& names,
                                        double eps = 3e-7,
                                        double rel_floor = 1e-4);

}  // namespace mvct
