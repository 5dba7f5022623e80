#include "mvct/verify.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "mvct/interpret.hpp"

namespace mvct {

namespace {

struct Toy {
  AtlasRegistry reg;
  ModelConfig cfg;
  ModelState ms;
  Dataset data;
};

Toy make_toy(std::uint64_t seed) {
  Toy t;
  Mat box(2, 3);
  box << 0, 0, 0, 60, 60, 60;
  t.reg.add(synth_atlas("toy_a", 5, seed, box));
  t.reg.add(synth_atlas("toy_b", 6, seed + 1, box));
  t.cfg.d = 8;
  t.cfg.layers = 1;
  t.cfg.heads = 2;
  t.cfg.freq_count = 2;
  t.cfg.n_super = 3;
  t.cfg.prototypes = 2;
  t.cfg.decoder_layers = 1;
  t.ms = ModelState::init(
      t.cfg, {&t.reg.get("toy_a"), &t.reg.get("toy_b")}, seed);
  SynthConfig sc;
  sc.atlases = {"toy_a", "toy_b"};
  sc.subjects_per_class = 2;
  sc.num_classes = 2;
  sc.communities = 2;
  t.data = synth_generate(sc, seed, t.reg);
  return t;
}

CheckResult run_one(const std::string& name,
                    const std::function<std::string()>& body) {
  CheckResult r;
  r.name = name;
  try {
    r.detail = body();
    r.pass = true;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = e.what();
  }
  return r;
}

std::string fmtd(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

std::vector<CheckResult> run_self_checks() {
  std::vector<CheckResult> out;

  out.push_back(run_one("gradients", [] {
    Toy toy = make_toy(11);
    const MultiViewSample& s = toy.data.samples.front();
    PretrainCfg pc;
    auto targets = supernode_targets(toy.ms, toy.reg, s);
    auto fn = [&](Fwd& f) {
      DropCtx drop = DropCtx::off();
      SubjectLossOut lo = pretrain_subject_loss(f, toy.ms, toy.reg, s, pc,
                                                drop, 3, 0, &targets);
      return std::vector<ad::Var>{lo.total};
    };
    auto reps = grad_check(toy.ms.params, fn, {"total"});
    std::string worst;
    for (const auto& e : reps[0].entries)
      if (e.max_rel == reps[0].max_rel) worst = e.param;
    require(reps[0].pass(1e-3),
            "analytic and numeric gradients disagree (max rel " +
                fmtd(reps[0].max_rel) + " at " + worst + ")");
    return "max rel " + fmtd(reps[0].max_rel);
  }));

  out.push_back(run_one("attention-rows", [] {
    Toy toy = make_toy(12);
    const Atlas& a = toy.reg.get("toy_a");
    EncodeTrace trace;
    encode_value(toy.ms, a, toy.data.samples.front().views.at("toy_a"),
                 &trace);
    double worst = 0;
    for (const auto& layer : trace.attn)
      for (const Mat& m : layer) {
        require((m.array() >= 0).all(), "negative attention weight");
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          worst = std::max(worst, std::fabs(m.row(i).sum() - 1.0));
      }
    require(worst < 1e-9, "attention rows do not sum to 1");
    return "row-sum error " + fmtd(worst);
  }));

  out.push_back(run_one("mask-locality", [] {
    Toy toy = make_toy(13);
    ad::Tape t;
    Fwd f(t, toy.ms.params);
    Mat super = Mat::Random(toy.cfg.n_super, toy.cfg.d);
    Mat target = Mat::Random(toy.cfg.n_super, toy.cfg.d);
    Stream st(1, {stream_tag::mask, 0});
    MaskPlan plan = mask_split(toy.cfg.n_super, 0.5, st);
    ad::Var p = t.input(super);
    double base =
        t.val(masked_reconstruction_loss(f, p, t.input(target), plan))(0, 0);
    Mat bumped = target;
    for (int i = 0; i < plan.total; ++i)
      if (!plan.is_masked(i)) bumped.row(i).array() += 100.0;
    double moved =
        t.val(masked_reconstruction_loss(f, p, t.input(bumped), plan))(0, 0);
    require(base == moved, "unmasked target rows leak into the loss");
    return "unmasked perturbation shifts loss by 0";
  }));

  out.push_back(run_one("consistency-floor", [] {
    Toy toy = make_toy(14);
    ad::Tape t;
    Fwd f(t, toy.ms.params);
    Mat probs(3, 2);
    probs << 0.5, 0.5, 0.2, 0.8, 0.9, 0.1;
    ad::Var a = t.input(probs);
    ad::Var b = t.input(probs);
    double same = t.val(clustering_consistency_loss(f, {a, b}))(0, 0);
    require(same == 0.0, "identical views have nonzero disagreement");
    Mat other = probs;
    other(0, 0) = 0.9;
    other(0, 1) = 0.1;
    double diff =
        t.val(clustering_consistency_loss(f, {a, t.input(other)}))(0, 0);
    require(diff > 0.0, "differing views have zero disagreement");
    return "identical views -> 0, differing -> " + fmtd(diff);
  }));

  out.push_back(run_one("determinism", [] {
    auto run = [] {
      Toy toy = make_toy(15);
      TrainConfig tc;
      tc.epochs = 2;
      tc.batch_size = 2;
      tc.base_lr = 1e-3;
      tc.seed = 7;
      OptimState opt;
      std::vector<const Dataset*> data{&toy.data};
      pretrain(toy.ms, toy.reg, data, tc, opt);
      return toy.ms.snapshot_params();
    };
    auto p1 = run();
    auto p2 = run();
    for (const auto& [name, m] : p1) {
      const Mat& o = p2.at(name);
      require(m.rows() == o.rows() && m.cols() == o.cols() &&
                  std::memcmp(m.data(), o.data(),
                              sizeof(double) * std::size_t(m.size())) == 0,
              "repeated run diverged at " + name);
    }
    return "two identical runs, bit-identical parameters";
  }));

  out.push_back(run_one("bias-edges", [] {
    Toy toy = make_toy(16);
    const Atlas& a = toy.reg.get("toy_a");
    auto edges = top_bias_edges(toy.ms, a, 3);
    require(!edges.empty(), "no bias edges returned");
    for (const auto& e : edges) {
      require(e.i < e.j, "edge indices not ordered");
      require(std::isfinite(e.bias), "non-finite bias value");
    }
    return std::to_string(edges.size()) + " edges, all finite";
  }));

  return out;
}

}  // namespace mvct
