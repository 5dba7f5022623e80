#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "mvct/alignment.hpp"
#include "mvct/objectives.hpp"
#include "mvct/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using mvct::Atlas;
using mvct::AtlasRegistry;
using mvct::DropCtx;
using mvct::Fwd;
using mvct::MaskPlan;
using mvct::Mat;
using mvct::ModelState;
using mvct::MultiViewSample;
using mvct::PretrainCfg;
using mvct::Stream;
using mvct::Vec;
namespace ad = mvct::ad;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed,
               double scale = 1.0) {
  Mat m(r, c);
  Stream s(seed, {17});
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * s.gaussian();
  return m;
}

Mat random_probs(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  return oracle::softmax_rows(random_mat(r, c, seed));
}

// Independent recompute of the degree-normalized adjacency with self loops.
Mat norm_adj_oracle(const Mat& adj) {
  Eigen::Index n = adj.rows();
  Mat a = adj;
  for (Eigen::Index i = 0; i < n; ++i) a(i, i) += 1.0;
  std::vector<double> deg(std::size_t(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) deg[std::size_t(i)] += a(i, j);
  Mat out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out(i, j) = a(i, j) / std::sqrt(deg[std::size_t(i)] * deg[std::size_t(j)]);
  return out;
}

}  // namespace

TEST_CASE("adjacency normalization matches the hand-worked path graph") {
  Mat adj(3, 3);
  adj << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  // With self loops the degrees are 2, 3, 2.
  Mat got = mvct::normalized_adjacency(adj);
  Mat want(3, 3);
  double s6 = 1.0 / std::sqrt(6.0);
  want << 0.5, s6, 0.0, s6, 1.0 / 3.0, s6, 0.0, s6, 0.5;
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adjacency normalization agrees with a direct recompute") {
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    Stream s(300 + rep, {1});
    int n = 4 + int(rep % 5);
    Mat conn = fixture::random_conn(n, s);
    Mat adj = mvct::threshold_adjacency(conn, 0.3, false);
    Mat got = mvct::normalized_adjacency(adj);
    CHECK((got - norm_adj_oracle(adj)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((got - got.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("adjacency normalization rejects bad inputs") {
  Mat neg(2, 2);
  neg << 0, -3, -3, 0;
  CHECK_THROWS_WITH_AS(mvct::normalized_adjacency(neg),
                       doctest::Contains("non-positive degree"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(mvct::normalized_adjacency(Mat::Zero(2, 3)),
                       doctest::Contains("square"), std::runtime_error);
}

TEST_CASE("graph convolution stack matches a plain Eigen recompute") {
  Atlas a = fixture::toy_atlas("ga", 7, 41);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 5);
  Stream s(77, {2});
  Mat conn = fixture::random_conn(7, s);
  Mat adj = mvct::normalized_adjacency(
      mvct::threshold_adjacency(conn, ms.cfg.threshold, false));
  Mat h0 = random_mat(7, ms.cfg.d, 123);

  ad::Tape t;
  Fwd f(t, ms.params);
  ad::Var out =
      mvct::gcn_stack(f, "align.feat", t.input(h0), adj, ms.cfg.gcn_layers);

  Mat want = h0;
  for (int l = 0; l < ms.cfg.gcn_layers; ++l) {
    want = (adj * want * ms.params.value["align.feat.W" + std::to_string(l)])
               .cwiseMax(0.0);
  }
  CHECK((t.val(out) - want).cwiseAbs().maxCoeff() < 1e-12);

  ad::Tape t2;
  Fwd f2(t2, ms.params);
  CHECK_THROWS_WITH_AS(
      mvct::gcn_stack(f2, "align.feat", t2.input(h0), adj, 0),
      doctest::Contains("at least one layer"), std::runtime_error);
}

TEST_CASE("alignment emits row-stochastic assignments and pooled supernodes") {
  Atlas a = fixture::toy_atlas("al", 9, 42);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 6);
  Stream s(78, {3});
  Mat conn = fixture::random_conn(9, s);

  ad::Tape t;
  Fwd f(t, ms.params);
  DropCtx drop = DropCtx::off();
  ad::Var h = mvct::encode(f, ms, a, conn, drop);
  mvct::AlignOut ao = mvct::align(f, ms, h, conn);

  const Mat& assign = t.val(ao.assign);
  const Mat& feat = t.val(ao.feat);
  const Mat& super = t.val(ao.super);
  REQUIRE(assign.rows() == 9);
  REQUIRE(assign.cols() == ms.cfg.n_super);
  REQUIRE(feat.rows() == 9);
  REQUIRE(feat.cols() == ms.cfg.d);
  REQUIRE(super.rows() == ms.cfg.n_super);
  REQUIRE(super.cols() == ms.cfg.d);
  for (Eigen::Index i = 0; i < assign.rows(); ++i) {
    CHECK(std::abs(assign.row(i).sum() - 1.0) < 1e-9);
    CHECK(assign.row(i).minCoeff() >= 0.0);
  }
  CHECK((super - assign.transpose() * feat).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("assignment entropy matches the oracle and stays in range") {
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    Mat p = random_probs(6, 5, 900 + rep);
    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    double got = t.val(mvct::assignment_entropy(f, t.input(p)))(0, 0);
    CHECK(std::abs(got - oracle::mean_row_entropy(p)) < 1e-9);
    CHECK(got >= 0.0);
    CHECK(got <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("assignment entropy hits both ends of its range") {
  ad::Tape t;
  ad::ParamStore ps;
  Fwd f(t, ps);
  Mat uniform = Mat::Constant(4, 5, 0.2);
  double hu = t.val(mvct::assignment_entropy(f, t.input(uniform)))(0, 0);
  CHECK(std::abs(hu - std::log(5.0)) < 1e-12);
  // Exact one-hot rows: the 0 * log(clamp) terms vanish exactly.
  Mat onehot = Mat::Zero(3, 5);
  onehot(0, 2) = 1.0;
  onehot(1, 0) = 1.0;
  onehot(2, 4) = 1.0;
  double h1 = t.val(mvct::assignment_entropy(f, t.input(onehot)))(0, 0);
  CHECK(h1 == 0.0);
}

TEST_CASE("mask selection is deterministic, sorted, and sized by rounding") {
  auto draw = [](int n, double ratio, std::uint64_t seed) {
    Stream s(seed, {mvct::stream_tag::mask, 1});
    return mvct::mask_split(n, ratio, s);
  };
  MaskPlan p1 = draw(10, 0.5, 4);
  MaskPlan p2 = draw(10, 0.5, 4);
  CHECK(p1.masked == p2.masked);
  CHECK(p1.total == 10);
  CHECK(p1.masked.size() == 5);

  bool any_diff = false;
  for (std::uint64_t seed = 0; seed < 20 && !any_diff; ++seed)
    any_diff = draw(10, 0.5, 100 + seed).masked != p1.masked;
  CHECK(any_diff);

  for (int n : {3, 5, 8, 13})
    for (double ratio : {0.25, 0.5, 0.8, 1.0}) {
      MaskPlan p = draw(n, ratio, 7);
      CHECK(int(p.masked.size()) ==
            std::min(n, int(std::llround(ratio * n))));
      std::set<int> uniq(p.masked.begin(), p.masked.end());
      CHECK(uniq.size() == p.masked.size());
      CHECK(std::is_sorted(p.masked.begin(), p.masked.end()));
      CHECK(p.masked.front() >= 0);
      CHECK(p.masked.back() < n);
      for (int i = 0; i < n; ++i)
        CHECK(p.is_masked(i) == (uniq.count(i) > 0));
    }

  MaskPlan all = draw(6, 1.0, 9);
  CHECK(all.masked == std::vector<int>{0, 1, 2, 3, 4, 5});

  Stream s(1, {1});
  CHECK_THROWS_WITH_AS(mvct::mask_split(5, 0.04, s),
                       doctest::Contains("selects zero"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mvct::mask_split(0, 0.5, s), doctest::Contains("empty"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(mvct::mask_split(5, 0.0, s),
                       doctest::Contains("mask ratio"), std::runtime_error);
  CHECK_THROWS_WITH_AS(mvct::mask_split(5, 1.5, s),
                       doctest::Contains("mask ratio"), std::runtime_error);
}

TEST_CASE("row mask matrices fill the chosen rows") {
  Mat m = mvct::row_mask_matrix(4, 3, {1, 3}, 0.0, 1.0);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      CHECK(m(i, j) == ((i == 1 || i == 3) ? 0.0 : 1.0));
  CHECK_THROWS_WITH_AS(mvct::row_mask_matrix(4, 3, {4}, 0.0, 1.0),
                       doctest::Contains("out of range"), std::runtime_error);
}

TEST_CASE("masked reconstruction matches the brute-force penalty") {
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    int n = 4 + int(rep % 4);
    int c = 3 + int(rep % 3);
    Mat pred = random_mat(n, c, 2000 + rep, 1.5);
    Mat tgt = random_mat(n, c, 3000 + rep, 1.5);
    Stream s(rep, {mvct::stream_tag::mask});
    MaskPlan plan = mvct::mask_split(n, 0.5, s);

    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    double got = t.val(mvct::masked_reconstruction_loss(
        f, t.input(pred), t.input(tgt), plan))(0, 0);
    double want = oracle::masked_smooth_l1(pred, tgt, plan.masked);
    CHECK(std::abs(got - want) < 1e-12);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("masked reconstruction: pinned scalar values") {
  // One masked row, one column: the penalty reduces to the scalar huber curve.
  auto scalar_loss = [](double diff) {
    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    Mat pred = Mat::Constant(2, 1, diff);
    Mat tgt = Mat::Zero(2, 1);
    tgt(1, 0) = diff;  // unmasked row matches exactly
    MaskPlan plan;
    plan.total = 2;
    plan.masked = {0};
    return t.val(
        mvct::masked_reconstruction_loss(f, t.input(pred), t.input(tgt),
                                         plan))(0, 0);
  };
  CHECK(scalar_loss(2.0) == 1.5);
  CHECK(scalar_loss(0.5) == 0.125);
  CHECK(scalar_loss(0.0) == 0.0);
  CHECK(scalar_loss(-2.0) == 1.5);
}

TEST_CASE("masked reconstruction ignores unmasked rows exactly") {
  Mat pred = random_mat(6, 4, 71);
  Mat tgt = random_mat(6, 4, 72);
  MaskPlan plan;
  plan.total = 6;
  plan.masked = {1, 4};
  auto eval = [&](const Mat& target) {
    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    return t.val(mvct::masked_reconstruction_loss(f, t.input(pred),
                                                  t.input(target), plan))(0, 0);
  };
  double base = eval(tgt);
  Mat bumped = tgt;
  for (int r : {0, 2, 3, 5}) bumped.row(r).array() += 10.0;
  CHECK(eval(bumped) == base);  // bitwise: unmasked rows never enter

  Mat masked_bump = tgt;
  masked_bump(4, 2) += 0.25;
  CHECK(eval(masked_bump) != base);
}

TEST_CASE("masked reconstruction validates its inputs") {
  ad::Tape t;
  ad::ParamStore ps;
  Fwd f(t, ps);
  MaskPlan plan;
  plan.total = 3;
  plan.masked = {0};
  CHECK_THROWS_WITH_AS(
      mvct::masked_reconstruction_loss(f, t.input(Mat::Zero(3, 2)),
                                       t.input(Mat::Zero(3, 3)), plan),
      doctest::Contains("shape mismatch"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      mvct::masked_reconstruction_loss(f, t.input(Mat::Zero(4, 2)),
                                       t.input(Mat::Zero(4, 2)), plan),
      doctest::Contains("covers 3 rows"), std::runtime_error);
  MaskPlan empty;
  empty.total = 3;
  CHECK_THROWS_WITH_AS(
      mvct::masked_reconstruction_loss(f, t.input(Mat::Zero(3, 2)),
                                       t.input(Mat::Zero(3, 2)), empty),
      doctest::Contains("selects no rows"), std::runtime_error);
}

TEST_CASE("masked reconstruction gradients pass finite differences") {
  ad::ParamStore ps;
  ps.create("p", 5, 3) = random_mat(5, 3, 81, 1.2);
  Mat tgt = random_mat(5, 3, 82, 1.2);
  MaskPlan plan;
  plan.total = 5;
  plan.masked = {0, 2, 3};
  auto fn = [&](Fwd& f) {
    return std::vector<ad::Var>{mvct::masked_reconstruction_loss(
        f, f.p("p"), f.t.input(tgt), plan)};
  };
  auto reps = mvct::grad_check(ps, fn, {"p"});
  REQUIRE(reps.size() == 1);
  CHECK(reps[0].max_rel < 1e-4);
}

TEST_CASE("decoders are per-atlas, deterministic, and shape-preserving") {
  Atlas a = fixture::toy_atlas("da", 6, 43);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 7);
  Mat h0 = random_mat(ms.cfg.n_super, ms.cfg.d, 91);

  auto run = [&]() {
    ad::Tape t;
    Fwd f(t, ms.params);
    DropCtx drop = DropCtx::off();
    return Mat(t.val(mvct::decoder_forward(f, ms, "da", t.input(h0), drop)));
  };
  Mat o1 = run();
  Mat o2 = run();
  REQUIRE(o1.rows() == ms.cfg.n_super);
  REQUIRE(o1.cols() == ms.cfg.d);
  CHECK(o1 == o2);

  ad::Tape t;
  Fwd f(t, ms.params);
  DropCtx drop = DropCtx::off();
  CHECK_THROWS_WITH_AS(
      mvct::decoder_forward(f, ms, "ghost", t.input(h0), drop),
      doctest::Contains("has no decoder"), std::runtime_error);
}

TEST_CASE("prototype distributions are row-stochastic and match a recompute") {
  Atlas a = fixture::toy_atlas("pa", 6, 44);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 8);
  Mat super = random_mat(ms.cfg.n_super, ms.cfg.d, 95);

  ad::Tape t;
  Fwd f(t, ms.params);
  ad::Var probs = mvct::prototype_assign(f, ms, t.input(super));
  const Mat& p = t.val(probs);
  REQUIRE(p.rows() == ms.cfg.n_super);
  REQUIRE(p.cols() == ms.cfg.prototypes);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);

  REQUIRE(ms.cfg.proto_layers == 1);
  Mat logits = super * ms.params.value["proto.W0"];
  logits.rowwise() += ms.params.value["proto.b0"].row(0);
  CHECK((p - oracle::softmax_rows(logits)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-view consistency matches the oracle and is nonnegative") {
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    int m = 2 + int(rep % 3);
    std::vector<Mat> views;
    for (int v = 0; v < m; ++v)
      views.push_back(random_probs(5, 3, 5000 + 10 * rep + std::uint64_t(v)));

    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    std::vector<ad::Var> vars;
    for (const Mat& v : views) vars.push_back(t.input(v));
    double got = t.val(mvct::clustering_consistency_loss(f, vars))(0, 0);
    CHECK(std::abs(got - oracle::consistency(views)) < 1e-9);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("cross-view consistency vanishes on identical views") {
  Mat p = random_probs(6, 4, 7100);
  ad::Tape t;
  ad::ParamStore ps;
  Fwd f(t, ps);
  std::vector<ad::Var> vars{t.input(p), t.input(p), t.input(p)};
  CHECK(t.val(mvct::clustering_consistency_loss(f, vars))(0, 0) == 0.0);

  std::vector<ad::Var> one{t.input(p)};
  CHECK_THROWS_WITH_AS(mvct::clustering_consistency_loss(f, one),
                       doctest::Contains("at least two views"),
                       std::runtime_error);
}

TEST_CASE("cross-view consistency is invariant to view order") {
  Mat p1 = random_probs(5, 3, 7200);
  Mat p2 = random_probs(5, 3, 7201);
  Mat p3 = random_probs(5, 3, 7202);
  auto eval = [](std::vector<Mat> views) {
    ad::Tape t;
    ad::ParamStore ps;
    Fwd f(t, ps);
    std::vector<ad::Var> vars;
    for (const Mat& v : views) vars.push_back(t.input(v));
    return t.val(mvct::clustering_consistency_loss(f, vars))(0, 0);
  };
  double a = eval({p1, p2, p3});
  double b = eval({p3, p1, p2});
  CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("subject pretraining loss composes its published parts") {
  Atlas a = fixture::toy_atlas("sa", 6, 45);
  Atlas b = fixture::toy_atlas("sb", 8, 46);
  AtlasRegistry reg;
  reg.add(a);
  reg.add(b);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a, &b}, 10);

  Stream sca(61, {4}), scb(62, {5});
  MultiViewSample sample;
  sample.subject_id = "sub000";
  sample.views["sa"] = fixture::random_conn(6, sca);
  sample.views["sb"] = fixture::random_conn(8, scb);

  PretrainCfg pcfg;
  auto run = [&](const PretrainCfg& pc, int64_t epoch) {
    ad::Tape t;
    Fwd f(t, ms.params);
    DropCtx drop = DropCtx::off();
    auto out =
        mvct::pretrain_subject_loss(f, ms, reg, sample, pc, drop, 777, epoch);
    return std::pair<double, mvct::SubjectLossOut>(t.val(out.total)(0, 0),
                                                   out);
  };

  auto [total, out] = run(pcfg, 0);
  CHECK(out.views == 2);
  CHECK(out.cc_var.ok());
  CHECK(std::abs(total - (out.rec + out.cc + pcfg.entropy_sign * out.ent)) <
        1e-12);
  CHECK(out.rec >= 0.0);
  CHECK(out.cc >= 0.0);
  CHECK(out.ent >= 0.0);

  // Deterministic in (run seed, epoch); a new epoch redraws the masks.
  auto [total2, out2] = run(pcfg, 0);
  CHECK(total == total2);
  auto [total3, out3] = run(pcfg, 1);
  CHECK(out3.rec != out.rec);
  CHECK(out3.cc == out.cc);  // masks only touch the reconstruction term
  CHECK(out3.ent == out.ent);

  // Flipping the entropy sign moves the total by exactly twice the entropy.
  PretrainCfg pos = pcfg;
  pos.entropy_sign = 1.0;
  auto [total_pos, out_pos] = run(pos, 0);
  CHECK(std::abs((total_pos - total) - 2.0 * out.ent) < 1e-12);
}

TEST_CASE("frozen targets reproduce the detached-target loss at the same "
          "point") {
  Atlas a = fixture::toy_atlas("fa", 6, 47);
  Atlas b = fixture::toy_atlas("fb", 7, 48);
  AtlasRegistry reg;
  reg.add(a);
  reg.add(b);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a, &b}, 11);

  Stream sca(63, {6}), scb(64, {7});
  MultiViewSample sample;
  sample.subject_id = "sub001";
  sample.views["fa"] = fixture::random_conn(6, sca);
  sample.views["fb"] = fixture::random_conn(7, scb);

  std::map<std::string, Mat> frozen = mvct::supernode_targets(ms, reg, sample);
  PretrainCfg pcfg;

  ad::Tape t1;
  Fwd f1(t1, ms.params);
  DropCtx d1 = DropCtx::off();
  auto live =
      mvct::pretrain_subject_loss(f1, ms, reg, sample, pcfg, d1, 5, 2);
  ad::Tape t2;
  Fwd f2(t2, ms.params);
  DropCtx d2 = DropCtx::off();
  auto froz = mvct::pretrain_subject_loss(f2, ms, reg, sample, pcfg, d2, 5, 2,
                                          &frozen);
  CHECK(std::abs(t1.val(live.total)(0, 0) - t2.val(froz.total)(0, 0)) < 1e-12);

  std::map<std::string, Mat> missing;
  missing["fa"] = frozen["fa"];
  ad::Tape t3;
  Fwd f3(t3, ms.params);
  DropCtx d3 = DropCtx::off();
  CHECK_THROWS_WITH_AS(
      mvct::pretrain_subject_loss(f3, ms, reg, sample, pcfg, d3, 5, 2,
                                  &missing),
      doctest::Contains("no frozen target"), std::runtime_error);
}

TEST_CASE("single-view subjects skip the cross-view term") {
  Atlas a = fixture::toy_atlas("ova", 6, 49);
  AtlasRegistry reg;
  reg.add(a);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 12);
  Stream sc(65, {8});
  MultiViewSample sample;
  sample.subject_id = "sub002";
  sample.views["ova"] = fixture::random_conn(6, sc);

  ad::Tape t;
  Fwd f(t, ms.params);
  DropCtx drop = DropCtx::off();
  PretrainCfg pcfg;
  auto out = mvct::pretrain_subject_loss(f, ms, reg, sample, pcfg, drop, 1, 0);
  CHECK(out.views == 1);
  CHECK(out.cc == 0.0);
  CHECK(!out.cc_var.ok());
  CHECK(std::abs(t.val(out.total)(0, 0) -
                 (out.rec + pcfg.entropy_sign * out.ent)) < 1e-12);

  MultiViewSample empty;
  empty.subject_id = "sub003";
  ad::Tape t2;
  Fwd f2(t2, ms.params);
  CHECK_THROWS_WITH_AS(
      mvct::pretrain_subject_loss(f2, ms, reg, empty, pcfg, drop, 1, 0),
      doctest::Contains("no views"), std::runtime_error);
}

TEST_CASE("precomputed supernode targets match the live alignment output") {
  Atlas a = fixture::toy_atlas("ta", 6, 50);
  Atlas b = fixture::toy_atlas("tb", 9, 51);
  AtlasRegistry reg;
  reg.add(a);
  reg.add(b);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a, &b}, 13);

  Stream sca(66, {9}), scb(67, {10});
  MultiViewSample sample;
  sample.subject_id = "sub004";
  sample.views["ta"] = fixture::random_conn(6, sca);
  sample.views["tb"] = fixture::random_conn(9, scb);

  std::map<std::string, Mat> targets = mvct::supernode_targets(ms, reg, sample);
  REQUIRE(targets.size() == 2);
  for (const auto& [atlas_id, conn] : sample.views) {
    ad::Tape t;
    Fwd f(t, ms.params);
    DropCtx drop = DropCtx::off();
    ad::Var h = mvct::encode(f, ms, reg.get(atlas_id), conn, drop);
    Mat super = t.val(mvct::align(f, ms, h, conn).super);
    CHECK((targets.at(atlas_id) - super).cwiseAbs().maxCoeff() == 0.0);
  }
}
