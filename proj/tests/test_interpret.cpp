#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mvct/interpret.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using mvct::Atlas;
using mvct::BiasEdge;
using mvct::Mat;
using mvct::ModelState;
using mvct::SalientRoi;
using mvct::Stream;
using mvct::Vec;

namespace {

// The k pairs whose distance sits closest to the head's preferred distance,
// ties broken toward the lexicographically first pair — independent of the
// bias-matrix route the library sorts by.
std::vector<std::pair<int, int>> closest_pairs(const Atlas& atlas, double mu,
                                               int k) {
  std::vector<std::pair<int, int>> pairs;
  int n = atlas.roi_count();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::sort(pairs.begin(), pairs.end(),
            [&](const std::pair<int, int>& a, const std::pair<int, int>& b) {
              double da = std::abs(atlas.dist(a.first, a.second) - mu);
              double db = std::abs(atlas.dist(b.first, b.second) - mu);
              if (da != db) return da < db;
              return a < b;
            });
  pairs.resize(std::size_t(std::min(k, int(pairs.size()))));
  return pairs;
}

std::vector<std::pair<int, int>> group_pairs(const std::vector<BiasEdge>& edges,
                                             int layer, int head) {
  std::vector<std::pair<int, int>> out;
  for (const BiasEdge& e : edges)
    if (e.layer == layer && e.head == head) out.emplace_back(e.i, e.j);
  return out;
}

void scramble_bias_params(ModelState& ms, std::uint64_t seed) {
  Stream s(seed, {31});
  for (auto& [name, v] : ms.params.value) {
    if (name.find(".alpha_raw") != std::string::npos ||
        name.find(".mu_raw") != std::string::npos ||
        name.find(".sigma_raw") != std::string::npos)
      v(0, 0) += 0.7 * s.gaussian();
  }
}

}  // namespace

TEST_CASE("selected edges are the pairs nearest each head's preferred "
          "distance") {
  Atlas a = fixture::toy_atlas("ia", 8, 101);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 51);
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    if (rep > 0) scramble_bias_params(ms, 600 + rep);
    int k = 4;
    std::vector<BiasEdge> edges = mvct::top_bias_edges(ms, a, k);
    REQUIRE(edges.size() == std::size_t(ms.cfg.layers * ms.cfg.heads * k));
    for (int l = 0; l < ms.cfg.layers; ++l)
      for (int h = 0; h < ms.cfg.heads; ++h) {
        mvct::BiasParams bp = mvct::bias_params_value(ms, l, h);
        double mu = bp.mu_t * a.dis_max;
        auto want = closest_pairs(a, mu, k);
        auto got = group_pairs(edges, l, h);
        std::sort(want.begin(), want.end());
        auto got_sorted = got;
        std::sort(got_sorted.begin(), got_sorted.end());
        CHECK(got_sorted == want);
      }
  }
}

TEST_CASE("edge reports carry ranks, distances, and descending bias") {
  Atlas a = fixture::toy_atlas("ib", 7, 102);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 52);
  scramble_bias_params(ms, 611);
  std::vector<BiasEdge> edges = mvct::top_bias_edges(ms, a, 5);
  for (int l = 0; l < ms.cfg.layers; ++l)
    for (int h = 0; h < ms.cfg.heads; ++h) {
      Mat b = mvct::distance_bias_value(ms, l, h, a);
      int rank = 0;
      double prev = std::numeric_limits<double>::infinity();
      for (const BiasEdge& e : edges) {
        if (e.layer != l || e.head != h) continue;
        CHECK(e.rank == ++rank);
        CHECK(e.i < e.j);
        CHECK(e.distance == a.dist(e.i, e.j));
        CHECK(e.bias == b(e.i, e.j));
        CHECK(e.bias <= prev);
        prev = e.bias;
      }
      CHECK(rank == 5);
    }
}

TEST_CASE("edge count clamps at the pair total and rejects nonsense") {
  Atlas a = fixture::toy_atlas("ic", 6, 103);  // 15 pairs
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 53);
  std::vector<BiasEdge> all = mvct::top_bias_edges(ms, a, 1000);
  CHECK(all.size() == std::size_t(ms.cfg.layers * ms.cfg.heads * 15));
  for (const BiasEdge& e : all) CHECK(e.rank <= 15);
  CHECK_THROWS_WITH_AS(mvct::top_bias_edges(ms, a, 0),
                       doctest::Contains("edge count"), std::runtime_error);
}

TEST_CASE("freshly initialized heads order their spatial scales") {
  mvct::ModelConfig cfg = fixture::tiny_config();
  cfg.heads = 4;
  Atlas a = fixture::toy_atlas("id", 9, 104);
  ModelState ms = ModelState::init(cfg, {&a}, 54);
  std::vector<BiasEdge> edges = mvct::top_bias_edges(ms, a, 3);
  for (int l = 0; l < cfg.layers; ++l) {
    double prev = -1.0;
    for (int h = 0; h < cfg.heads; ++h) {
      double d = mvct::mean_selected_distance(edges, l, h);
      CHECK(d >= prev - 1e-9);
      prev = d;
    }
  }
  CHECK_THROWS_WITH_AS(mvct::mean_selected_distance(edges, 0, 99),
                       doctest::Contains("no edges"), std::runtime_error);
}

TEST_CASE("uniform attention spreads saliency evenly over the atlas") {
  Atlas a = fixture::toy_atlas("ie", 7, 105);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 55);
  // Kill the content logits and flatten the distance prior: with zero query
  // projections and a vanishing prior amplitude every attention row is 1/N.
  for (auto& [name, v] : ms.params.value) {
    if (name.find(".Wq") != std::string::npos && name.rfind("enc.", 0) == 0)
      v.setZero();
    if (name.find(".bq") != std::string::npos && name.rfind("enc.", 0) == 0)
      v.setZero();
    if (name.find(".alpha_raw") != std::string::npos) v.setConstant(-40.0);
  }
  Stream s(777, {12});
  Mat conn = fixture::random_conn(7, s);
  Vec scores = mvct::saliency_scores(ms, a, conn);
  REQUIRE(scores.size() == 7);
  for (Eigen::Index i = 0; i < 7; ++i)
    CHECK(std::abs(scores(i) - 1.0 / 7.0) < 1e-12);

  std::vector<SalientRoi> top = mvct::salient_rois(ms, a, conn, 3);
  REQUIRE(top.size() == 3);
  for (int r = 0; r < 3; ++r) {
    CHECK(top[std::size_t(r)].rank == r + 1);
    CHECK(top[std::size_t(r)].roi == r);  // exact ties resolve to low indices
  }
}

TEST_CASE("saliency is the normalized received attention of the last layer") {
  Atlas a = fixture::toy_atlas("if", 8, 106);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 56);
  Stream s(778, {13});
  Mat conn = fixture::random_conn(8, s);

  Vec scores = mvct::saliency_scores(ms, a, conn);
  CHECK(std::abs(scores.sum() - 1.0) < 1e-9);
  CHECK(scores.minCoeff() >= 0.0);

  mvct::EncodeTrace trace;
  mvct::encode_value(ms, a, conn, &trace);
  REQUIRE(trace.attn.size() == std::size_t(ms.cfg.layers));
  Vec want = Vec::Zero(8);
  for (const Mat& head_map : trace.attn.back())
    want += head_map.colwise().mean().transpose();
  want /= double(trace.attn.back().size());
  want /= want.sum();
  CHECK((scores - want).cwiseAbs().maxCoeff() < 1e-12);

  ModelState all = ms;
  all.cfg.saliency_layer = "mean_all";
  Vec scores_all = mvct::saliency_scores(all, a, conn);
  Vec want_all = Vec::Zero(8);
  int used = 0;
  for (const auto& layer_maps : trace.attn)
    for (const Mat& head_map : layer_maps) {
      want_all += head_map.colwise().mean().transpose();
      ++used;
    }
  want_all /= double(used);
  want_all /= want_all.sum();
  CHECK((scores_all - want_all).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((scores_all - scores).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("salient ROI lists rank by score and clamp at the atlas size") {
  Atlas a = fixture::toy_atlas("ig", 6, 107);
  ModelState ms = ModelState::init(fixture::tiny_config(), {&a}, 57);
  Stream s(779, {14});
  Mat conn = fixture::random_conn(6, s);

  Vec scores = mvct::saliency_scores(ms, a, conn);
  std::vector<SalientRoi> top = mvct::salient_rois(ms, a, conn, 100);
  REQUIRE(top.size() == 6);  // clamped to the ROI count
  for (std::size_t r = 0; r < top.size(); ++r) {
    CHECK(top[r].rank == int(r) + 1);
    CHECK(top[r].score == scores(top[r].roi));
    if (r > 0) CHECK(top[r].score <= top[r - 1].score);
  }
  int argmax = 0;
  for (int i = 1; i < 6; ++i)
    if (scores(i) > scores(argmax)) argmax = i;
  CHECK(top[0].roi == argmax);

  CHECK_THROWS_WITH_AS(mvct::salient_rois(ms, a, conn, 0),
                       doctest::Contains("ROI count"), std::runtime_error);
}
