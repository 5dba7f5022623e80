#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvct/connectome.hpp"
#include "mvct/io.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using mvct::Atlas;
using mvct::AtlasRegistry;
using mvct::Dataset;
using mvct::Mat;
using mvct::Stream;
using mvct::SynthConfig;

namespace {

bool same_matrix_bits(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(),
                     std::size_t(a.size()) * sizeof(double)) == 0;
}

AtlasRegistry two_atlas_registry() {
  AtlasRegistry reg;
  reg.add(fixture::toy_atlas("left", 6, 11));
  reg.add(fixture::toy_atlas("right", 9, 12));
  return reg;
}

}  // namespace

TEST_CASE("correlation matrices match the direct-formula oracle") {
  Stream s(21, {1});
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + int(s.below(6));
    int T = 8 + int(s.below(20));
    Mat ts(n, T);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < T; ++t) ts(i, t) = s.gaussian();
    Mat r = mvct::pearson_connectivity(ts);
    CHECK((r - r.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(r(i, i) == 1.0);
      for (Eigen::Index j = i + 1; j < n; ++j) {
        std::vector<double> a(std::size_t(T), 0.0), b(std::size_t(T), 0.0);
        for (Eigen::Index t = 0; t < T; ++t) {
          a[std::size_t(t)] = ts(i, t);
          b[std::size_t(t)] = ts(j, t);
        }
        CHECK(std::abs(r(i, j) - oracle::pearson(a, b)) < 1e-9);
        CHECK(r(i, j) >= -1.0);
        CHECK(r(i, j) <= 1.0);
      }
    }
  }
  Mat constant_row(2, 5);
  constant_row.setOnes();
  constant_row.row(0) = Eigen::RowVectorXd::LinSpaced(5, 0, 4);
  CHECK_THROWS_WITH_AS(mvct::pearson_connectivity(constant_row),
                       doctest::Contains("constant time series"), mvct::Error);
  Mat short_ts(2, 1);
  CHECK_THROWS_AS(mvct::pearson_connectivity(short_ts), mvct::Error);
}

TEST_CASE("binary graphs keep exactly the strict over-threshold edges") {
  Stream s(22, {1});
  for (int rep = 0; rep < 20; ++rep) {
    Mat c = fixture::random_conn(7, s);
    for (bool use_abs : {false, true}) {
      Mat z = mvct::threshold_adjacency(c, 0.3, use_abs);
      for (Eigen::Index i = 0; i < 7; ++i)
        for (Eigen::Index j = 0; j < 7; ++j) {
          double v = use_abs ? std::abs(c(i, j)) : c(i, j);
          double want = (i != j && v > 0.3) ? 1.0 : 0.0;
          CHECK(z(i, j) == want);
        }
    }
  }
  Mat b(2, 2);
  b << 1, 0.3, 0.3, 1;
  CHECK(mvct::threshold_adjacency(b, 0.3, false)(0, 1) == 0.0);  // strict
  Mat ns(2, 3);
  CHECK_THROWS_AS(mvct::threshold_adjacency(ns, 0.3, false), mvct::Error);
}

TEST_CASE("connectome validation rejects malformed matrices") {
  Atlas a = fixture::toy_atlas("v", 4, 31);
  Stream s(23, {1});
  Mat good = fixture::random_conn(4, s);
  CHECK_NOTHROW(mvct::validate_connectome(good, a, "good"));

  Mat wrong = fixture::random_conn(5, s);
  CHECK_THROWS_WITH_AS(mvct::validate_connectome(wrong, a, "sz"),
                       doctest::Contains("4 ROIs"), mvct::Error);
  Mat asym = good;
  asym(0, 1) += 0.1;
  CHECK_THROWS_WITH_AS(mvct::validate_connectome(asym, a, "as"),
                       doctest::Contains("asymmetry"), mvct::Error);
  Mat diag = good;
  diag(2, 2) = 0.5;
  CHECK_THROWS_WITH_AS(mvct::validate_connectome(diag, a, "dg"),
                       doctest::Contains("diagonal"), mvct::Error);
  Mat range = good;
  range(1, 2) = 1.5;
  range(2, 1) = 1.5;
  CHECK_THROWS_WITH_AS(mvct::validate_connectome(range, a, "rg"),
                       doctest::Contains("out of [-1, 1]"), mvct::Error);
  Mat nan = good;
  nan(0, 3) = std::nan("");
  nan(3, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(mvct::validate_connectome(nan, a, "nf"),
                       doctest::Contains("non-finite"), mvct::Error);
}

TEST_CASE("datasets round-trip through the directory format bit for bit") {
  AtlasRegistry reg = two_atlas_registry();
  SynthConfig cfg;
  cfg.name = "roundtrip";
  cfg.atlases = {"left", "right"};
  cfg.subjects_per_class = 3;
  cfg.num_classes = 2;
  cfg.communities = 2;
  Dataset ds = mvct::synth_generate(cfg, 77, reg);
  ds.samples[1].label.reset();  // exercise the optional-label path

  auto dir = fixture::fresh_dir("mvct_test_dataset");
  mvct::save_dataset(dir, ds);
  Dataset r = mvct::load_dataset(dir, reg);
  CHECK(r.name == ds.name);
  CHECK(r.num_classes == ds.num_classes);
  REQUIRE(r.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    CHECK(r.samples[i].subject_id == ds.samples[i].subject_id);
    CHECK(r.samples[i].label == ds.samples[i].label);
    REQUIRE(r.samples[i].views.size() == ds.samples[i].views.size());
    for (const auto& [id, m] : ds.samples[i].views)
      CHECK(same_matrix_bits(r.samples[i].views.at(id), m));
  }
  CHECK(r.atlas_ids() == std::vector<std::string>{"left", "right"});

  // manifest-level validation (same connectome files, doctored manifest)
  auto bad = fixture::fresh_dir("mvct_test_dataset_bad");
  std::filesystem::copy(dir, bad,
                        std::filesystem::copy_options::recursive |
                            std::filesystem::copy_options::overwrite_existing);
  nlohmann::json j = mvct::io::load_json(dir / "manifest.json");
  j["subjects"][0]["views"]["ghost"] = "nope.csv";
  mvct::io::save_json(bad / "manifest.json", j);
  CHECK_THROWS_WITH_AS(mvct::load_dataset(bad, reg),
                       doctest::Contains("unknown atlas"), mvct::Error);
  j = mvct::io::load_json(dir / "manifest.json");
  j["subjects"][1]["id"] = j["subjects"][0]["id"];
  mvct::io::save_json(bad / "manifest.json", j);
  CHECK_THROWS_WITH_AS(mvct::load_dataset(bad, reg),
                       doctest::Contains("duplicate subject"), mvct::Error);
  j = mvct::io::load_json(dir / "manifest.json");
  j["subjects"][0]["label"] = 9;
  mvct::io::save_json(bad / "manifest.json", j);
  CHECK_THROWS_WITH_AS(mvct::load_dataset(bad, reg),
                       doctest::Contains("exceeds num_classes"), mvct::Error);
}

TEST_CASE("synthetic cohorts are valid, deterministic, and seed-sensitive") {
  AtlasRegistry reg = two_atlas_registry();
  SynthConfig cfg;
  cfg.atlases = {"left", "right"};
  cfg.subjects_per_class = 4;
  cfg.num_classes = 3;
  cfg.communities = 3;
  Dataset d1 = mvct::synth_generate(cfg, 5, reg);
  Dataset d2 = mvct::synth_generate(cfg, 5, reg);
  Dataset d3 = mvct::synth_generate(cfg, 6, reg);

  CHECK(d1.samples.size() == 12);
  CHECK(d1.num_classes == 3);
  bool any_diff = false;
  for (std::size_t i = 0; i < d1.samples.size(); ++i) {
    CHECK(*d1.samples[i].label == int(i) / 4);
    for (const auto& [id, m] : d1.samples[i].views) {
      mvct::validate_connectome(m, reg.get(id), "synth view");
      CHECK(same_matrix_bits(m, d2.samples[i].views.at(id)));
      if (!same_matrix_bits(m, d3.samples[i].views.at(id))) any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("atlases sharing coordinates see identical synthetic views") {
  Atlas base = fixture::toy_atlas("coordA", 8, 91);
  Atlas twin = mvct::make_atlas("coordB", base.roi_names, base.coords);
  // distinct names for the twin
  std::vector<std::string> names;
  for (int i = 0; i < 8; ++i) names.push_back("twin" + std::to_string(i));
  twin = mvct::make_atlas("coordB", names, base.coords);
  AtlasRegistry reg;
  reg.add(base);
  reg.add(twin);
  SynthConfig cfg;
  cfg.atlases = {"coordA", "coordB"};
  cfg.subjects_per_class = 2;
  cfg.num_classes = 2;
  Dataset ds = mvct::synth_generate(cfg, 3, reg);
  for (const auto& s : ds.samples)
    CHECK(same_matrix_bits(s.views.at("coordA"), s.views.at("coordB")));
}

TEST_CASE("nearest-center community assignment") {
  Mat centers(2, 3);
  centers << 0, 0, 0, 100, 0, 0;
  Mat coords(3, 3);
  coords << 10, 0, 0, 90, 5, 0, 49, 0, 0;
  auto asg = mvct::community_assignment(coords, centers);
  CHECK(asg == std::vector<int>{0, 1, 0});
}

TEST_CASE("synth config files parse every knob") {
  auto dir = fixture::fresh_dir("mvct_test_synthcfg");
  nlohmann::json j = {
      {"name", "demo"},
      {"atlases", {"left", "right"}},
      {"subjects_per_class", 7},
      {"num_classes", 2},
      {"communities", 2},
      {"r_within", 0.5},
      {"r_between", 0.05},
      {"class_gap", 0.3},
      {"subject_jitter", 0.12},
      {"noise", 0.07},
      {"community_centers", {{0, 0, 0}, {100, 100, 100}}},
      {"class_patterns",
       {{{0.0, 1.0}, {1.0, 0.0}}, {{0.0, -1.0}, {-1.0, 0.0}}}}};
  mvct::io::save_json(dir / "cfg.json", j);
  SynthConfig cfg = mvct::parse_synth_config(dir / "cfg.json");
  CHECK(cfg.name == "demo");
  CHECK(cfg.atlases == std::vector<std::string>{"left", "right"});
  CHECK(cfg.subjects_per_class == 7);
  CHECK(cfg.communities == 2);
  CHECK(cfg.r_within == 0.5);
  CHECK(cfg.class_gap == 0.3);
  REQUIRE(cfg.community_centers.has_value());
  CHECK((*cfg.community_centers)(1, 2) == 100.0);
  REQUIRE(cfg.class_patterns.size() == 2);
  CHECK(cfg.class_patterns[1](0, 1) == -1.0);

  mvct::io::save_json(dir / "empty.json", nlohmann::json{{"name", "x"}});
  CHECK_THROWS_WITH_AS(mvct::parse_synth_config(dir / "empty.json"),
                       doctest::Contains("atlases"), mvct::Error);

  // config knobs that conflict with the registry get rejected at generation
  AtlasRegistry reg = two_atlas_registry();
  SynthConfig mism = cfg;
  Mat centers(3, 3);
  centers.setZero();
  mism.community_centers = centers;
  CHECK_THROWS_AS(mvct::synth_generate(mism, 1, reg), mvct::Error);
  SynthConfig wrongpat = cfg;
  wrongpat.class_patterns.pop_back();
  CHECK_THROWS_AS(mvct::synth_generate(wrongpat, 1, reg), mvct::Error);
}
