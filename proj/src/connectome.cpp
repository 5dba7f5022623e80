#include "mvct/connectome.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "mvct/io.hpp"

namespace mvct {

std::vector<std::string> Dataset::atlas_ids() const {
  std::set<std::string> ids;
  for (const auto& s : samples)
    for (const auto& [a, m] : s.views) ids.insert(a);
  return std::vector<std::string>(ids.begin(), ids.end());
}

Mat pearson_connectivity(const Mat& ts) {
  Eigen::Index n = ts.rows(), T = ts.cols();
  require(T >= 2, "time series needs >= 2 samples per ROI");
  Mat centered(n, T);
  Vec ss(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = ts.row(i).mean();
    centered.row(i) = (ts.row(i).array() - mu).matrix();
    ss(i) = centered.row(i).squaredNorm();
    require(ss(i) > 0, "constant time series at ROI index " + std::to_string(i) +
                           "; correlation undefined");
  }
  Mat r = Mat::Zero(n, n);
  double worst_clamp = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = centered.row(i).dot(centered.row(j)) / std::sqrt(ss(i) * ss(j));
      if (v > 1.0) {
        worst_clamp = std::max(worst_clamp, v - 1.0);
        v = 1.0;
      } else if (v < -1.0) {
        worst_clamp = std::max(worst_clamp, -1.0 - v);
        v = -1.0;
      }
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  if (worst_clamp > 1e-6)
    std::cerr << "warning: correlation clamped by " << worst_clamp
              << " (beyond roundoff)\n";
  return r;
}

Mat threshold_adjacency(const Mat& conn, double tau, bool use_abs) {
  require(conn.rows() == conn.cols(), "connectivity must be square");
  Eigen::Index n = conn.rows();
  Mat z = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      double v = use_abs ? std::abs(conn(i, j)) : conn(i, j);
      if (v > tau) z(i, j) = 1.0;
    }
  return z;
}

void validate_connectome(const Mat& m, const Atlas& atlas,
                         const std::string& what) {
  require(m.rows() == m.cols(), what + ": matrix is not square (" +
                                    std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ")");
  require(int(m.rows()) == atlas.roi_count(),
          what + ": matrix is " + std::to_string(m.rows()) + "x" +
              std::to_string(m.cols()) + " but atlas '" + atlas.id + "' has " +
              std::to_string(atlas.roi_count()) + " ROIs");
  require(m.allFinite(), what + ": non-finite entry");
  const double tol = 1e-6;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    require(std::abs(m(i, i) - 1.0) <= tol,
            what + ": diagonal entry at " + std::to_string(i) + " is " +
                std::to_string(m(i, i)) + ", expected 1");
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      require(std::abs(m(i, j) - m(j, i)) <= tol,
              what + ": asymmetry at (" + std::to_string(i) + "," +
                  std::to_string(j) + ")");
      require(m(i, j) >= -1.0 - tol && m(i, j) <= 1.0 + tol,
              what + ": entry out of [-1, 1] at (" + std::to_string(i) + "," +
                  std::to_string(j) + ")");
    }
  }
}

// ---- dataset I/O ------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& dir,
                     const AtlasRegistry& registry) {
  auto manifest_path = dir / "manifest.json";
  nlohmann::json j = io::load_json(manifest_path);
  std::string ctx = "manifest " + manifest_path.string();
  require(j.is_object() && j.contains("subjects") && j["subjects"].is_array(),
          ctx + ": missing 'subjects' array");
  Dataset ds;
  ds.name = j.value("name", dir.filename().string());
  ds.num_classes = j.value("num_classes", 0);
  std::set<std::string> seen_ids;
  for (const auto& s : j["subjects"]) {
    require(s.is_object() && s.contains("id") && s["id"].is_string(),
            ctx + ": subject missing 'id'");
    MultiViewSample smp;
    smp.subject_id = s["id"].get<std::string>();
    require(seen_ids.insert(smp.subject_id).second,
            ctx + ": duplicate subject id '" + smp.subject_id + "'");
    if (s.contains("label") && !s["label"].is_null()) {
      require(s["label"].is_number_integer(),
              ctx + ": subject '" + smp.subject_id + "' label must be integer");
      int lab = s["label"].get<int>();
      require(lab >= 0, ctx + ": negative label for '" + smp.subject_id + "'");
      if (ds.num_classes > 0)
        require(lab < ds.num_classes,
                ctx + ": label " + std::to_string(lab) + " for subject '" +
                    smp.subject_id + "' exceeds num_classes " +
                    std::to_string(ds.num_classes));
      smp.label = lab;
    }
    require(s.contains("views") && s["views"].is_object() &&
                !s["views"].empty(),
            ctx + ": subject '" + smp.subject_id + "' has no views");
    for (const auto& [atlas_id, rel] : s["views"].items()) {
      require(registry.has(atlas_id),
              ctx + ": subject '" + smp.subject_id +
                  "' references unknown atlas '" + atlas_id + "'");
      require(rel.is_string(), ctx + ": view path must be a string");
      auto mpath = dir / rel.get<std::string>();
      Mat m = io::read_matrix_csv(mpath);
      validate_connectome(m, registry.get(atlas_id),
                          "subject '" + smp.subject_id + "' view '" + atlas_id +
                              "' (" + mpath.string() + ")");
      smp.views.emplace(atlas_id, std::move(m));
    }
    ds.samples.push_back(std::move(smp));
  }
  require(!ds.samples.empty(), ctx + ": no subjects");
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["name"] = ds.name;
  if (ds.num_classes > 0) j["num_classes"] = ds.num_classes;
  j["subjects"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    nlohmann::json js;
    js["id"] = s.subject_id;
    if (s.label) js["label"] = *s.label;
    js["views"] = nlohmann::json::object();
    for (const auto& [atlas_id, m] : s.views) {
      std::string rel = s.subject_id + "_" + atlas_id + ".csv";
      js["views"][atlas_id] = rel;
      io::write_matrix_csv(dir / rel, m);
    }
    j["subjects"].push_back(std::move(js));
  }
  io::save_json(dir / "manifest.json", j);
}

// ---- synthetic generator ----------------------------------------------------

std::vector<int> community_assignment(const Mat& coords, const Mat& centers) {
  require(centers.cols() == 3, "centers must be K x 3");
  std::vector<int> out(std::size_t(coords.rows()));
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    int best = 0;
    double best_d = (coords.row(i) - centers.row(0)).squaredNorm();
    for (Eigen::Index k = 1; k < centers.rows(); ++k) {
      double d = (coords.row(i) - centers.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = int(k);
      }
    }
    out[std::size_t(i)] = best;
  }
  return out;
}

SynthConfig parse_synth_config(const std::filesystem::path& json_path) {
  nlohmann::json j = io::load_json(json_path);
  std::string ctx = "synth config " + json_path.string();
  SynthConfig cfg;
  cfg.name = j.value("name", cfg.name);
  require(j.contains("atlases") && j["atlases"].is_array() &&
              !j["atlases"].empty(),
          ctx + ": 'atlases' must be a non-empty array of atlas ids");
  for (const auto& a : j["atlases"]) cfg.atlases.push_back(a.get<std::string>());
  cfg.subjects_per_class = j.value("subjects_per_class", cfg.subjects_per_class);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.communities = j.value("communities", cfg.communities);
  cfg.r_within = j.value("r_within", cfg.r_within);
  cfg.r_between = j.value("r_between", cfg.r_between);
  cfg.class_gap = j.value("class_gap", cfg.class_gap);
  cfg.subject_jitter = j.value("subject_jitter", cfg.subject_jitter);
  cfg.noise = j.value("noise", cfg.noise);
  if (j.contains("community_centers")) {
    const auto& cc = j["community_centers"];
    require(cc.is_array() && !cc.empty(), ctx + ": bad community_centers");
    Mat centers(Eigen::Index(cc.size()), 3);
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
      const auto& row = cc[std::size_t(i)];
      require(row.is_array() && row.size() == 3,
              ctx + ": community_centers rows must be [x, y, z]");
      for (int k = 0; k < 3; ++k)
        centers(i, k) = row[std::size_t(k)].get<double>();
    }
    cfg.community_centers = std::move(centers);
  }
  if (j.contains("class_patterns")) {
    for (const auto& pat : j["class_patterns"]) {
      require(pat.is_array(), ctx + ": class_patterns must be matrices");
      Mat p(Eigen::Index(pat.size()), Eigen::Index(pat.size()));
      for (Eigen::Index a = 0; a < p.rows(); ++a) {
        const auto& row = pat[std::size_t(a)];
        require(row.is_array() && Eigen::Index(row.size()) == p.cols(),
                ctx + ": class_patterns must be square");
        for (Eigen::Index b = 0; b < p.cols(); ++b)
          p(a, b) = row[std::size_t(b)].get<double>();
      }
      cfg.class_patterns.push_back(std::move(p));
    }
  }
  return cfg;
}

namespace {

std::uint64_t coords_hash(const Mat& coords) {
  return hash_bytes(coords.data(), std::size_t(coords.size()) * sizeof(double));
}

Mat symmetric_gaussian(Eigen::Index k, Stream& rng) {
  Mat m = Mat::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a; b < k; ++b) {
      double v = rng.gaussian();
      m(a, b) = v;
      m(b, a) = v;
    }
  return m;
}

}  // namespace

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed,
                       const AtlasRegistry& registry) {
  require(cfg.num_classes >= 1, "num_classes must be >= 1");
  require(cfg.subjects_per_class >= 1, "subjects_per_class must be >= 1");
  require(cfg.communities >= 1, "communities must be >= 1");
  require(!cfg.atlases.empty(), "at least one atlas id required");
  std::vector<const Atlas*> atlases;
  for (const auto& id : cfg.atlases) atlases.push_back(&registry.get(id));

  // Community centers: explicit, or drawn from the bounding box of all ROIs.
  Mat centers;
  if (cfg.community_centers) {
    centers = *cfg.community_centers;
    require(int(centers.rows()) == cfg.communities,
            "community_centers rows must equal `communities`");
  } else {
    Eigen::RowVector3d lo = atlases[0]->coords.colwise().minCoeff();
    Eigen::RowVector3d hi = atlases[0]->coords.colwise().maxCoeff();
    for (const Atlas* a : atlases) {
      lo = lo.cwiseMin(Eigen::RowVector3d(a->coords.colwise().minCoeff()));
      hi = hi.cwiseMax(Eigen::RowVector3d(a->coords.colwise().maxCoeff()));
    }
    Stream crng(seed, {stream_tag::synth_centers});
    centers.resize(cfg.communities, 3);
    for (Eigen::Index k = 0; k < centers.rows(); ++k)
      for (int c = 0; c < 3; ++c)
        centers(k, c) = lo(c) + (hi(c) - lo(c)) * crng.uniform();
  }

  // Per-class community-pair patterns (zero diagonal, symmetric, unit scale).
  std::vector<Mat> patterns;
  if (!cfg.class_patterns.empty()) {
    require(int(cfg.class_patterns.size()) == cfg.num_classes,
            "class_patterns size must equal num_classes");
    for (const auto& p : cfg.class_patterns) {
      require(int(p.rows()) == cfg.communities,
              "class_patterns must be communities x communities");
      patterns.push_back(p);
    }
  } else {
    for (int c = 0; c < cfg.num_classes; ++c) {
      Stream prng(seed, {stream_tag::synth_pattern, std::uint64_t(c)});
      Mat p = symmetric_gaussian(cfg.communities, prng);
      p.diagonal().setZero();
      patterns.push_back(std::move(p));
    }
  }

  // Precompute ROI -> community assignment per atlas.
  std::map<std::string, std::vector<int>> assign;
  for (const Atlas* a : atlases)
    assign[a->id] = community_assignment(a->coords, centers);

  Dataset ds;
  ds.name = cfg.name;
  ds.num_classes = cfg.num_classes;
  int total = cfg.num_classes * cfg.subjects_per_class;
  for (int s = 0; s < total; ++s) {
    int cls = s / cfg.subjects_per_class;
    MultiViewSample smp;
    smp.subject_id = "sub" + std::string(s < 10 ? "00" : (s < 100 ? "0" : "")) +
                     std::to_string(s);
    smp.label = cls;

    // Community-level structure for this subject: shared class pattern plus
    // individual jitter. This is the latent signal all views sample.
    Stream jrng(seed, {stream_tag::synth_subject, std::uint64_t(s)});
    Mat jitter = symmetric_gaussian(cfg.communities, jrng);
    Mat block(cfg.communities, cfg.communities);
    for (int a = 0; a < cfg.communities; ++a)
      for (int b = 0; b < cfg.communities; ++b) {
        if (a == b)
          block(a, b) = cfg.r_within;
        else
          block(a, b) = cfg.r_between +
                        cfg.class_gap * patterns[std::size_t(cls)](a, b) +
                        cfg.subject_jitter * jitter(a, b);
      }

    for (const Atlas* a : atlases) {
      const auto& asg = assign[a->id];
      Eigen::Index n = a->coords.rows();
      // View noise keyed by (seed, subject, coordinate hash): two atlases with
      // identical coordinates get identical noise, hence identical views.
      Stream nrng(seed, {stream_tag::synth_noise, std::uint64_t(s),
                         coords_hash(a->coords)});
      Mat m(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        m(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
          int ki = asg[std::size_t(i)], kj = asg[std::size_t(j)];
          double v = (ki == kj) ? cfg.r_within : block(ki, kj);
          v += cfg.noise * nrng.gaussian();
          v = std::clamp(v, -1.0, 1.0);
          m(i, j) = v;
          m(j, i) = v;
        }
      }
      smp.views.emplace(a->id, std::move(m));
    }
    ds.samples.push_back(std::move(smp));
  }
  return ds;
}

}  // namespace mvct
