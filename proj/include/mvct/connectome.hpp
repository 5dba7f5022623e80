#ifndef MVCT_CONNECTOME_HPP
#define MVCT_CONNECTOME_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvct/atlas.hpp"
#include "mvct/common.hpp"

namespace mvct {

// One subject, one or more atlas-specific connectivity views.
struct MultiViewSample {
  std::string subject_id;
  std::optional<int> label;
  std::map<std::string, Mat> views;  // atlas id -> N_a x N_a matrix
};

struct Dataset {
  std::string name;
  int num_classes = 0;  // 0 when unlabeled
  std::vector<MultiViewSample> samples;

  std::vector<std::string> atlas_ids() const;
};

// Pearson correlation matrix from an N x T time-series matrix (one row per
// ROI). Unit diagonal, symmetric, clamped to [-1, 1]. A constant row is an
// error (correlation undefined).
Mat pearson_connectivity(const Mat& timeseries);

// Binary adjacency: 1 where the (off-diagonal) connectivity exceeds the
// threshold, strictly. With `use_abs`, |value| is compared instead.
Mat threshold_adjacency(const Mat& conn, double tau, bool use_abs);

// Validates a loaded connectivity matrix against its atlas.
void validate_connectome(const Mat& m, const Atlas& atlas,
                         const std::string& what);

// Directory layout: manifest.json + one CSV per (subject, view).
// manifest.json:
//   { "name": ..., "num_classes": ... (optional),
//     "subjects": [ { "id": ..., "label": ... (optional),
//                     "views": { "<atlas_id>": "relative/path.csv" } } ] }
Dataset load_dataset(const std::filesystem::path& dir,
                     const AtlasRegistry& registry);
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

// ---- synthetic data ---------------------------------------------------------

// Planted-signal generator. Subjects get a latent community-level correlation
// structure: a class-shared pattern plus per-subject jitter, sampled at each
// atlas's ROI coordinates by nearest-community assignment, plus view noise
// keyed by the coordinate hash (identical coordinates => identical views).
struct SynthConfig {
  std::string name = "synth";
  std::vector<std::string> atlases;
  int subjects_per_class = 20;
  int num_classes = 2;
  int communities = 4;
  double r_within = 0.6;
  double r_between = 0.1;
  double class_gap = 0.15;      // class-pattern amplitude on community pairs
  double subject_jitter = 0.1;  // per-subject community-level variation
  double noise = 0.05;          // per-view ROI-pair noise
  std::optional<Mat> community_centers;      // communities x 3
  std::vector<Mat> class_patterns;           // optional; each communities^2,
                                             // symmetric, zero diagonal
};

SynthConfig parse_synth_config(const std::filesystem::path& json_path);

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed,
                       const AtlasRegistry& registry);

// Nearest-center community index per ROI (ties -> lowest center index).
std::vector<int> community_assignment(const Mat& coords, const Mat& centers);

}  // namespace mvct

#endif
