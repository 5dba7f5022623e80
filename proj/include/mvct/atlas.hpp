#ifndef MVCT_ATLAS_HPP
#define MVCT_ATLAS_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvct/common.hpp"

namespace mvct {

// A named parcellation: ROI labels plus 3D centroid coordinates in mm.
struct Atlas {
  std::string id;
  std::vector<std::string> roi_names;
  Mat coords;   // N x 3
  Mat dist;     // N x N pairwise Euclidean distances, zero diagonal
  double dis_max = 0;  // max pairwise distance; > 0 for any valid atlas

  int roi_count() const { return int(coords.rows()); }
};

// Pairwise Euclidean distances between rows of an N x 3 coordinate matrix.
Mat distance_matrix(const Mat& coords);

Atlas make_atlas(const std::string& id, std::vector<std::string> roi_names,
                 Mat coords);

// File format: {"id": "...", "rois": [{"name": "...", "xyz": [x, y, z]}, ...]}
Atlas load_atlas(const std::filesystem::path& path);
void save_atlas(const std::filesystem::path& path, const Atlas& atlas);

class AtlasRegistry {
 public:
  void add(Atlas atlas);
  // Loads every *.json in the directory.
  void load_dir(const std::filesystem::path& dir);
  bool has(const std::string& id) const { return by_id_.count(id) != 0; }
  const Atlas& get(const std::string& id) const;
  std::vector<std::string> ids() const;
  std::size_t size() const { return by_id_.size(); }

 private:
  std::map<std::string, Atlas> by_id_;
};

// Deterministic synthetic atlas: `n` ROIs with coordinates drawn from the
// given per-axis boxes (one shared box if a single range is given).
Atlas synth_atlas(const std::string& id, int n, std::uint64_t seed,
                  const Mat& box /* 2x3: row0 = min xyz, row1 = max xyz */);

}  // namespace mvct

#endif
