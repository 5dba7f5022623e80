#include "mvct/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "mvct/io.hpp"

namespace mvct {

Mat distance_matrix(const Mat& coords) {
  require(coords.cols() == 3, "coordinates must be N x 3");
  require(coords.allFinite(), "non-finite coordinate");
  Eigen::Index n = coords.rows();
  Mat d = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = (coords.row(i) - coords.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

Atlas make_atlas(const std::string& id, std::vector<std::string> roi_names,
                 Mat coords) {
  require(!id.empty(), "atlas id must be non-empty");
  require(coords.rows() >= 2,
          "atlas '" + id + "' needs at least 2 ROIs, got " +
              std::to_string(coords.rows()));
  require(std::size_t(coords.rows()) == roi_names.size(),
          "atlas '" + id + "': name/coordinate count mismatch");
  std::set<std::string> seen;
  for (const auto& nm : roi_names) {
    require(!nm.empty(), "atlas '" + id + "' has an empty ROI name");
    require(seen.insert(nm).second,
            "atlas '" + id + "' has duplicate ROI name '" + nm + "'");
  }
  Atlas a;
  a.id = id;
  a.roi_names = std::move(roi_names);
  a.coords = std::move(coords);
  a.dist = distance_matrix(a.coords);
  a.dis_max = a.dist.maxCoeff();
  require(a.dis_max > 0,
          "atlas '" + id + "': all ROI coordinates are identical");
  return a;
}

Atlas load_atlas(const std::filesystem::path& path) {
  nlohmann::json j = io::load_json(path);
  std::string ctx = "atlas file " + path.string();
  require(j.is_object(), ctx + ": top level must be an object");
  require(j.contains("id") && j["id"].is_string(), ctx + ": missing 'id'");
  require(j.contains("rois") && j["rois"].is_array(),
          ctx + ": missing 'rois' array");
  std::vector<std::string> names;
  std::vector<std::array<double, 3>> xyz;
  int idx = 0;
  for (const auto& r : j["rois"]) {
    std::string rctx = ctx + " rois[" + std::to_string(idx++) + "]";
    require(r.is_object() && r.contains("name") && r["name"].is_string(),
            rctx + ": missing 'name'");
    require(r.contains("xyz") && r["xyz"].is_array() && r["xyz"].size() == 3,
            rctx + ": 'xyz' must be [x, y, z]");
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) {
      require(r["xyz"][std::size_t(k)].is_number(), rctx + ": non-numeric xyz");
      c[std::size_t(k)] = r["xyz"][std::size_t(k)].get<double>();
      require(std::isfinite(c[std::size_t(k)]), rctx + ": non-finite xyz");
    }
    names.push_back(r["name"].get<std::string>());
    xyz.push_back(c);
  }
  Mat coords(Eigen::Index(xyz.size()), 3);
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    for (int k = 0; k < 3; ++k) coords(i, k) = xyz[std::size_t(i)][std::size_t(k)];
  return make_atlas(j["id"].get<std::string>(), std::move(names),
                    std::move(coords));
}

void save_atlas(const std::filesystem::path& path, const Atlas& atlas) {
  nlohmann::json j;
  j["id"] = atlas.id;
  j["rois"] = nlohmann::json::array();
  for (int i = 0; i < atlas.roi_count(); ++i) {
    j["rois"].push_back({{"name", atlas.roi_names[std::size_t(i)]},
                         {"xyz",
                          {atlas.coords(i, 0), atlas.coords(i, 1),
                           atlas.coords(i, 2)}}});
  }
  io::save_json(path, j);
}

void AtlasRegistry::add(Atlas atlas) {
  require(by_id_.count(atlas.id) == 0, "duplicate atlas id '" + atlas.id + "'");
  by_id_.emplace(atlas.id, std::move(atlas));
}

void AtlasRegistry::load_dir(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir),
          "atlas directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add(load_atlas(f));
}

const Atlas& AtlasRegistry::get(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end())
    fail("unknown atlas id '" + id + "'; registered: " +
         [this] {
           std::string s;
           for (const auto& [k, v] : by_id_) s += (s.empty() ? "" : ", ") + k;
           return s.empty() ? std::string("<none>") : s;
         }());
  return it->second;
}

std::vector<std::string> AtlasRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : by_id_) out.push_back(k);
  return out;
}

Atlas synth_atlas(const std::string& id, int n, std::uint64_t seed,
                  const Mat& box) {
  require(n >= 2, "synthetic atlas needs >= 2 ROIs");
  require(box.rows() == 2 && box.cols() == 3, "box must be 2x3 (min; max)");
  Stream rng(seed, {stream_tag::synth_coords, hash_str(id)});
  Mat coords(n, 3);
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      double lo = box(0, k), hi = box(1, k);
      coords(i, k) = lo + (hi - lo) * rng.uniform();
    }
    names.push_back(id + "_roi" + std::to_string(i));
  }
  return make_atlas(id, std::move(names), std::move(coords));
}

}  // namespace mvct
