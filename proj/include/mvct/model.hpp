#ifndef MVCT_MODEL_HPP
#define MVCT_MODEL_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mvct/atlas.hpp"
#include "mvct/common.hpp"
#include "mvct/tape.hpp"

namespace mvct {

struct ModelConfig {
  int d = 256;
  int layers = 4;
  int heads = 8;
  int freq_count = 64;   // frequency vectors; feature dim is 2 * freq_count
  int d_ffn = 0;         // 0 -> 4 * d
  int n_super = 50;
  int prototypes = 16;
  int gcn_layers = 1;
  int proto_layers = 1;
  int decoder_layers = 2;
  double threshold = 0.3;
  bool threshold_abs = false;
  std::string readout_source = "nodes";   // nodes | supernodes
  std::string saliency_layer = "last";    // last | mean_all
  int num_classes = 0;                    // 0 = no classifier head

  int ffn_width() const { return d_ffn > 0 ? d_ffn : 4 * d; }
  int head_dim() const { return d / heads; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// All learnable state. Parameters live in a flat named store so the optimizer,
// the gradient checker, and the checkpoint format all see one canonical map.
struct ModelState {
  ModelConfig cfg;
  ad::ParamStore params;
  std::vector<std::string> atlas_ids;          // registration order
  std::map<std::string, int> atlas_dims;       // id -> ROI count
  std::uint64_t init_seed = 0;

  static ModelState init(const ModelConfig& cfg,
                         const std::vector<const Atlas*>& atlases,
                         std::uint64_t seed);

  bool has_atlas(const std::string& id) const {
    return atlas_dims.count(id) != 0;
  }
  // Adds projection + decoder parameters for an atlas first seen after init
  // (the transfer-to-unseen-atlas path).
  void register_atlas(const Atlas& atlas);
  // Adds the classifier head if absent (or validates its shape).
  void ensure_head(int num_classes);

  std::size_t param_count() const { return params.scalar_count(); }
  std::map<std::string, std::size_t> component_counts() const;

  std::map<std::string, Mat> snapshot_params() const { return params.value; }
  void install_params(const std::map<std::string, Mat>& values);
};

// ---- checkpointing ----------------------------------------------------------

struct OptimState {
  std::int64_t t = 0;
  std::map<std::string, Mat> m, v;
};

struct CheckpointMeta {
  std::uint64_t rng_seed = 0;
  int epoch = 0;
  std::vector<double> loss_history;
};

// Writes <prefix>.bin (parameter blob, optionally optimizer state) and
// <prefix>.json (config, atlas ids, seed, epoch, loss history). Atomic.
void save_checkpoint(const std::filesystem::path& prefix, const ModelState& ms,
                     const CheckpointMeta& meta,
                     const OptimState* opt = nullptr);

struct LoadedCheckpoint {
  ModelState model;
  CheckpointMeta meta;
  std::optional<OptimState> opt;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix);

}  // namespace mvct

#endif
