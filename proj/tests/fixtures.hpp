#pragma once

// Shared scaffolding for the test binaries: tiny atlases, small model
// configurations, and deterministic random inputs.

#include <filesystem>
#include <string>

#include "mvct/atlas.hpp"
#include "mvct/connectome.hpp"
#include "mvct/model.hpp"

namespace fixture {

using mvct::Atlas;
using mvct::Mat;
using mvct::ModelConfig;
using mvct::Stream;

inline Mat box(double extent) {
  Mat b(2, 3);
  b.row(0).setZero();
  b.row(1).setConstant(extent);
  return b;
}

inline Atlas toy_atlas(const std::string& id, int n, std::uint64_t seed,
                       double extent = 120.0) {
  return mvct::synth_atlas(id, n, seed, box(extent));
}

// Symmetric, unit-diagonal, entries in (-1, 1).
inline Mat random_conn(int n, Stream& s) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      double v = std::tanh(s.gaussian());
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.freq_count = 4;
  cfg.n_super = 5;
  cfg.prototypes = 3;
  cfg.gcn_layers = 2;
  cfg.decoder_layers = 1;
  return cfg;
}

// Empty per-test scratch directory under the system temp root.
inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
