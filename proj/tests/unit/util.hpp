#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "eet/numerics.hpp"
#include "eet/pipeline.hpp"

namespace eet::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return gaussian(r, c, scale, rng);
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  return gaussian(1, n, scale, rng).row_vector(0);
}

/// A fresh, empty scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("eet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small pipeline config: T=4, 4×4 grid, d_model 16, few samples.
inline pipeline::PipelineConfig tiny_config() {
  pipeline::PipelineConfig cfg;
  cfg.synth.frames = 4;
  cfg.synth.per_class = 10;
  cfg.synth.identities = 2;
  cfg.model.grid = 4;
  cfg.model.n_id = 3;
  cfg.model.n_exp = 5;
  cfg.model.n_pose = 2;
  cfg.synth.d_emo = 4;
  cfg.synth.d_audio = 3;
  cfg.mapping_hidden = 6;
  cfg.denoiser.time_dim = 8;
  cfg.denoiser.time_hidden = 8;
  cfg.denoiser.d_model = 16;
  cfg.denoiser.heads = 2;
  cfg.denoiser.ff_hidden = 16;
  cfg.schedule.steps = 10;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.warm_start_iters = 50;
  cfg.derive_dims();
  cfg.validate();
  return cfg;
}

}  // namespace eet::test
