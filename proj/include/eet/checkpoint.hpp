#pragma once

// "EETK" checkpoint: config JSON blob, a tensor table and raw f32 data,
// closed by a SHA-256 digest of everything before it.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eet/diffusion.hpp"
#include "eet/io.hpp"
#include "eet/numerics.hpp"

namespace eet::ckpt {

struct Checkpoint {
  std::string config_json;
  ParamStore params;  // den.* and map.*
  std::optional<diffusion::OptimizerState> optimizer;
  std::vector<double> schedule_beta;
  Matrix centroids;   // K×d_emo, base embeddings for label-driven generation
  Matrix identities;  // n_identities×n_id
};

io::Bytes encode(const Checkpoint& c);
/// Verifies the digest trailer before parsing.
Checkpoint decode(std::span<const std::uint8_t> bytes);

void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

/// Narrows every stored value to f32 in place, so that the in-memory state
/// equals what a save/load round-trip would produce.
void round_to_storage(Checkpoint& c);

}  // namespace eet::ckpt
