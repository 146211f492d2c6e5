#pragma once

// The training objective: masked parameter reconstruction, mesh/normal
// geometry, velocity/acceleration, the mapping network with its cosine
// emotion-consistency loss, the weighted total and the dual-train mode draw.
//
// Each loss exists twice: a plain evaluator over values, and a tape op
// builder (namespace `graph`) used for training. Tests check they agree.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "eet/autodiff.hpp"
#include "eet/facemodel.hpp"
#include "eet/numerics.hpp"

namespace eet::losses {

using FrameMask = std::vector<bool>;

FrameMask full_mask(std::size_t frames);

double recon_loss(const Matrix& pred, const Matrix& gt, const FrameMask& mask);
double mesh_loss(const face::MeshSequence& pred, const face::MeshSequence& gt);
double normal_loss(const face::MeshSequence& pred, const face::MeshSequence& gt, const std::vector<Face>& faces);
double velocity_loss(const face::MeshSequence& pred, const face::MeshSequence& gt);
double accel_loss(const face::MeshSequence& pred, const face::MeshSequence& gt);
double emo_loss(std::span<const double> e_pred, std::span<const double> e_target);

struct MappingConfig {
  std::size_t n_exp = 16;
  std::size_t hidden = 64;
  std::size_t d_emo = 16;
};

/// Registers map.W1 (h×n_exp), map.b1 (1×h), map.W2 (d_emo×h), map.b2 (1×d_emo).
void init_mapping(ParamStore& store, const MappingConfig& cfg, Rng& rng);
/// Temporal mean of ψ rows → W2·gelu(W1·pooled + b1) + b2.
std::vector<double> mapping_forward(const ParamStore& store, const Matrix& psi_seq);

struct LossWeights {
  double recon = 1.0;
  double mesh = 1.0;
  double normal = 0.1;
  double vel = 0.5;
  double acc = 0.25;
  double emo = 0.5;

  void validate() const;
};

enum class TrainMode { Original, Edited };

struct LossComponents {
  double recon = 0.0;
  double mesh = 0.0;
  double normal = 0.0;
  double vel = 0.0;
  double acc = 0.0;
  double emo = 0.0;
};

/// Original → full weighted sum; Edited → λ_emo·L_emo only.
double total_loss(const LossComponents& c, const LossWeights& w, TrainMode mode);
/// Bernoulli(0.5); Original on success.
TrainMode sample_train_mode(Rng& rng);

namespace graph {

ad::Var recon(ad::Var pred, ad::Var gt, const FrameMask& mask);
/// Decodes a T×D parameter node into a T×3V mesh node.
ad::Var decode(ad::Var params, const face::BlendshapeModel& model, const Matrix& stacked_basis,
               const Matrix& template_row);
ad::Var mesh(ad::Var pred, ad::Var gt);
ad::Var normal(ad::Var pred, ad::Var gt, const std::vector<Face>& faces);
ad::Var velocity(ad::Var pred, ad::Var gt);
ad::Var accel(ad::Var pred, ad::Var gt);
ad::Var mapping_forward(ad::Tape& tape, ad::Var psi_seq);
ad::Var emo(ad::Var e_pred, ad::Var e_target);

/// Full objective over a predicted parameter sequence: decodes both
/// sequences, builds the terms and combines them per the mode. In Original
/// mode a zero λ_emo drops the emotion term and reports it as 0.
struct Objective {
  ad::Var total;
  LossComponents components;
};

Objective objective(ad::Tape& tape, ad::Var pred_params, const Matrix& gt_params, const FrameMask& mask,
                    std::span<const double> e_target, const face::BlendshapeModel& model,
                    const Matrix& stacked_basis, const LossWeights& w, TrainMode mode,
                    bool map_full_params = false);

}  // namespace graph

}  // namespace eet::losses
