#pragma once

// Evaluation suite over mesh sequences (mm) and expression-parameter
// clusters: VE, LVE, MOD, FDD, the Calinski-Harabasz index and ΔCH.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eet/facemodel.hpp"
#include "eet/numerics.hpp"

namespace eet::metrics {

using face::MeshSequence;

/// Mean per-vertex Euclidean distance.
double ve(const MeshSequence& pred, const MeshSequence& gt);

enum class LipReduction { MaxPerFrame, MeanPerFrame };

/// Per frame: max (default) or mean lip-vertex distance; averaged over frames.
double lve(const MeshSequence& pred, const MeshSequence& gt, std::span<const std::uint32_t> lips,
           LipReduction reduction = LipReduction::MaxPerFrame);

/// Mean over frames of |opening(pred) − opening(gt)|, opening = ‖v_upper − v_lower‖.
double mouth_opening_deviation(const MeshSequence& pred, const MeshSequence& gt, std::uint32_t upper_key,
                               std::uint32_t lower_key);

/// Mean over the subset of |dyn(pred,i) − dyn(gt,i)|, where dyn(seq,i) is the
/// population standard deviation of the vertex position over time:
/// sqrt(mean_t ‖v_i(t) − mean_t v_i‖²).
double fdd(const MeshSequence& pred, const MeshSequence& gt, std::span<const std::uint32_t> subset);

/// [tr(B)/(K−1)] / [tr(W)/(N−K)]
double ch_index(const Matrix& points, std::span<const std::size_t> labels);

/// |CH(gen) − CH(gt)| / CH(gt)
double delta_ch(const Matrix& gen, std::span<const std::size_t> gen_labels, const Matrix& gt,
                std::span<const std::size_t> gt_labels);

/// Rows are the temporal mean ψ of each parameter sequence.
Matrix sequence_expression_means(std::span<const Matrix> param_sequences, std::size_t psi_begin,
                                 std::size_t psi_end);

struct MetricsReport {
  double ve_mm = 0.0;
  double lve_mm = 0.0;
  double mod_mm = 0.0;
  double fdd = 0.0;
  double delta_ch = 0.0;
  std::size_t frames = 0;
  std::size_t vertices = 0;
  std::size_t sequences = 0;
  struct ClassBreakdown {
    double ve_mm = 0.0;
    double lve_mm = 0.0;
    double mod_mm = 0.0;
    double fdd = 0.0;
    std::size_t sequences = 0;
  };
  std::map<std::string, ClassBreakdown> per_class;
  std::map<std::string, double> extra;  // e.g. eval emotion-consistency loss
};

/// Computes the full report from aligned prediction / ground-truth parameter
/// sequences. Per-sequence geometric metrics are averaged over sequences.
MetricsReport evaluate(const face::BlendshapeModel& model, std::span<const Matrix> pred_params,
                       std::span<const Matrix> gt_params, std::span<const std::size_t> labels,
                       std::span<const std::string> class_names);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

}  // namespace eet::metrics
