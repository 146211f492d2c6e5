#pragma once

// Linear blendshape face model: template + identity/expression/pose bases,
// with pose linearized into an additive corrective basis.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eet/kernels.hpp"
#include "eet/numerics.hpp"

namespace eet::face {

struct BlendshapeModel {
  Matrix template_vertices;  // V×3, mm
  std::vector<Face> faces;   // counter-clockwise
  Matrix basis_id;           // 3V × n_id
  Matrix basis_exp;          // 3V × n_exp
  Matrix basis_pose;         // 3V × n_pose
  std::map<std::string, std::vector<std::uint32_t>> vertex_subsets;

  std::size_t vertex_count() const { return template_vertices.rows(); }
  std::size_t n_id() const { return basis_id.cols(); }
  std::size_t n_exp() const { return basis_exp.cols(); }
  std::size_t n_pose() const { return basis_pose.cols(); }
  /// Width of a per-frame parameter vector β‖ψ‖θ.
  std::size_t param_dim() const { return n_id() + n_exp() + n_pose(); }

  const std::vector<std::uint32_t>& subset(const std::string& name) const;

  /// Throws if any structural invariant is broken.
  void validate() const;

  /// Stacked [B_shape | B_exp | B_pose], 3V × D.
  Matrix stacked_basis() const;
  /// Template flattened to a 1 × 3V row.
  Matrix template_row() const;

  friend bool operator==(const BlendshapeModel&, const BlendshapeModel&) = default;
};

struct FrameParams {
  std::vector<double> beta;
  std::vector<double> psi;
  std::vector<double> theta;
};

/// T frames × 3V coordinates, xyz interleaved per vertex.
struct MeshSequence {
  Matrix frames;
  std::size_t vertex_count() const { return frames.cols() / 3; }
  std::size_t frame_count() const { return frames.rows(); }
};

/// V×3 vertex positions.
Matrix decode(const BlendshapeModel& model, const FrameParams& p);
/// Decodes a T×D parameter sequence (rows β‖ψ‖θ) into a mesh sequence.
MeshSequence decode_sequence(const BlendshapeModel& model, const Matrix& params);

struct NormalsResult {
  Matrix normals;  // V×3
  std::vector<std::uint32_t> degenerate_vertices;
};

NormalsResult vertex_normals(const Matrix& mesh, const std::vector<Face>& faces);

struct SyntheticModelConfig {
  std::size_t grid = 8;
  std::size_t n_id = 8;
  std::size_t n_exp = 16;
  std::size_t n_pose = 4;
  std::uint64_t seed = 7;
  double spacing_mm = 10.0;
  double max_amplitude_mm = 3.0;
};

BlendshapeModel make_synthetic_model(const SyntheticModelConfig& cfg);

/// Binary "EETM" model file.
void save_model(const BlendshapeModel& model, const std::filesystem::path& path);
BlendshapeModel load_model(const std::filesystem::path& path);

/// Mesh export for viewers: manifest JSON {frames, fps, vertices, faces} plus
/// a raw little-endian f32 buffer of T×V×3 vertices.
std::vector<std::uint8_t> vertex_buffer_f32(const MeshSequence& seq);
std::string mesh_manifest_json(const MeshSequence& seq, const std::vector<Face>& faces, double fps);
void export_mesh_sequence(const MeshSequence& seq, const std::vector<Face>& faces, double fps,
                          const std::filesystem::path& manifest_path,
                          const std::filesystem::path& buffer_path);

}  // namespace eet::face
