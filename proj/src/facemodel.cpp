#include "eet/facemodel.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "eet/io.hpp"

namespace eet::face {

namespace {

constexpr std::uint16_t kModelVersion = 1;

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

const std::vector<std::uint32_t>& BlendshapeModel::subset(const std::string& name) const {
  auto it = vertex_subsets.find(name);
  if (it == vertex_subsets.end()) throw Error("unknown vertex subset: " + name);
  return it->second;
}

void BlendshapeModel::validate() const {
  const std::size_t v = vertex_count();
  if (template_vertices.cols() != 3) throw Error("template must be V x 3");
  if (faces.empty()) throw Error("model has no faces");
  for (const Face& f : faces)
    for (auto i : f)
      if (i >= v) throw Error("face index out of range");
  for (const Matrix* b : {&basis_id, &basis_exp, &basis_pose}) {
    if (b->rows() != 3 * v) throw Error("basis row count must be 3V");
    if (!b->all_finite()) throw Error("basis contains non-finite values");
  }
  for (const auto& [name, idx] : vertex_subsets) {
    if (idx.empty()) throw Error("vertex subset '" + name + "' is empty");
    for (auto i : idx)
      if (i >= v) throw Error("vertex subset '" + name + "' index out of range");
  }
  for (const char* key : {"upper_lip_key", "lower_lip_key"}) {
    if (subset(key).size() != 1) throw Error(std::string(key) + " must hold exactly one vertex");
  }
  subset("lips");
  subset("upper_face");
}

Matrix BlendshapeModel::stacked_basis() const {
  const std::size_t rows = 3 * vertex_count();
  Matrix s(rows, param_dim());
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t c = 0;
    for (const Matrix* b : {&basis_id, &basis_exp, &basis_pose})
      for (std::size_t j = 0; j < b->cols(); ++j) s(r, c++) = (*b)(r, j);
  }
  return s;
}

Matrix BlendshapeModel::template_row() const {
  return Matrix(1, template_vertices.size(),
                std::vector<double>(template_vertices.data().begin(), template_vertices.data().end()));
}

Matrix decode(const BlendshapeModel& model, const FrameParams& p) {
  if (p.beta.size() != model.n_id() || p.psi.size() != model.n_exp() ||
      p.theta.size() != model.n_pose()) {
    throw Error("frame parameter dimensions do not match the model");
  }
  Matrix out = model.template_vertices;
  auto add_basis = [&](const Matrix& basis, const std::vector<double>& coeff) {
    for (std::size_t r = 0; r < basis.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < coeff.size(); ++j) s += basis(r, j) * coeff[j];
      out[r] += s;
    }
  };
  add_basis(model.basis_id, p.beta);
  add_basis(model.basis_exp, p.psi);
  add_basis(model.basis_pose, p.theta);
  return out;
}

MeshSequence decode_sequence(const BlendshapeModel& model, const Matrix& params) {
  if (params.cols() != model.param_dim()) throw Error("parameter sequence width does not match the model");
  Matrix frames = kernels::omp::matmul_bt(params, model.stacked_basis());
  const Matrix tmpl = model.template_row();
  for (std::size_t t = 0; t < frames.rows(); ++t)
    for (std::size_t c = 0; c < frames.cols(); ++c) frames(t, c) += tmpl[c];
  return {std::move(frames)};
}

NormalsResult vertex_normals(const Matrix& mesh, const std::vector<Face>& faces) {
  if (mesh.cols() != 3) throw Error("mesh must be V x 3");
  Matrix row(1, mesh.size(), std::vector<double>(mesh.data().begin(), mesh.data().end()));
  std::vector<std::uint8_t> degenerate;
  Matrix n = kernels::serial::vertex_normals(row, faces, &degenerate);
  NormalsResult out{Matrix(mesh.rows(), 3, std::vector<double>(n.data().begin(), n.data().end())), {}};
  for (std::size_t v = 0; v < degenerate.size(); ++v) {
    if (degenerate[v]) out.degenerate_vertices.push_back(static_cast<std::uint32_t>(v));
  }
  if (!out.degenerate_vertices.empty()) {
    spdlog::warn("vertex_normals: {} vertices with vanishing normal, using (0,0,1)",
                 out.degenerate_vertices.size());
  }
  return out;
}

BlendshapeModel make_synthetic_model(const SyntheticModelConfig& cfg) {
  if (cfg.grid < 4) throw Error("synthetic grid must be at least 4x4");
  const std::size_t n = cfg.grid;
  const std::size_t v_count = n * n;
  BlendshapeModel m;
  m.template_vertices = Matrix(v_count, 3);
  // Row r = 0 is the bottom edge (y = 0); row n-1 is the top.
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      m.template_vertices(r * n + c, 0) = static_cast<double>(c) * cfg.spacing_mm;
      m.template_vertices(r * n + c, 1) = static_cast<double>(r) * cfg.spacing_mm;
    }
  for (std::size_t r = 0; r + 1 < n; ++r)
    for (std::size_t c = 0; c + 1 < n; ++c) {
      const auto v00 = static_cast<std::uint32_t>(r * n + c);
      const auto v01 = v00 + 1;
      const auto v10 = static_cast<std::uint32_t>((r + 1) * n + c);
      const auto v11 = v10 + 1;
      m.faces.push_back({v00, v01, v11});
      m.faces.push_back({v00, v11, v10});
    }

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double extent = static_cast<double>(n - 1);
  // Each column is a sum of three low-frequency sinusoidal products per axis,
  // rescaled so its largest per-vertex displacement is at most the amplitude.
  auto smooth_basis = [&](std::size_t cols, double max_freq) {
    Matrix b(3 * v_count, cols);
    for (std::size_t j = 0; j < cols; ++j) {
      for (int axis = 0; axis < 3; ++axis) {
        const double axis_gain = axis == 2 ? 1.0 : 0.3;
        for (int term = 0; term < 3; ++term) {
          const double fu = 0.5 + max_freq * unif(rng);
          const double fv = 0.5 + max_freq * unif(rng);
          const double pu = 2.0 * std::numbers::pi * unif(rng);
          const double pv = 2.0 * std::numbers::pi * unif(rng);
          const double amp = 2.0 * unif(rng) - 1.0;
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
              const double u = static_cast<double>(c) / extent;
              const double v = static_cast<double>(r) / extent;
              b(3 * (r * n + c) + axis, j) += axis_gain * amp * std::sin(std::numbers::pi * fu * u + pu) *
                                              std::cos(std::numbers::pi * fv * v + pv);
            }
        }
      }
      double peak = 0.0;
      for (std::size_t v = 0; v < v_count; ++v) {
        const double dx = b(3 * v, j), dy = b(3 * v + 1, j), dz = b(3 * v + 2, j);
        peak = std::max(peak, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
      const double target = cfg.max_amplitude_mm * (0.5 + 0.5 * unif(rng));
      const double s = peak > 0.0 ? target / peak : 0.0;
      for (std::size_t r = 0; r < 3 * v_count; ++r) b(r, j) = round_f32(b(r, j) * s);
    }
    return b;
  };
  m.basis_id = smooth_basis(cfg.n_id, 1.5);
  m.basis_exp = smooth_basis(cfg.n_exp, 2.5);
  m.basis_pose = smooth_basis(cfg.n_pose, 1.0);

  const std::size_t c0 = n / 4;
  const std::size_t c1 = n - n / 4;
  auto& lips = m.vertex_subsets["lips"];
  for (std::size_t r = 1; r <= 2; ++r)
    for (std::size_t c = c0; c < c1; ++c) lips.push_back(static_cast<std::uint32_t>(r * n + c));
  auto& upper = m.vertex_subsets["upper_face"];
  for (std::size_t r = n - 2; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) upper.push_back(static_cast<std::uint32_t>(r * n + c));
  m.vertex_subsets["upper_lip_key"] = {static_cast<std::uint32_t>(2 * n + n / 2)};
  m.vertex_subsets["lower_lip_key"] = {static_cast<std::uint32_t>(1 * n + n / 2)};
  m.validate();
  return m;
}

void save_model(const BlendshapeModel& model, const std::filesystem::path& path) {
  model.validate();
  io::ByteWriter w;
  w.magic("EETM");
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.vertex_count()));
  w.u32(static_cast<std::uint32_t>(model.faces.size()));
  w.u32(static_cast<std::uint32_t>(model.n_id()));
  w.u32(static_cast<std::uint32_t>(model.n_exp()));
  w.u32(static_cast<std::uint32_t>(model.n_pose()));
  w.u32(static_cast<std::uint32_t>(model.vertex_subsets.size()));
  for (const auto& [name, idx] : model.vertex_subsets) {
    w.str16(name);
    w.u32(static_cast<std::uint32_t>(idx.size()));
    for (auto i : idx) w.u32(i);
  }
  w.f32_array(model.template_vertices);
  for (const Face& f : model.faces)
    for (auto i : f) w.u32(i);
  w.f32_array(model.basis_id);
  w.f32_array(model.basis_exp);
  w.f32_array(model.basis_pose);
  io::write_file(path, w.bytes());
}

BlendshapeModel load_model(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("EETM");
  if (const auto version = r.u16(); version != kModelVersion) {
    throw Error("unsupported model version " + std::to_string(version));
  }
  const std::size_t v = r.u32(), f = r.u32(), n_id = r.u32(), n_exp = r.u32(), n_pose = r.u32();
  const std::size_t n_subsets = r.u32();
  BlendshapeModel m;
  for (std::size_t s = 0; s < n_subsets; ++s) {
    std::string name = r.str16();
    std::vector<std::uint32_t> idx(r.u32());
    for (auto& i : idx) i = r.u32();
    m.vertex_subsets.emplace(std::move(name), std::move(idx));
  }
  m.template_vertices = r.f32_array(v, 3);
  m.faces.resize(f);
  for (auto& face : m.faces)
    for (auto& i : face) i = r.u32();
  m.basis_id = r.f32_array(3 * v, n_id);
  m.basis_exp = r.f32_array(3 * v, n_exp);
  m.basis_pose = r.f32_array(3 * v, n_pose);
  if (r.remaining() != 0) throw Error("trailing bytes in model file");
  m.validate();
  return m;
}

std::vector<std::uint8_t> vertex_buffer_f32(const MeshSequence& seq) {
  io::ByteWriter w;
  w.f32_array(seq.frames);
  return w.take();
}

std::string mesh_manifest_json(const MeshSequence& seq, const std::vector<Face>& faces, double fps) {
  nlohmann::json faces_json = nlohmann::json::array();
  for (const Face& f : faces) faces_json.push_back({f[0], f[1], f[2]});
  nlohmann::json j = {{"frames", seq.frame_count()},
                      {"fps", fps},
                      {"vertices", seq.vertex_count()},
                      {"dtype", "f32le"},
                      {"faces", std::move(faces_json)}};
  return j.dump();
}

void export_mesh_sequence(const MeshSequence& seq, const std::vector<Face>& faces, double fps,
                          const std::filesystem::path& manifest_path,
                          const std::filesystem::path& buffer_path) {
  io::write_text(manifest_path, mesh_manifest_json(seq, faces, fps));
  io::write_file(buffer_path, vertex_buffer_f32(seq));
}

}  // namespace eet::face
