#include "eet/losses.hpp"

#include <cmath>

namespace eet::losses {

namespace {

void check_same(const face::MeshSequence& a, const face::MeshSequence& b) {
  if (!a.frames.same_shape(b.frames)) throw Error("mesh sequence shape mismatch");
}

std::size_t mask_count(const FrameMask& mask) {
  std::size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

// Σ_t ‖Δ^order X_t − Δ^order Y_t‖² over frames, for order 0, 1 or 2.
double difference_energy(const Matrix& x, const Matrix& y, int order) {
  const std::size_t t_count = x.rows() - static_cast<std::size_t>(order);
  double s = 0.0;
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double dx = 0.0, dy = 0.0;
      switch (order) {
        case 0:
          dx = x(t, c);
          dy = y(t, c);
          break;
        case 1:
          dx = x(t + 1, c) - x(t, c);
          dy = y(t + 1, c) - y(t, c);
          break;
        default:
          dx = x(t + 2, c) - 2.0 * x(t + 1, c) + x(t, c);
          dy = y(t + 2, c) - 2.0 * y(t + 1, c) + y(t, c);
      }
      const double d = dx - dy;
      s += d * d;
    }
  return s;
}

}  // namespace

FrameMask full_mask(std::size_t frames) { return FrameMask(frames, true); }

double recon_loss(const Matrix& pred, const Matrix& gt, const FrameMask& mask) {
  if (!pred.same_shape(gt)) throw Error("parameter sequence shape mismatch");
  if (mask.size() != pred.rows()) throw Error("mask length does not match frame count");
  const std::size_t valid = mask_count(mask);
  if (valid == 0) throw Error("empty mask");
  double s = 0.0;
  for (std::size_t t = 0; t < pred.rows(); ++t) {
    if (!mask[t]) continue;
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double d = pred(t, c) - gt(t, c);
      s += d * d;
    }
  }
  return s / static_cast<double>(valid * pred.cols());
}

double mesh_loss(const face::MeshSequence& pred, const face::MeshSequence& gt) {
  check_same(pred, gt);
  return difference_energy(pred.frames, gt.frames, 0) /
         static_cast<double>(pred.frame_count() * pred.vertex_count());
}

double normal_loss(const face::MeshSequence& pred, const face::MeshSequence& gt, const std::vector<Face>& faces) {
  check_same(pred, gt);
  const Matrix np = kernels::omp::vertex_normals(pred.frames, faces);
  const Matrix ng = kernels::omp::vertex_normals(gt.frames, faces);
  return difference_energy(np, ng, 0) / static_cast<double>(pred.frame_count() * pred.vertex_count());
}

double velocity_loss(const face::MeshSequence& pred, const face::MeshSequence& gt) {
  check_same(pred, gt);
  if (pred.frame_count() < 2) throw Error("velocity loss needs at least 2 frames");
  return difference_energy(pred.frames, gt.frames, 1) /
         static_cast<double>((pred.frame_count() - 1) * pred.vertex_count());
}

double accel_loss(const face::MeshSequence& pred, const face::MeshSequence& gt) {
  check_same(pred, gt);
  if (pred.frame_count() < 3) throw Error("acceleration loss needs at least 3 frames");
  return difference_energy(pred.frames, gt.frames, 2) /
         static_cast<double>((pred.frame_count() - 2) * pred.vertex_count());
}

double emo_loss(std::span<const double> e_pred, std::span<const double> e_target) {
  if (e_pred.size() != e_target.size()) throw Error("embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < e_pred.size(); ++i) {
    dot += e_pred[i] * e_target[i];
    na += e_pred[i] * e_pred[i];
    nb += e_target[i] * e_target[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) throw Error("undefined cosine");
  return 1.0 - dot / (na * nb);
}

void init_mapping(ParamStore& store, const MappingConfig& cfg, Rng& rng) {
  if (cfg.hidden < 1) throw Error("mapping network hidden width must be at least 1");
  store.add("map.W1", gaussian(cfg.hidden, cfg.n_exp, 1.0 / std::sqrt(static_cast<double>(cfg.n_exp)), rng));
  store.add("map.b1", Matrix(1, cfg.hidden));
  store.add("map.W2", gaussian(cfg.d_emo, cfg.hidden, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng));
  store.add("map.b2", Matrix(1, cfg.d_emo));
}

std::vector<double> mapping_forward(const ParamStore& store, const Matrix& psi_seq) {
  if (psi_seq.rows() == 0) throw Error("mapping network needs at least one frame");
  const Matrix& w1 = store["map.W1"].value;
  const Matrix& b1 = store["map.b1"].value;
  const Matrix& w2 = store["map.W2"].value;
  const Matrix& b2 = store["map.b2"].value;
  if (psi_seq.cols() != w1.cols()) throw Error("mapping network input width mismatch");
  std::vector<double> pooled(psi_seq.cols(), 0.0);
  for (std::size_t t = 0; t < psi_seq.rows(); ++t)
    for (std::size_t c = 0; c < psi_seq.cols(); ++c) pooled[c] += psi_seq(t, c);
  for (auto& x : pooled) x /= static_cast<double>(psi_seq.rows());
  std::vector<double> hidden(w1.rows());
  for (std::size_t h = 0; h < w1.rows(); ++h) {
    double s = b1[h];
    for (std::size_t c = 0; c < w1.cols(); ++c) s += w1(h, c) * pooled[c];
    hidden[h] = gelu(s);
  }
  std::vector<double> out(w2.rows());
  for (std::size_t o = 0; o < w2.rows(); ++o) {
    double s = b2[o];
    for (std::size_t h = 0; h < w2.cols(); ++h) s += w2(o, h) * hidden[h];
    out[o] = s;
  }
  return out;
}

void LossWeights::validate() const {
  for (double w : {recon, mesh, normal, vel, acc, emo})
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("loss weights must be finite and nonnegative");
}

double total_loss(const LossComponents& c, const LossWeights& w, TrainMode mode) {
  if (mode == TrainMode::Edited) return w.emo * c.emo;
  return w.recon * c.recon + w.mesh * c.mesh + w.normal * c.normal + w.vel * c.vel + w.acc * c.acc +
         w.emo * c.emo;
}

TrainMode sample_train_mode(Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  return coin(rng) ? TrainMode::Original : TrainMode::Edited;
}

namespace graph {

ad::Var recon(ad::Var pred, ad::Var gt, const FrameMask& mask) {
  if (!pred.value().same_shape(gt.value())) throw Error("parameter sequence shape mismatch");
  if (mask.size() != pred.rows()) throw Error("mask length does not match frame count");
  const std::size_t valid = mask_count(mask);
  if (valid == 0) throw Error("empty mask");
  std::vector<double> w(mask.size());
  for (std::size_t t = 0; t < mask.size(); ++t) w[t] = mask[t] ? 1.0 : 0.0;
  return ad::sum_squares(ad::scale_rows(pred - gt, w)) * (1.0 / static_cast<double>(valid * pred.cols()));
}

ad::Var decode(ad::Var params, const face::BlendshapeModel& model, const Matrix& stacked_basis,
               const Matrix& template_row) {
  if (params.cols() != model.param_dim()) throw Error("parameter sequence width does not match the model");
  ad::Tape& t = params.tape();
  return ad::add_row(ad::matmul_bt(params, t.constant(stacked_basis)), t.constant(template_row));
}

ad::Var mesh(ad::Var pred, ad::Var gt) {
  const double tv = static_cast<double>(pred.rows() * (pred.cols() / 3));
  return ad::sum_squares(pred - gt) * (1.0 / tv);
}

ad::Var normal(ad::Var pred, ad::Var gt, const std::vector<Face>& faces) {
  const double tv = static_cast<double>(pred.rows() * (pred.cols() / 3));
  return ad::sum_squares(ad::vertex_normals(pred, faces) - ad::vertex_normals(gt, faces)) * (1.0 / tv);
}

ad::Var velocity(ad::Var pred, ad::Var gt) {
  if (pred.rows() < 2) throw Error("velocity loss needs at least 2 frames");
  const double tv = static_cast<double>((pred.rows() - 1) * (pred.cols() / 3));
  return ad::sum_squares(ad::row_diff(pred) - ad::row_diff(gt)) * (1.0 / tv);
}

ad::Var accel(ad::Var pred, ad::Var gt) {
  if (pred.rows() < 3) throw Error("acceleration loss needs at least 3 frames");
  const double tv = static_cast<double>((pred.rows() - 2) * (pred.cols() / 3));
  return ad::sum_squares(ad::row_diff(ad::row_diff(pred)) - ad::row_diff(ad::row_diff(gt))) * (1.0 / tv);
}

ad::Var mapping_forward(ad::Tape& tape, ad::Var psi_seq) {
  ad::Var pooled = ad::mean_rows(psi_seq);
  ad::Var hidden = ad::gelu(ad::add_row(ad::matmul_bt(pooled, tape.param("map.W1")), tape.param("map.b1")));
  return ad::add_row(ad::matmul_bt(hidden, tape.param("map.W2")), tape.param("map.b2"));
}

ad::Var emo(ad::Var e_pred, ad::Var e_target) { return ad::cosine_distance(e_pred, e_target); }

Objective objective(ad::Tape& tape, ad::Var pred_params, const Matrix& gt_params, const FrameMask& mask,
                    std::span<const double> e_target, const face::BlendshapeModel& model,
                    const Matrix& stacked_basis, const LossWeights& w, TrainMode mode, bool map_full_params) {
  const std::size_t psi_begin = model.n_id();
  const std::size_t psi_end = psi_begin + model.n_exp();
  auto emo_term = [&] {
    ad::Var map_in = map_full_params ? pred_params : ad::slice_cols(pred_params, psi_begin, psi_end);
    return emo(mapping_forward(tape, map_in), tape.constant(Matrix::row(e_target)));
  };

  Objective out;
  if (mode == TrainMode::Edited) {
    const ad::Var terms[] = {emo_term()};
    const double weights[] = {w.emo};
    out.components.emo = terms[0].scalar();
    out.total = ad::weighted_sum(terms, weights);
    return out;
  }

  const Matrix tmpl = model.template_row();
  ad::Var gt = tape.constant(gt_params);
  ad::Var pred_mesh = decode(pred_params, model, stacked_basis, tmpl);
  ad::Var gt_mesh = decode(gt, model, stacked_basis, tmpl);
  std::vector<ad::Var> terms = {recon(pred_params, gt, mask), mesh(pred_mesh, gt_mesh),
                                normal(pred_mesh, gt_mesh, model.faces), velocity(pred_mesh, gt_mesh),
                                accel(pred_mesh, gt_mesh)};
  std::vector<double> weights = {w.recon, w.mesh, w.normal, w.vel, w.acc};
  out.components = {terms[0].scalar(), terms[1].scalar(), terms[2].scalar(), terms[3].scalar(), terms[4].scalar(), 0.0};
  // A zero-weight emotion term is left out of the graph and reported as 0.
  if (w.emo != 0.0) {
    terms.push_back(emo_term());
    weights.push_back(w.emo);
    out.components.emo = terms.back().scalar();
  }
  out.total = ad::weighted_sum(terms, weights);
  return out;
}

}  // namespace graph

}  // namespace eet::losses
