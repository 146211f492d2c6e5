#include "eet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

#include "eet/kernels.hpp"

namespace eet::metrics {

namespace {

void check_same(const MeshSequence& a, const MeshSequence& b) {
  if (!a.frames.same_shape(b.frames)) throw Error("mesh sequence shape mismatch");
  if (a.frame_count() == 0) throw Error("empty mesh sequence");
}

void check_subset(std::span<const std::uint32_t> subset, std::size_t v_count) {
  if (subset.empty()) throw Error("empty vertex subset");
  for (auto i : subset)
    if (i >= v_count) throw Error("vertex index " + std::to_string(i) + " out of range");
}

double point_distance(const Matrix& frames, std::size_t t, std::uint32_t a, std::uint32_t b) {
  const double dx = frames(t, 3 * a) - frames(t, 3 * b);
  const double dy = frames(t, 3 * a + 1) - frames(t, 3 * b + 1);
  const double dz = frames(t, 3 * a + 2) - frames(t, 3 * b + 2);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double dynamics(const Matrix& frames, std::uint32_t v) {
  const std::size_t t_count = frames.rows();
  double mean[3] = {0.0, 0.0, 0.0};
  for (std::size_t t = 0; t < t_count; ++t)
    for (int k = 0; k < 3; ++k) mean[k] += frames(t, 3 * v + k);
  for (double& m : mean) m /= static_cast<double>(t_count);
  double var = 0.0;
  for (std::size_t t = 0; t < t_count; ++t)
    for (int k = 0; k < 3; ++k) {
      const double d = frames(t, 3 * v + k) - mean[k];
      var += d * d;
    }
  return std::sqrt(var / static_cast<double>(t_count));
}

}  // namespace

double ve(const MeshSequence& pred, const MeshSequence& gt) {
  check_same(pred, gt);
  const Matrix d = kernels::omp::vertex_distances(pred.frames, gt.frames);
  double s = 0.0;
  for (double x : d.data()) s += x;
  return s / static_cast<double>(d.size());
}

double lve(const MeshSequence& pred, const MeshSequence& gt, std::span<const std::uint32_t> lips,
           LipReduction reduction) {
  check_same(pred, gt);
  check_subset(lips, pred.vertex_count());
  const Matrix d = kernels::omp::vertex_distances(pred.frames, gt.frames);
  double s = 0.0;
  for (std::size_t t = 0; t < d.rows(); ++t) {
    double frame = 0.0;
    for (auto v : lips) {
      if (reduction == LipReduction::MaxPerFrame) {
        frame = std::max(frame, d(t, v));
      } else {
        frame += d(t, v);
      }
    }
    if (reduction == LipReduction::MeanPerFrame) frame /= static_cast<double>(lips.size());
    s += frame;
  }
  return s / static_cast<double>(d.rows());
}

double mouth_opening_deviation(const MeshSequence& pred, const MeshSequence& gt, std::uint32_t upper_key,
                               std::uint32_t lower_key) {
  check_same(pred, gt);
  const std::uint32_t keys[] = {upper_key, lower_key};
  check_subset(keys, pred.vertex_count());
  double s = 0.0;
  for (std::size_t t = 0; t < pred.frame_count(); ++t) {
    s += std::abs(point_distance(pred.frames, t, upper_key, lower_key) -
                  point_distance(gt.frames, t, upper_key, lower_key));
  }
  return s / static_cast<double>(pred.frame_count());
}

double fdd(const MeshSequence& pred, const MeshSequence& gt, std::span<const std::uint32_t> subset) {
  check_same(pred, gt);
  if (pred.frame_count() < 2) throw Error("FDD needs at least 2 frames");
  check_subset(subset, pred.vertex_count());
  double s = 0.0;
  for (auto v : subset) s += std::abs(dynamics(pred.frames, v) - dynamics(gt.frames, v));
  return s / static_cast<double>(subset.size());
}

double ch_index(const Matrix& points, std::span<const std::size_t> labels) {
  if (labels.size() != points.rows()) throw Error("label count does not match point count");
  std::map<std::size_t, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < labels.size(); ++i) clusters[labels[i]].push_back(i);
  const std::size_t n = points.rows(), k = clusters.size(), p = points.cols();
  if (k < 2) throw Error("degenerate clustering: need at least two clusters");
  if (n <= k) throw Error("degenerate clustering");
  std::vector<double> mu(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) mu[j] += points(i, j);
  for (auto& x : mu) x /= static_cast<double>(n);
  double between = 0.0, within = 0.0;
  for (const auto& [label, members] : clusters) {
    std::vector<double> mk(p, 0.0);
    for (auto i : members)
      for (std::size_t j = 0; j < p; ++j) mk[j] += points(i, j);
    for (auto& x : mk) x /= static_cast<double>(members.size());
    for (std::size_t j = 0; j < p; ++j) between += static_cast<double>(members.size()) * (mk[j] - mu[j]) * (mk[j] - mu[j]);
    for (auto i : members)
      for (std::size_t j = 0; j < p; ++j) within += (points(i, j) - mk[j]) * (points(i, j) - mk[j]);
  }
  if (within == 0.0) throw Error("zero within-cluster dispersion");
  return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

double delta_ch(const Matrix& gen, std::span<const std::size_t> gen_labels, const Matrix& gt,
                std::span<const std::size_t> gt_labels) {
  const std::set<std::size_t> a(gen_labels.begin(), gen_labels.end());
  const std::set<std::size_t> b(gt_labels.begin(), gt_labels.end());
  if (a != b) throw Error("generated and ground-truth label sets differ");
  const double ch_gt = ch_index(gt, gt_labels);
  const double ch_gen = ch_index(gen, gen_labels);
  return std::abs(ch_gen - ch_gt) / ch_gt;
}

Matrix sequence_expression_means(std::span<const Matrix> param_sequences, std::size_t psi_begin,
                                 std::size_t psi_end) {
  Matrix out(param_sequences.size(), psi_end - psi_begin);
  for (std::size_t s = 0; s < param_sequences.size(); ++s) {
    const Matrix& p = param_sequences[s];
    if (psi_end > p.cols() || p.rows() == 0) throw Error("parameter sequence too narrow for the expression block");
    for (std::size_t t = 0; t < p.rows(); ++t)
      for (std::size_t c = psi_begin; c < psi_end; ++c) out(s, c - psi_begin) += p(t, c);
    for (std::size_t c = 0; c < out.cols(); ++c) out(s, c) /= static_cast<double>(p.rows());
  }
  return out;
}

MetricsReport evaluate(const face::BlendshapeModel& model, std::span<const Matrix> pred_params,
                       std::span<const Matrix> gt_params, std::span<const std::size_t> labels,
                       std::span<const std::string> class_names) {
  if (pred_params.empty()) throw Error("empty evaluation split");
  if (pred_params.size() != gt_params.size() || labels.size() != gt_params.size()) {
    throw Error("prediction, ground-truth and label counts differ");
  }
  const auto& lips = model.subset("lips");
  const auto& upper_face = model.subset("upper_face");
  const auto upper_key = model.subset("upper_lip_key")[0];
  const auto lower_key = model.subset("lower_lip_key")[0];

  MetricsReport r;
  r.sequences = pred_params.size();
  r.vertices = model.vertex_count();
  const double inv = 1.0 / static_cast<double>(pred_params.size());
  for (std::size_t s = 0; s < pred_params.size(); ++s) {
    const auto pm = face::decode_sequence(model, pred_params[s]);
    const auto gm = face::decode_sequence(model, gt_params[s]);
    const double v = ve(pm, gm), l = lve(pm, gm, lips), m = mouth_opening_deviation(pm, gm, upper_key, lower_key),
                 f = fdd(pm, gm, upper_face);
    r.ve_mm += v * inv;
    r.lve_mm += l * inv;
    r.mod_mm += m * inv;
    r.fdd += f * inv;
    r.frames += pm.frame_count();
    const std::string name = labels[s] < class_names.size() ? class_names[labels[s]] : std::to_string(labels[s]);
    auto& c = r.per_class[name];
    c.ve_mm += v;
    c.lve_mm += l;
    c.mod_mm += m;
    c.fdd += f;
    ++c.sequences;
  }
  for (auto& [name, c] : r.per_class) {
    const double n = static_cast<double>(c.sequences);
    c.ve_mm /= n;
    c.lve_mm /= n;
    c.mod_mm /= n;
    c.fdd /= n;
  }
  const std::size_t psi_begin = model.n_id(), psi_end = psi_begin + model.n_exp();
  const Matrix gen_means = sequence_expression_means(pred_params, psi_begin, psi_end);
  const Matrix gt_means = sequence_expression_means(gt_params, psi_begin, psi_end);
  r.delta_ch = delta_ch(gen_means, labels, gt_means, labels);
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [name, c] : r.per_class) {
    per_class[name] = {{"ve_mm", c.ve_mm}, {"lve_mm", c.lve_mm}, {"mod_mm", c.mod_mm}, {"fdd", c.fdd},
                       {"sequences", c.sequences}};
  }
  nlohmann::json j = {{"ve_mm", r.ve_mm},
                      {"lve_mm", r.lve_mm},
                      {"mod_mm", r.mod_mm},
                      {"fdd", r.fdd},
                      {"delta_ch", r.delta_ch},
                      {"counts", {{"frames", r.frames}, {"vertices", r.vertices}, {"sequences", r.sequences}}},
                      {"per_class", std::move(per_class)}};
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j.dump(1);
}

MetricsReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.ve_mm = j.at("ve_mm");
    r.lve_mm = j.at("lve_mm");
    r.mod_mm = j.at("mod_mm");
    r.fdd = j.at("fdd");
    r.delta_ch = j.at("delta_ch");
    r.frames = j.at("counts").at("frames");
    r.vertices = j.at("counts").at("vertices");
    r.sequences = j.at("counts").at("sequences");
    for (const auto& [name, c] : j.at("per_class").items()) {
      r.per_class[name] = {c.at("ve_mm"), c.at("lve_mm"), c.at("mod_mm"), c.at("fdd"), c.at("sequences")};
    }
    if (j.contains("extra")) r.extra = j["extra"].get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed metrics report: ") + e.what());
  }
}

}  // namespace eet::metrics
