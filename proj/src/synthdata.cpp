#include "eet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "eet/io.hpp"
#include "eet/json_fields.hpp"

namespace eet::synth {

using nlohmann::json;

namespace {

constexpr std::uint16_t kSampleVersion = 1;

enum Stream : std::uint64_t {
  kCentroids = 1,
  kExpression = 2,
  kReadout = 3,
  kIdentities = 4,
  kEmbedding = 5,
  kAudio = 6,
  kPose = 7,
  kIdentityPick = 8,
  kSplit = 9,
};

double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_f32(Matrix& m) {
  for (auto& x : m.data()) x = f32(x);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
  return rows;
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw Error("dataset manifest: bad shape for " + what);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw Error("dataset manifest: bad shape for " + what);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c];
  }
  return m;
}

std::string sample_file(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "samples/%06zu.eets", index);
  return buf;
}

io::Bytes encode_sample(const SynthSample& s, std::size_t index) {
  io::ByteWriter w;
  w.magic("EETS");
  w.u16(kSampleVersion);
  w.u32(static_cast<std::uint32_t>(index));
  w.u32(static_cast<std::uint32_t>(s.label));
  w.u32(static_cast<std::uint32_t>(s.identity));
  w.u32(static_cast<std::uint32_t>(s.params_gt.rows()));
  w.u32(static_cast<std::uint32_t>(s.audio.cols()));
  w.u32(static_cast<std::uint32_t>(s.params_gt.cols()));
  w.u32(static_cast<std::uint32_t>(s.e_gt.size()));
  w.f32_array(s.audio);
  w.f32_array(Matrix::row(s.e_gt));
  w.f32_array(s.params_gt);
  for (bool m : s.mask) w.u8(m ? 1 : 0);
  return w.take();
}

SynthSample decode_sample(std::span<const std::uint8_t> bytes, std::size_t expected_index) {
  io::ByteReader r(bytes);
  r.expect_magic("EETS");
  if (const auto v = r.u16(); v != kSampleVersion) throw Error("unsupported sample version " + std::to_string(v));
  if (r.u32() != expected_index) throw Error("sample index mismatch");
  SynthSample s;
  s.label = r.u32();
  s.identity = r.u32();
  const std::size_t t = r.u32(), da = r.u32(), d = r.u32(), de = r.u32();
  s.audio = r.f32_array(t, da);
  s.e_gt = r.f32_array(1, de).row_vector(0);
  s.params_gt = r.f32_array(t, d);
  s.mask.resize(t);
  for (std::size_t i = 0; i < t; ++i) s.mask[i] = r.u8() != 0;
  if (r.remaining() != 0) throw Error("trailing bytes in sample file");
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) throw Error("synthetic data needs at least two classes");
  if (class_names.size() != classes) throw Error("class_names must have one entry per class");
  if (d_emo < classes) throw Error("d_emo must be at least the class count");
  if (d_audio == 0 || frames < 3 || per_class < 2) throw Error("synthetic data dimensions too small");
  if (!(separation > 0.0) || !(noise >= 0.0)) throw Error("separation must be positive and noise nonnegative");
  if (identities == 0) throw Error("need at least one synthetic identity");
  if (!(audio_smoothing >= 0.0 && audio_smoothing < 1.0)) throw Error("audio_smoothing must lie in [0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("train_fraction must lie in (0, 1)");
  for (double g : {identity_scale, expression_gain, articulation_gain, pose_scale}) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw Error("synthetic gains must be finite and nonnegative");
  }
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix(splitmix(splitmix(seed) ^ index) ^ (stream * 0x632be59bd9b4e019ULL));
}

Matrix make_centroids(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derived_seed(cfg.seed, 0, kCentroids));
  Matrix q = gaussian(cfg.classes, cfg.d_emo, 1.0, rng);
  for (std::size_t k = 0; k < q.rows(); ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) dot += q(k, c) * q(j, c);
      for (std::size_t c = 0; c < q.cols(); ++c) q(k, c) -= dot * q(j, c);
    }
    double n = 0.0;
    for (std::size_t c = 0; c < q.cols(); ++c) n += q(k, c) * q(k, c);
    n = std::sqrt(n);
    for (std::size_t c = 0; c < q.cols(); ++c) q(k, c) /= n;
  }
  q *= cfg.separation / std::sqrt(2.0);
  round_f32(q);
  return q;
}

SynthWorld make_world(const SynthConfig& cfg, const face::BlendshapeModel& model) {
  cfg.validate();
  SynthWorld w;
  w.centroids = make_centroids(cfg);
  Rng e_rng(derived_seed(cfg.seed, 0, kExpression));
  w.expression = gaussian(model.n_exp(), cfg.d_emo, cfg.expression_gain / std::sqrt(static_cast<double>(cfg.d_emo)), e_rng);
  Rng r_rng(derived_seed(cfg.seed, 0, kReadout));
  w.readout = gaussian(model.n_exp(), cfg.d_audio, cfg.articulation_gain / std::sqrt(static_cast<double>(cfg.d_audio)), r_rng);
  Rng i_rng(derived_seed(cfg.seed, 0, kIdentities));
  w.identities = gaussian(cfg.identities, model.n_id(), cfg.identity_scale, i_rng);
  round_f32(w.expression);
  round_f32(w.readout);
  round_f32(w.identities);
  return w;
}

manifold::LabeledEmbeddingSet gen_embeddings(const SynthConfig& cfg) {
  const Matrix centroids = make_centroids(cfg);
  manifold::LabeledEmbeddingSet set;
  const std::size_t n = cfg.classes * cfg.per_class;
  set.embeddings = Matrix(n, cfg.d_emo);
  set.labels.resize(n);
  set.class_names = cfg.class_names;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i / cfg.per_class;
    set.labels[i] = k;
    Rng rng(derived_seed(cfg.seed, i, kEmbedding));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t c = 0; c < cfg.d_emo; ++c) set.embeddings(i, c) = f32(centroids(k, c) + cfg.noise * normal(rng));
  }
  return set;
}

Matrix gen_audio(std::size_t frames, std::size_t dim, double smoothing, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - smoothing * smoothing);
  Matrix a(frames, dim);
  for (std::size_t c = 0; c < dim; ++c) a(0, c) = normal(rng);
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t c = 0; c < dim; ++c) a(t, c) = smoothing * a(t - 1, c) + innovation * normal(rng);
  round_f32(a);
  return a;
}

SynthSample gen_sample(const SynthConfig& cfg, const SynthWorld& world, const face::BlendshapeModel& model,
                       std::span<const double> e_gt, std::size_t label, std::size_t index) {
  if (e_gt.size() != cfg.d_emo) throw Error("embedding dimension does not match the synthetic config");
  if (world.expression.rows() != model.n_exp() || world.identities.cols() != model.n_id()) {
    throw Error("synthetic world does not match the face model");
  }
  SynthSample s;
  s.label = label;
  s.e_gt.assign(e_gt.begin(), e_gt.end());
  Rng audio_rng(derived_seed(cfg.seed, index, kAudio));
  s.audio = gen_audio(cfg.frames, cfg.d_audio, cfg.audio_smoothing, audio_rng);
  Rng pick(derived_seed(cfg.seed, index, kIdentityPick));
  s.identity = std::uniform_int_distribution<std::size_t>(0, cfg.identities - 1)(pick);

  const std::size_t n_id = model.n_id(), n_exp = model.n_exp(), n_pose = model.n_pose();
  s.params_gt = Matrix(cfg.frames, model.param_dim());
  std::vector<double> offset(n_exp, 0.0);
  for (std::size_t r = 0; r < n_exp; ++r)
    for (std::size_t c = 0; c < cfg.d_emo; ++c) offset[r] += world.expression(r, c) * e_gt[c];

  Rng pose_rng(derived_seed(cfg.seed, index, kPose));
  const Matrix pose = gen_audio(cfg.frames, n_pose, 0.9, pose_rng);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    for (std::size_t c = 0; c < n_id; ++c) s.params_gt(t, c) = world.identities(s.identity, c);
    for (std::size_t r = 0; r < n_exp; ++r) {
      double v = offset[r];
      for (std::size_t c = 0; c < cfg.d_audio; ++c) v += world.readout(r, c) * s.audio(t, c);
      s.params_gt(t, n_id + r) = v;
    }
    for (std::size_t c = 0; c < n_pose; ++c) s.params_gt(t, n_id + n_exp + c) = cfg.pose_scale * pose(t, c);
  }
  round_f32(s.params_gt);
  s.mask = losses::full_mask(cfg.frames);
  return s;
}

manifold::LabeledEmbeddingSet Dataset::embeddings(std::span<const std::size_t> indices) const {
  manifold::LabeledEmbeddingSet set;
  set.embeddings = Matrix(indices.size(), config.d_emo);
  set.class_names = config.class_names;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const SynthSample& s = samples.at(indices[i]);
    for (std::size_t c = 0; c < config.d_emo; ++c) set.embeddings(i, c) = s.e_gt[c];
    set.labels.push_back(s.label);
  }
  return set;
}

Dataset gen_dataset(const SynthConfig& cfg, const face::BlendshapeModel& model) {
  cfg.validate();
  model.validate();
  Dataset ds;
  ds.config = cfg;
  ds.model = model;
  ds.world = make_world(cfg, model);
  const auto set = gen_embeddings(cfg);
  const std::size_t n = set.embeddings.rows();
  ds.samples.resize(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    ds.samples[u] = gen_sample(cfg, ds.world, model, set.embeddings.row_span(u), set.labels[u], u);
  }

  // Stratified split: each class is shuffled on its own and cut at train_fraction.
  Rng split_rng(derived_seed(cfg.seed, 0, kSplit));
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    std::vector<std::size_t> members(cfg.per_class);
    for (std::size_t i = 0; i < cfg.per_class; ++i) members[i] = k * cfg.per_class + i;
    std::shuffle(members.begin(), members.end(), split_rng);
    auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.per_class)));
    n_train = std::clamp<std::size_t>(n_train, 1, cfg.per_class - 1);
    ds.train_indices.insert(ds.train_indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.eval_indices.insert(ds.eval_indices.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.eval_indices.begin(), ds.eval_indices.end());
  return ds;
}

Dataset gen_dataset(const SynthConfig& cfg, const face::SyntheticModelConfig& model_cfg) {
  Dataset ds = gen_dataset(cfg, face::make_synthetic_model(model_cfg));
  ds.model_config = model_cfg;
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "samples");
  face::save_model(ds.model, dir / "model.eetm");
  json samples = json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto bytes = encode_sample(ds.samples[i], i);
    const std::string file = sample_file(i);
    io::write_file(dir / file, bytes);
    samples.push_back({{"index", i},
                       {"label", ds.samples[i].label},
                       {"identity", ds.samples[i].identity},
                       {"file", file},
                       {"sha256", io::sha256_hex(bytes)}});
  }
  json manifest = {{"format", "eet-dataset"},
                   {"version", 1},
                   {"config", config_to_json(ds.config)},
                   {"model_config", model_config_to_json(ds.model_config)},
                   {"model_file", "model.eetm"},
                   {"model_sha256", io::sha256_hex(io::read_file(dir / "model.eetm"))},
                   {"world",
                    {{"centroids", matrix_json(ds.world.centroids)},
                     {"expression", matrix_json(ds.world.expression)},
                     {"readout", matrix_json(ds.world.readout)},
                     {"identities", matrix_json(ds.world.identities)}}},
                   {"sample_count", ds.samples.size()},
                   {"samples", std::move(samples)},
                   {"split", {{"train", ds.train_indices}, {"eval", ds.eval_indices}}}};
  io::write_text(dir / "manifest.json", manifest.dump(1));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  json m;
  try {
    m = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error("malformed dataset manifest: " + std::string(e.what()));
  }
  try {
    if (m.at("format") != "eet-dataset" || m.at("version") != 1) throw Error("not an eet dataset manifest");
    Dataset ds;
    ds.config = config_from_json(m.at("config"));
    ds.config.validate();
    ds.model_config = model_config_from_json(m.at("model_config"));
    const auto model_bytes = io::read_file(dir / m.at("model_file").get<std::string>());
    if (io::sha256_hex(model_bytes) != m.at("model_sha256")) throw Error("dataset model digest mismatch");
    ds.model = face::load_model(dir / m.at("model_file").get<std::string>());
    const auto& w = m.at("world");
    ds.world.centroids = matrix_from_json(w.at("centroids"), ds.config.classes, ds.config.d_emo, "centroids");
    ds.world.expression = matrix_from_json(w.at("expression"), ds.model.n_exp(), ds.config.d_emo, "expression");
    ds.world.readout = matrix_from_json(w.at("readout"), ds.model.n_exp(), ds.config.d_audio, "readout");
    ds.world.identities = matrix_from_json(w.at("identities"), ds.config.identities, ds.model.n_id(), "identities");
    const auto& entries = m.at("samples");
    if (entries.size() != m.at("sample_count").get<std::size_t>()) throw Error("dataset sample count mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto bytes = io::read_file(dir / entries[i].at("file").get<std::string>());
      if (io::sha256_hex(bytes) != entries[i].at("sha256")) throw Error("sample digest mismatch at index " + std::to_string(i));
      SynthSample s = decode_sample(bytes, i);
      if (s.params_gt.cols() != ds.model.param_dim() || s.e_gt.size() != ds.config.d_emo ||
          s.audio.cols() != ds.config.d_audio || s.label >= ds.config.classes) {
        throw Error("sample " + std::to_string(i) + " is inconsistent with the dataset config");
      }
      ds.samples.push_back(std::move(s));
    }
    ds.train_indices = m.at("split").at("train").get<std::vector<std::size_t>>();
    ds.eval_indices = m.at("split").at("eval").get<std::vector<std::size_t>>();
    for (auto idx : ds.train_indices)
      if (idx >= ds.samples.size()) throw Error("split index out of range");
    for (auto idx : ds.eval_indices)
      if (idx >= ds.samples.size()) throw Error("split index out of range");
    return ds;
  } catch (const json::exception& e) {
    throw Error("malformed dataset manifest: " + std::string(e.what()));
  }
}

json config_to_json(const SynthConfig& c) {
  return {{"classes", c.classes},
          {"d_emo", c.d_emo},
          {"d_audio", c.d_audio},
          {"frames", c.frames},
          {"per_class", c.per_class},
          {"separation", c.separation},
          {"noise", c.noise},
          {"identities", c.identities},
          {"identity_scale", c.identity_scale},
          {"expression_gain", c.expression_gain},
          {"articulation_gain", c.articulation_gain},
          {"audio_smoothing", c.audio_smoothing},
          {"pose_scale", c.pose_scale},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed},
          {"class_names", c.class_names}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  FieldReader r(j, "synth");
  r.get("classes", c.classes);
  r.get("d_emo", c.d_emo);
  r.get("d_audio", c.d_audio);
  r.get("frames", c.frames);
  r.get("per_class", c.per_class);
  r.get("separation", c.separation);
  r.get("noise", c.noise);
  r.get("identities", c.identities);
  r.get("identity_scale", c.identity_scale);
  r.get("expression_gain", c.expression_gain);
  r.get("articulation_gain", c.articulation_gain);
  r.get("audio_smoothing", c.audio_smoothing);
  r.get("pose_scale", c.pose_scale);
  r.get("train_fraction", c.train_fraction);
  r.get("seed", c.seed);
  r.get("class_names", c.class_names);
  r.finish();
  if (!j.contains("class_names") && c.classes != c.class_names.size()) {
    c.class_names.clear();
    for (std::size_t k = 0; k < c.classes; ++k) c.class_names.push_back("class" + std::to_string(k));
  }
  return c;
}

json model_config_to_json(const face::SyntheticModelConfig& c) {
  return {{"grid", c.grid},         {"n_id", c.n_id},
          {"n_exp", c.n_exp},       {"n_pose", c.n_pose},
          {"seed", c.seed},         {"spacing_mm", c.spacing_mm},
          {"max_amplitude_mm", c.max_amplitude_mm}};
}

face::SyntheticModelConfig model_config_from_json(const json& j) {
  face::SyntheticModelConfig c;
  FieldReader r(j, "model");
  r.get("grid", c.grid);
  r.get("n_id", c.n_id);
  r.get("n_exp", c.n_exp);
  r.get("n_pose", c.n_pose);
  r.get("seed", c.seed);
  r.get("spacing_mm", c.spacing_mm);
  r.get("max_amplitude_mm", c.max_amplitude_mm);
  r.finish();
  return c;
}

}  // namespace eet::synth
