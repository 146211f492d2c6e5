#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "util.hpp"

#include "eet/io.hpp"
#include "eet/metrics.hpp"
#include "eet/synthdata.hpp"

using namespace eet;
using namespace eet::synth;

namespace {

Matrix psi_block(const Dataset& ds, const SynthSample& s) {
  Matrix psi(s.params_gt.rows(), ds.model.n_exp());
  for (std::size_t t = 0; t < psi.rows(); ++t)
    for (std::size_t j = 0; j < psi.cols(); ++j) psi(t, j) = s.params_gt(t, ds.model.n_id() + j);
  return psi;
}

void check_same_samples(const Dataset& a, const Dataset& b) {
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    CHECK(x.audio == y.audio);
    CHECK(x.e_gt == y.e_gt);
    CHECK(x.label == y.label);
    CHECK(x.identity == y.identity);
    CHECK(x.params_gt == y.params_gt);
    CHECK(x.mask == y.mask);
  }
  CHECK(a.train_indices == b.train_indices);
  CHECK(a.eval_indices == b.eval_indices);
  CHECK(a.model == b.model);
  CHECK(a.world.centroids == b.world.centroids);
}

}  // namespace

TEST_CASE("gen_embeddings: deterministic, class-major, centroids at the configured separation") {
  SynthConfig cfg;
  const auto a = gen_embeddings(cfg), b = gen_embeddings(cfg);
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.labels == b.labels);
  REQUIRE(a.embeddings.rows() == cfg.classes * cfg.per_class);
  for (std::size_t i = 0; i < a.labels.size(); ++i) CHECK(a.labels[i] == i / cfg.per_class);

  const Matrix c = make_centroids(cfg);
  for (std::size_t i = 0; i < cfg.classes; ++i)
    for (std::size_t j = i + 1; j < cfg.classes; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < cfg.d_emo; ++k) d += (c(i, k) - c(j, k)) * (c(i, k) - c(j, k));
      CHECK(std::sqrt(d) == doctest::Approx(cfg.separation).epsilon(1e-6));
    }

  SynthConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK_FALSE(gen_embeddings(other).embeddings == a.embeddings);
}

TEST_CASE("gen_embeddings: separation 10, noise 1 is linearly separable") {
  SynthConfig cfg;
  cfg.separation = 10.0;
  cfg.noise = 1.0;
  const auto set = gen_embeddings(cfg);
  CHECK(manifold::training_accuracy(set, manifold::train_classifier(set, {})) >= 0.99);
}

TEST_CASE("gen_embeddings: clustered well above a label-shuffled baseline") {
  SynthConfig cfg;
  const auto set = gen_embeddings(cfg);
  const double ch = metrics::ch_index(set.embeddings, set.labels);
  auto shuffled = set.labels;
  Rng rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(ch >= 10.0 * metrics::ch_index(set.embeddings, shuffled));
}

TEST_CASE("gen_audio: AR(1) walk with unit stationary variance") {
  Rng rng(4);
  const Matrix a = gen_audio(20000, 2, 0.85, rng);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, lag = 0;
    for (std::size_t t = 0; t < a.rows(); ++t) m += a(t, c) / a.rows();
    for (std::size_t t = 0; t < a.rows(); ++t) v += (a(t, c) - m) * (a(t, c) - m) / a.rows();
    for (std::size_t t = 1; t < a.rows(); ++t) lag += (a(t, c) - m) * (a(t - 1, c) - m) / (a.rows() - 1);
    CHECK(v == doctest::Approx(1.0).epsilon(0.1));
    CHECK(lag / v == doctest::Approx(0.85).epsilon(0.05));
  }
}

TEST_CASE("derived_seed separates streams and indices") {
  CHECK(derived_seed(1, 2, 3) == derived_seed(1, 2, 3));
  CHECK(derived_seed(1, 2, 3) != derived_seed(1, 2, 4));
  CHECK(derived_seed(1, 2, 3) != derived_seed(1, 3, 3));
  CHECK(derived_seed(1, 2, 3) != derived_seed(2, 2, 3));
}

TEST_CASE("gen_dataset: deterministic and f32-exact") {
  auto cfg = test::tiny_config();
  const auto a = gen_dataset(cfg.synth, cfg.model), b = gen_dataset(cfg.synth, cfg.model);
  check_same_samples(a, b);
  for (const auto& s : a.samples) {
    for (double x : s.params_gt.data()) CHECK(x == static_cast<double>(static_cast<float>(x)));
    for (double x : s.audio.data()) CHECK(x == static_cast<double>(static_cast<float>(x)));
    CHECK(std::all_of(s.mask.begin(), s.mask.end(), [](bool m) { return m; }));
  }
  const auto& s = a.samples[3];
  const auto again = gen_sample(a.config, a.world, a.model, s.e_gt, s.label, 3);
  CHECK(again.params_gt == s.params_gt);
  CHECK(again.audio == s.audio);
}

TEST_CASE("gen_dataset: beta is the identity row, stratified split") {
  SynthConfig cfg;
  const auto ds = gen_dataset(cfg, face::SyntheticModelConfig{});
  CHECK(ds.samples.size() == 120);
  CHECK(ds.train_indices.size() == 96);
  CHECK(ds.eval_indices.size() == 24);
  std::vector<std::size_t> per_class(3, 0);
  for (auto i : ds.eval_indices) ++per_class[ds.samples[i].label];
  CHECK(per_class == std::vector<std::size_t>{8, 8, 8});
  auto all = ds.train_indices;
  all.insert(all.end(), ds.eval_indices.begin(), ds.eval_indices.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  for (const auto& s : ds.samples)
    for (std::size_t t = 0; t < s.params_gt.rows(); ++t)
      for (std::size_t j = 0; j < ds.model.n_id(); ++j) CHECK(s.params_gt(t, j) == ds.world.identities(s.identity, j));
}

TEST_CASE("gen_dataset: zero articulation gives temporally constant psi") {
  auto cfg = test::tiny_config();
  cfg.synth.articulation_gain = 0.0;
  const auto ds = gen_dataset(cfg.synth, cfg.model);
  for (const auto& s : ds.samples) {
    const Matrix psi = psi_block(ds, s);
    for (std::size_t t = 1; t < psi.rows(); ++t)
      for (std::size_t j = 0; j < psi.cols(); ++j) CHECK(psi(t, j) == psi(0, j));
    Matrix expr_only = s.params_gt;
    for (std::size_t t = 0; t < expr_only.rows(); ++t)
      for (std::size_t j = 0; j < expr_only.cols(); ++j)
        if (j < ds.model.n_id() || j >= ds.model.n_id() + ds.model.n_exp()) expr_only(t, j) = 0.0;
    const auto mesh = face::decode_sequence(ds.model, expr_only);
    CHECK(losses::velocity_loss(mesh, mesh) == 0.0);
    CHECK(losses::velocity_loss(mesh, face::MeshSequence{Matrix(mesh.frames.rows(), mesh.frames.cols())}) <= 1e-20);
  }
}

TEST_CASE("gen_dataset: expression means cluster by class, articulation does not") {
  SynthConfig cfg;
  const auto ds = gen_dataset(cfg, face::SyntheticModelConfig{});
  std::vector<Matrix> seqs;
  std::vector<std::size_t> labels;
  for (const auto& s : ds.samples) {
    seqs.push_back(s.params_gt);
    labels.push_back(s.label);
  }
  const Matrix means = metrics::sequence_expression_means(seqs, ds.model.n_id(), ds.model.n_id() + ds.model.n_exp());
  auto shuffled = labels;
  Rng rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(metrics::ch_index(means, labels) >= 10.0 * metrics::ch_index(means, shuffled));

  // Per-frame articulation residuals ψ(t) − mean_t ψ, labeled by class.
  Matrix resid(ds.samples.size() * cfg.frames, ds.model.n_exp());
  std::vector<std::size_t> frame_labels;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Matrix psi = psi_block(ds, ds.samples[i]);
    for (std::size_t t = 0; t < cfg.frames; ++t) {
      for (std::size_t j = 0; j < psi.cols(); ++j) resid(i * cfg.frames + t, j) = psi(t, j) - means(i, j);
      frame_labels.push_back(ds.samples[i].label);
    }
  }
  CHECK(metrics::ch_index(resid, frame_labels) <= 1.5);
}

TEST_CASE("dataset save/load round-trip and manifest count") {
  auto cfg = test::tiny_config();
  const auto ds = gen_dataset(cfg.synth, cfg.model);
  const auto dir = test::scratch_dir("dataset");
  save_dataset(ds, dir / "d");
  const auto back = load_dataset(dir / "d");
  check_same_samples(ds, back);
  const auto manifest = nlohmann::json::parse(io::read_text(dir / "d" / "manifest.json"));
  CHECK(manifest.at("sample_count") == cfg.synth.classes * cfg.synth.per_class);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "d" / "samples")) files += e.is_regular_file();
  CHECK(files == cfg.synth.classes * cfg.synth.per_class);

  // Rewriting gives byte-identical files.
  save_dataset(ds, dir / "e");
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "d")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "d");
    CHECK(io::read_file(e.path()) == io::read_file(dir / "e" / rel));
  }

  auto bytes = io::read_file(dir / "d" / "samples" / "000002.eets");
  bytes[bytes.size() / 2] ^= 0x40;
  io::write_file(dir / "d" / "samples" / "000002.eets", bytes);
  CHECK_THROWS_AS(load_dataset(dir / "d"), Error);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), Error);
}

TEST_CASE("SynthConfig validation and JSON strictness") {
  SynthConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.classes = 1;
  bad.class_names = {"x"};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.separation = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.class_names = {"a", "b"};
  CHECK_THROWS_AS(bad.validate(), Error);

  const auto j = config_to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  auto extra = j;
  extra["bogus"] = 1;
  CHECK_THROWS_AS(config_from_json(extra), Error);
  auto wrong = j;
  wrong["frames"] = "many";
  CHECK_THROWS_AS(config_from_json(wrong), Error);
  CHECK(model_config_to_json(model_config_from_json(model_config_to_json({}))) == model_config_to_json({}));
}
