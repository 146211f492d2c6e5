#include <cmath>
#include <numbers>

#include "doctest.h"
#include "util.hpp"

#include "eet/io.hpp"
#include "eet/manifold.hpp"
#include "eet/synthdata.hpp"

using namespace eet;
using namespace eet::manifold;

namespace {

LinearClassifier random_classifier(std::size_t k, std::size_t d, Rng& rng) {
  LinearClassifier clf;
  clf.W = gaussian(k, d, 1.0, rng);
  clf.b = gaussian(1, k, 1.0, rng).row_vector(0);
  return clf;
}

std::vector<std::string> names(std::size_t k) {
  std::vector<std::string> n;
  for (std::size_t i = 0; i < k; ++i) n.push_back("c" + std::to_string(i));
  return n;
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("train_classifier: two Gaussian blobs on the first axis") {
  Rng rng(7);
  const std::size_t d = 6, n = 50;
  LabeledEmbeddingSet set;
  set.embeddings = gaussian(2 * n, d, 1.0, rng);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    set.embeddings(i, 0) += i < n ? 5.0 : -5.0;
    set.labels.push_back(i < n ? 0 : 1);
  }
  set.class_names = {"pos", "neg"};
  const auto clf = train_classifier(set, {});
  CHECK(training_accuracy(set, clf) == 1.0);

  // w₁−w₀ points from class 0 (+axis) to class 1 (−axis): angle to −e₀ ≤ 5°.
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) diff[j] = clf.W(1, j) - clf.W(0, j);
  const double cos_angle = -diff[0] / norm(diff);
  CHECK(std::acos(std::min(1.0, cos_angle)) <= 5.0 * std::numbers::pi / 180.0);
}

TEST_CASE("train_classifier: identical copies per class are separated") {
  LabeledEmbeddingSet set;
  set.embeddings = Matrix(9, 3);
  const double protos[3][3] = {{1, 0, 0}, {0, 2, 0}, {-1, -1, 1}};
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 3; ++j) set.embeddings(i, j) = protos[i / 3][j];
    set.labels.push_back(i / 3);
  }
  set.class_names = names(3);
  CHECK(training_accuracy(set, train_classifier(set, {})) == 1.0);
}

TEST_CASE("train_classifier: precondition errors") {
  LabeledEmbeddingSet set;
  set.embeddings = Matrix(3, 2, 1.0);
  set.labels = {0, 0, 0};
  set.class_names = {"only"};
  CHECK_THROWS_WITH_AS(train_classifier(set, {}), "need at least two classes", Error);
  set.class_names = {"a", "b"};
  CHECK_THROWS_AS(train_classifier(set, {}), Error);  // class 1 has no samples
}

TEST_CASE("train_classifier: deterministic, bit-identical dictionaries") {
  synth::SynthConfig cfg;
  const auto set = gen_embeddings(cfg);
  const auto a = build_dictionary(train_classifier(set, {}), cfg.class_names);
  const auto b = build_dictionary(train_classifier(set, {}), cfg.class_names);
  CHECK(a.classifier.W == b.classifier.W);
  CHECK(a.classifier.b == b.classifier.b);
  CHECK(dictionary_to_json(a) == dictionary_to_json(b));
}

TEST_CASE("classify: zero classifier ties to class 0; centroids classify correctly") {
  LinearClassifier zero;
  zero.W = Matrix(3, 4);
  zero.b = {0, 0, 0};
  const auto c = classify(std::vector<double>(4, 1.0), zero);
  CHECK(c.argmax == 0);
  for (double p : c.probs) CHECK(std::abs(p - 1.0 / 3.0) <= 1e-15);
  CHECK_THROWS_AS(classify(std::vector<double>(3), zero), Error);

  synth::SynthConfig cfg;
  const auto set = gen_embeddings(cfg);
  const auto clf = train_classifier(set, {});
  const Matrix centroids = set.centroids();
  for (std::size_t k = 0; k < cfg.classes; ++k) CHECK(classify(centroids.row_span(k), clf).argmax == k);
}

TEST_CASE("build_dictionary: analytic normal and unit norms") {
  LinearClassifier clf;
  clf.W = Matrix(2, 4);
  clf.W(0, 0) = 3;
  clf.W(0, 1) = 4;
  clf.W(1, 2) = -2;
  clf.b = {0.1, -0.3};
  const auto dict = build_dictionary(clf, names(2));
  CHECK(dict.class_directions(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(dict.class_directions(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(dict.class_directions(0, 2) == 0.0);
  CHECK(dict.w_norms[0] == doctest::Approx(5.0).epsilon(1e-15));

  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = build_dictionary(random_classifier(4, 7, rng), names(4));
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(norm(d.class_directions.row_span(k)) - 1.0) <= 1e-9);
  }
}

TEST_CASE("build_dictionary: pairwise normals match brute force and are antisymmetric") {
  Rng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const auto clf = random_classifier(4, 6, rng);
    const auto dict = build_dictionary(clf, names(4));
    CHECK(dict.pairwise_directions.size() == 12);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        if (i == j) continue;
        std::vector<double> v(6);
        long double n = 0;
        for (std::size_t c = 0; c < 6; ++c) {
          v[c] = clf.W(j, c) - clf.W(i, c);
          n += static_cast<long double>(v[c]) * v[c];
        }
        const auto& got = dict.pairwise_directions.at({i, j});
        const auto& back = dict.pairwise_directions.at({j, i});
        for (std::size_t c = 0; c < 6; ++c) {
          CHECK(std::abs(got[c] - static_cast<double>(v[c] / std::sqrt(n))) <= 1e-12);
          CHECK(std::abs(got[c] + back[c]) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("build_dictionary: degenerate rows and equal pairs") {
  LinearClassifier clf;
  clf.W = Matrix(3, 2);
  clf.W(0, 0) = 1;
  clf.W(1, 1) = 1;
  clf.b = {0, 0, 0};
  CHECK_THROWS_WITH_AS(build_dictionary(clf, names(3)), "degenerate boundary normal for class 2", Error);
  clf.W(2, 1) = 1;  // w₁ = w₂
  const auto dict = build_dictionary(clf, names(3));
  CHECK_FALSE(dict.pairwise_directions.contains({1, 2}));
  CHECK_FALSE(dict.pairwise_directions.contains({2, 1}));
  CHECK_FALSE(dict.warnings.empty());
}

TEST_CASE("edit: identity, inverse, composition, linearity and logit shift") {
  Rng rng(41);
  std::uniform_real_distribution<double> alpha(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto dict = build_dictionary(random_classifier(3, 5, rng), names(3));
    const auto base = test::random_vector(5, rng);
    const std::size_t k = static_cast<std::size_t>(trial % 3);
    const double a1 = alpha(rng), a2 = alpha(rng);

    CHECK(edit({base, {{k, 0.0}, {std::make_pair<std::size_t, std::size_t>(0, 1), 0.0}}}, dict) == base);

    const auto inv = edit({base, {{k, a1}, {k, -a1}}}, dict);
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(inv[c] - base[c]) <= 1e-12);

    const auto step = edit({edit({base, {{k, a1}}}, dict), {{k, a2}}}, dict);
    const auto once = edit({base, {{k, a1 + a2}}}, dict);
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(step[c] - once[c]) <= 1e-12);

    const auto ab = edit({base, {{k, a1}, {(k + 1) % 3, a2}}}, dict);
    const auto ba = edit({base, {{(k + 1) % 3, a2}, {k, a1}}}, dict);
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(ab[c] - ba[c]) <= 1e-12);

    const double f0 = dict.classifier.score(k, base);
    for (double a : {-2.0, -1.0, 0.0, 1.0, 2.0, a1}) {
      const double fa = dict.classifier.score(k, edit({base, {{k, a}}}, dict));
      CHECK(std::abs((fa - f0) - a * dict.w_norms[k]) <= 1e-9);
    }
  }
}

TEST_CASE("edit: errors") {
  Rng rng(42);
  const auto dict = build_dictionary(random_classifier(3, 4, rng), names(3));
  CHECK_THROWS_AS(edit({std::vector<double>(3), {}}, dict), Error);
  CHECK_THROWS_AS(edit({std::vector<double>(4), {{std::size_t{3}, 1.0}}}, dict), Error);
  CHECK_THROWS_AS(edit({std::vector<double>(4), {{std::size_t{0}, std::nan("")}}}, dict), Error);
  CHECK_THROWS_AS(edit({std::vector<double>(4), {{std::make_pair<std::size_t, std::size_t>(1, 1), 1.0}}}, dict),
                  Error);
}

TEST_CASE("scan_crossover: every ordered pair on the default synthetic set") {
  synth::SynthConfig cfg;
  const auto set = gen_embeddings(cfg);
  const auto dict = build_dictionary(train_classifier(set, {}), cfg.class_names);
  const Matrix centroids = set.centroids();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      const auto scan = scan_crossover(dict, centroids.row_span(i), i, j, 3.0, 0.05);
      REQUIRE(scan.crossover_alpha.has_value());
      CHECK_FALSE(scan.returned_to_source);
      CHECK(scan.argmax_path.front() == i);
      CHECK(scan.argmax_path.size() == 61);
    }
  }
}

TEST_CASE("dictionary JSON round-trip and digest verification") {
  Rng rng(51);
  const auto dict = build_dictionary(random_classifier(3, 5, rng), {"neutral", "happy", "sad"});
  const auto back = dictionary_from_json(dictionary_to_json(dict));
  CHECK(back.classifier.W == dict.classifier.W);
  CHECK(back.classifier.b == dict.classifier.b);
  CHECK(back.class_directions == dict.class_directions);
  CHECK(back.pairwise_directions == dict.pairwise_directions);
  CHECK(back.w_norms == dict.w_norms);
  CHECK(back.class_names == dict.class_names);
  CHECK(back.class_index("sad") == 2);
  CHECK_THROWS_AS(back.class_index("angry"), Error);

  const auto dir = test::scratch_dir("dict");
  save_dictionary(dict, dir / "d.json");
  CHECK(load_dictionary(dir / "d.json").classifier_digest == dict.classifier_digest);

  auto tampered = nlohmann::json::parse(io::read_text(dir / "d.json"));
  tampered["b"][0] = tampered["b"][0].get<double>() + 1.0;
  io::write_text(dir / "t.json", tampered.dump());
  CHECK_THROWS_AS(load_dictionary(dir / "t.json"), Error);
  io::write_text(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(load_dictionary(dir / "bad.json"), Error);
}
