#include "eet/manifold.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "eet/io.hpp"

namespace eet::manifold {

using nlohmann::json;

void LabeledEmbeddingSet::validate() const {
  const std::size_t k = class_count();
  if (k < 2) throw Error("need at least two classes");
  if (dim() < 2) throw Error("embedding dimension must be at least 2");
  if (labels.size() != embeddings.rows()) throw Error("label count does not match embedding rows");
  if (!embeddings.all_finite()) throw Error("embeddings contain non-finite values");
  std::vector<std::size_t> counts(k, 0);
  for (auto y : labels) {
    if (y >= k) throw Error("label " + std::to_string(y) + " out of range");
    ++counts[y];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] == 0) throw Error("class " + std::to_string(c) + " has no samples");
}

Matrix LabeledEmbeddingSet::centroids() const {
  validate();
  Matrix c(class_count(), dim());
  std::vector<double> counts(class_count(), 0.0);
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    counts[labels[i]] += 1.0;
    for (std::size_t j = 0; j < dim(); ++j) c(labels[i], j) += embeddings(i, j);
  }
  for (std::size_t k = 0; k < class_count(); ++k)
    for (std::size_t j = 0; j < dim(); ++j) c(k, j) /= counts[k];
  return c;
}

double LinearClassifier::score(std::size_t k, std::span<const double> e) const {
  if (e.size() != dim()) throw Error("embedding dimension mismatch");
  double s = b[k];
  for (std::size_t j = 0; j < dim(); ++j) s += W(k, j) * e[j];
  return s;
}

LinearClassifier train_classifier(const LabeledEmbeddingSet& set, const ClassifierConfig& cfg) {
  if (set.class_count() < 2) throw Error("need at least two classes");
  set.validate();
  if (!(cfg.l2 >= 0.0) || !(cfg.lr > 0.0) || !std::isfinite(cfg.tol)) {
    throw Error("invalid classifier configuration");
  }
  const std::size_t n = set.embeddings.rows(), d = set.dim(), k = set.class_count();
  const double inv_n = 1.0 / static_cast<double>(n);

  LinearClassifier clf;
  clf.W = Matrix(k, d);
  clf.b.assign(k, 0.0);
  clf.meta.l2 = cfg.l2;
  clf.meta.seed = cfg.seed;

  Matrix gW(k, d);
  std::vector<double> gb(k);
  std::vector<double> logits(k);
  for (std::size_t iter = 0; iter <= cfg.max_iters; ++iter) {
    gW.fill(0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto e = set.embeddings.row_span(i);
      for (std::size_t c = 0; c < k; ++c) logits[c] = clf.score(c, e);
      auto p = softmax(logits);
      loss += cross_entropy(p, set.labels[i]);
      p[set.labels[i]] -= 1.0;
      for (std::size_t c = 0; c < k; ++c) {
        gb[c] += p[c] * inv_n;
        for (std::size_t j = 0; j < d; ++j) gW(c, j) += p[c] * e[j] * inv_n;
      }
    }
    loss = loss * inv_n + 0.5 * cfg.l2 * frobenius_sq(clf.W);
    if (!std::isfinite(loss)) throw Error("non-finite classifier loss at iteration " + std::to_string(iter));
    double gmax = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      gmax = std::max(gmax, std::abs(gb[c]));
      for (std::size_t j = 0; j < d; ++j) {
        gW(c, j) += cfg.l2 * clf.W(c, j);
        gmax = std::max(gmax, std::abs(gW(c, j)));
      }
    }
    clf.meta.iterations = iter;
    clf.meta.final_loss = loss;
    if (gmax < cfg.tol || iter == cfg.max_iters) break;
    for (std::size_t c = 0; c < k; ++c) {
      clf.b[c] -= cfg.lr * gb[c];
      for (std::size_t j = 0; j < d; ++j) clf.W(c, j) -= cfg.lr * gW(c, j);
    }
  }
  return clf;
}

Classification classify(std::span<const double> e, const LinearClassifier& clf) {
  if (e.size() != clf.dim()) throw Error("embedding dimension mismatch");
  Classification out;
  out.logits.resize(clf.class_count());
  for (std::size_t k = 0; k < clf.class_count(); ++k) out.logits[k] = clf.score(k, e);
  out.probs = softmax(out.logits);
  // max_element returns the first maximum, i.e. lowest index on ties.
  out.argmax = static_cast<std::size_t>(
      std::distance(out.logits.begin(), std::max_element(out.logits.begin(), out.logits.end())));
  return out;
}

double training_accuracy(const LabeledEmbeddingSet& set, const LinearClassifier& clf) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.embeddings.rows(); ++i)
    if (classify(set.embeddings.row_span(i), clf).argmax == set.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(set.embeddings.rows());
}

std::string classifier_digest(const LinearClassifier& clf) {
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(clf.class_count()));
  w.u32(static_cast<std::uint32_t>(clf.dim()));
  for (double x : clf.W.data()) w.u64(std::bit_cast<std::uint64_t>(x));
  for (double x : clf.b) w.u64(std::bit_cast<std::uint64_t>(x));
  return io::sha256_hex(w.bytes());
}

std::size_t EditVectorDictionary::class_index(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it == class_names.end()) throw Error("unknown class label: " + name);
  return static_cast<std::size_t>(it - class_names.begin());
}

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

EditVectorDictionary build_dictionary(const LinearClassifier& clf, std::vector<std::string> class_names) {
  const std::size_t k = clf.class_count(), d = clf.dim();
  if (class_names.size() != k) throw Error("class name count does not match the classifier");
  EditVectorDictionary dict;
  dict.classifier = clf;
  dict.class_names = std::move(class_names);
  dict.class_directions = Matrix(k, d);
  dict.w_norms.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double n = norm2(clf.W.row_span(c));
    if (!(n > 1e-12)) throw Error("degenerate boundary normal for class " + std::to_string(c));
    dict.w_norms[c] = n;
    for (std::size_t j = 0; j < d; ++j) dict.class_directions(c, j) = clf.W(c, j) / n;
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      Embedding v(d);
      for (std::size_t c = 0; c < d; ++c) v[c] = clf.W(j, c) - clf.W(i, c);
      const double n = norm2(v);
      if (!(n > 0.0)) {
        const std::string msg = "identical boundary normals for classes " + std::to_string(i) + " and " +
                                std::to_string(j) + "; pair omitted";
        spdlog::warn("{}", msg);
        dict.warnings.push_back(msg);
        continue;
      }
      for (auto& x : v) x /= n;
      dict.pairwise_directions.emplace(std::make_pair(i, j), std::move(v));
    }
  dict.classifier_digest = classifier_digest(clf);
  return dict;
}

Embedding direction_vector(const EditVectorDictionary& dict, const Direction& d) {
  if (const auto* k = std::get_if<std::size_t>(&d)) {
    if (*k >= dict.class_count()) throw Error("edit direction index " + std::to_string(*k) + " out of range");
    return dict.class_directions.row_vector(*k);
  }
  const auto& pair = std::get<std::pair<std::size_t, std::size_t>>(d);
  auto it = dict.pairwise_directions.find(pair);
  if (it == dict.pairwise_directions.end()) {
    throw Error("no pairwise direction " + std::to_string(pair.first) + "->" + std::to_string(pair.second));
  }
  return it->second;
}

Embedding edit(const EditRequest& req, const EditVectorDictionary& dict) {
  if (req.base.size() != dict.dim()) {
    throw Error("embedding dimension " + std::to_string(req.base.size()) + " does not match dictionary dimension " +
                std::to_string(dict.dim()));
  }
  Embedding out = req.base;
  for (const Edit& e : req.edits) {
    if (!std::isfinite(e.alpha)) throw Error("edit alpha must be finite");
    const Embedding v = direction_vector(dict, e.direction);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += e.alpha * v[j];
  }
  return out;
}

CrossoverScan scan_crossover(const EditVectorDictionary& dict, std::span<const double> base,
                             std::size_t source, std::size_t target, double alpha_max, double step) {
  if (!(step > 0.0)) throw Error("scan step must be positive");
  const Embedding v = direction_vector(dict, std::make_pair(source, target));
  CrossoverScan scan;
  const auto n_steps = static_cast<std::size_t>(std::llround(alpha_max / step));
  Embedding e(base.size());
  for (std::size_t s = 0; s <= n_steps; ++s) {
    const double alpha = static_cast<double>(s) * step;
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = base[j] + alpha * v[j];
    const std::size_t am = classify(e, dict.classifier).argmax;
    scan.argmax_path.push_back(am);
    if (!scan.crossover_alpha && am == target) scan.crossover_alpha = alpha;
    if (scan.crossover_alpha && am == source) scan.returned_to_source = true;
  }
  return scan;
}

std::string dictionary_to_json(const EditVectorDictionary& dict) {
  const auto& clf = dict.classifier;
  auto matrix_rows = [](const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
    return rows;
  };
  json pairs = json::array();
  for (const auto& [ij, v] : dict.pairwise_directions) pairs.push_back({{"i", ij.first}, {"j", ij.second}, {"v", v}});
  json j = {{"format", "eet-dict"},
            {"version", 1},
            {"d", dict.dim()},
            {"K", dict.class_count()},
            {"class_names", dict.class_names},
            {"W", matrix_rows(clf.W)},
            {"b", clf.b},
            {"class_directions", matrix_rows(dict.class_directions)},
            {"pairwise_directions", std::move(pairs)},
            {"w_norms", dict.w_norms},
            {"classifier_digest", dict.classifier_digest},
            {"training_meta",
             {{"iterations", clf.meta.iterations},
              {"final_loss", clf.meta.final_loss},
              {"l2", clf.meta.l2},
              {"seed", clf.meta.seed}}}};
  return j.dump(1);
}

EditVectorDictionary dictionary_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("dictionary is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "eet-dict" || j.at("version") != 1) throw Error("unsupported dictionary format");
    const std::size_t d = j.at("d"), k = j.at("K");
    auto read_matrix = [&](const json& rows) {
      Matrix m(k, d);
      if (rows.size() != k) throw Error("dictionary matrix row count mismatch");
      for (std::size_t r = 0; r < k; ++r) {
        const auto row = rows[r].get<std::vector<double>>();
        if (row.size() != d) throw Error("dictionary matrix column count mismatch");
        std::copy(row.begin(), row.end(), m.row_span(r).begin());
      }
      return m;
    };
    EditVectorDictionary dict;
    dict.class_names = j.at("class_names").get<std::vector<std::string>>();
    dict.classifier.W = read_matrix(j.at("W"));
    dict.classifier.b = j.at("b").get<std::vector<double>>();
    dict.class_directions = read_matrix(j.at("class_directions"));
    dict.w_norms = j.at("w_norms").get<std::vector<double>>();
    for (const auto& p : j.at("pairwise_directions")) {
      dict.pairwise_directions.emplace(std::make_pair(p.at("i").get<std::size_t>(), p.at("j").get<std::size_t>()),
                                       p.at("v").get<std::vector<double>>());
    }
    dict.classifier_digest = j.at("classifier_digest").get<std::string>();
    if (j.contains("training_meta")) {
      const auto& m = j["training_meta"];
      dict.classifier.meta = {m.at("iterations"), m.at("final_loss"), m.at("l2"), m.at("seed")};
    }
    if (dict.class_names.size() != k || dict.classifier.b.size() != k || dict.w_norms.size() != k) {
      throw Error("dictionary vector lengths do not match K");
    }
    return dict;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed dictionary: ") + e.what());
  }
}

void save_dictionary(const EditVectorDictionary& dict, const std::filesystem::path& path) {
  io::write_text(path, dictionary_to_json(dict));
}

EditVectorDictionary load_dictionary(const std::filesystem::path& path) {
  auto dict = dictionary_from_json(io::read_text(path));
  if (classifier_digest(dict.classifier) != dict.classifier_digest) {
    throw Error("dictionary digest mismatch: " + path.string());
  }
  return dict;
}

}  // namespace eet::manifold
