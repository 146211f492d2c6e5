#pragma once

// Emotion-manifold editing: a softmax-regression boundary model over emotion
// embeddings, the dictionary of unit boundary normals derived from it, and
// additive single/multi-direction edits along those normals.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "eet/numerics.hpp"

namespace eet::manifold {

using Embedding = std::vector<double>;

struct LabeledEmbeddingSet {
  Matrix embeddings;  // N×d
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;

  std::size_t class_count() const { return class_names.size(); }
  std::size_t dim() const { return embeddings.cols(); }
  void validate() const;
  /// Per-class mean embedding, K×d.
  Matrix centroids() const;
};

struct ClassifierConfig {
  double l2 = 1e-3;
  double lr = 0.5;
  std::size_t max_iters = 2000;
  double tol = 1e-8;
  std::uint64_t seed = 0;
};

struct LinearClassifier {
  Matrix W;  // K×d, row k = w_k
  std::vector<double> b;
  struct Meta {
    std::size_t iterations = 0;
    double final_loss = 0.0;
    double l2 = 0.0;
    std::uint64_t seed = 0;
  } meta;

  std::size_t class_count() const { return W.rows(); }
  std::size_t dim() const { return W.cols(); }
  /// f_k(e) = w_kᵀe + b_k
  double score(std::size_t k, std::span<const double> e) const;
};

LinearClassifier train_classifier(const LabeledEmbeddingSet& set, const ClassifierConfig& cfg);

struct Classification {
  std::vector<double> logits;
  std::vector<double> probs;
  std::size_t argmax = 0;
};

Classification classify(std::span<const double> e, const LinearClassifier& clf);
double training_accuracy(const LabeledEmbeddingSet& set, const LinearClassifier& clf);

/// Hex SHA-256 of K, d (u32 LE) followed by W then b as f64 LE.
std::string classifier_digest(const LinearClassifier& clf);

struct EditVectorDictionary {
  LinearClassifier classifier;
  Matrix class_directions;  // K×d unit rows v_k
  std::map<std::pair<std::size_t, std::size_t>, Embedding> pairwise_directions;
  std::vector<double> w_norms;
  std::vector<std::string> class_names;
  std::string classifier_digest;
  std::vector<std::string> warnings;

  std::size_t class_count() const { return class_directions.rows(); }
  std::size_t dim() const { return class_directions.cols(); }
  std::size_t class_index(const std::string& name) const;
};

EditVectorDictionary build_dictionary(const LinearClassifier& clf, std::vector<std::string> class_names);

/// An editing direction: a per-class normal v_k or a pairwise normal v_{i→j}.
using Direction = std::variant<std::size_t, std::pair<std::size_t, std::size_t>>;

struct Edit {
  Direction direction;
  double alpha = 0.0;
};

struct EditRequest {
  Embedding base;
  std::vector<Edit> edits;
};

Embedding direction_vector(const EditVectorDictionary& dict, const Direction& d);
/// e_orig + Σ α·v(direction)
Embedding edit(const EditRequest& req, const EditVectorDictionary& dict);

struct CrossoverScan {
  std::optional<double> crossover_alpha;  // first α with argmax = target
  bool returned_to_source = false;        // argmax = source again after the crossover
  std::vector<std::size_t> argmax_path;
};

/// Scans α ∈ [0, alpha_max] (inclusive, fixed step) along v_{source→target}
/// starting from `base`, recording argmax of the dictionary's classifier.
CrossoverScan scan_crossover(const EditVectorDictionary& dict, std::span<const double> base,
                             std::size_t source, std::size_t target, double alpha_max, double step);

std::string dictionary_to_json(const EditVectorDictionary& dict);
EditVectorDictionary dictionary_from_json(const std::string& text);
void save_dictionary(const EditVectorDictionary& dict, const std::filesystem::path& path);
/// Loads and verifies the classifier digest.
EditVectorDictionary load_dictionary(const std::filesystem::path& path);

}  // namespace eet::manifold
