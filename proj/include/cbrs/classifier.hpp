#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "cbrs/corpus.hpp"
#include "cbrs/random.hpp"
#include "cbrs/textrep.hpp"

// Layer-1 filter: hashed subword embedding bag, a two-way linear head and a
// softmax, trained by SGD on the class-weighted cross-entropy.
namespace cbrs {

struct Hyperparams {
  uint32_t dim = 100;
  uint32_t buckets = 1u << 21;
  int32_t minn = 3;
  int32_t maxn = 6;
  int32_t word_ngrams = 3;
  double alpha = 12.0;  // weight on the positive-class loss term
  double lr = 1.0;
  uint32_t epochs = 1000;
  double threshold = 0.5;
  uint64_t seed = 1;

  SubwordConfig subword() const {
    return {minn, maxn, word_ngrams, buckets};
  }
  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

template <class Real>
struct BasicClassifier {
  Hyperparams hyper;
  EmbeddingTable<Real> embeddings;  // buckets x dim
  std::vector<Real> weights;        // 2 x dim, row-major
  std::array<Real, 2> bias{};

  BasicClassifier() = default;
  explicit BasicClassifier(const Hyperparams& h)
      : hyper(h), embeddings(h.buckets, h.dim), weights(2 * static_cast<size_t>(h.dim), Real(0)) {}

  size_t dim() const { return embeddings.dim; }
  std::span<const Real> weight_row(size_t c) const { return {weights.data() + c * dim(), dim()}; }
  std::span<Real> weight_row(size_t c) { return {weights.data() + c * dim(), dim()}; }

  std::array<double, 2> logits(std::span<const Real> hidden) const {
    std::array<double, 2> z{static_cast<double>(bias[0]), static_cast<double>(bias[1])};
    for (size_t c = 0; c < 2; ++c) {
      const auto w = weight_row(c);
      for (size_t k = 0; k < dim(); ++k) z[c] += static_cast<double>(w[k]) * static_cast<double>(hidden[k]);
    }
    return z;
  }

  bool finite() const {
    auto ok = [](Real v) { return std::isfinite(static_cast<double>(v)); };
    for (Real v : embeddings.data)
      if (!ok(v)) return false;
    for (Real v : weights)
      if (!ok(v)) return false;
    return ok(bias[0]) && ok(bias[1]);
  }
};

using ClassifierModel = BasicClassifier<float>;

struct Prediction {
  double p_positive = 0.5;
  int label = 1;
  std::array<double, 2> logits{};
};

inline constexpr double kProbabilityEpsilon = 1e-12;

// Max-subtracted softmax over the two logits.
inline std::array<double, 2> softmax(const std::array<double, 2>& z) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m);
  const double e1 = std::exp(z[1] - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

// -alpha*y*ln(p) - (1-y)*ln(1-p), with p clamped to [eps, 1-eps].
inline double weighted_loss(double p_positive, int y, double alpha) {
  const double p = std::clamp(p_positive, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return y == 1 ? -alpha * std::log(p) : -std::log(1.0 - p);
}

inline int decide(double p_positive, double threshold) { return p_positive >= threshold ? 1 : 0; }

template <class Real>
Prediction forward(const BasicClassifier<Real>& model, const MessageFeatures& features) {
  const auto hidden = embed_message(features, model.embeddings);
  Prediction p;
  p.logits = model.logits(hidden);
  p.p_positive = softmax(p.logits)[1];
  p.label = decide(p.p_positive, model.hyper.threshold);
  return p;
}

template <class Real>
Prediction forward(const BasicClassifier<Real>& model, std::string_view text) {
  return forward(model, extract_features(classifier_tokens(text), model.hyper.subword()));
}

// Gradient of the weighted loss for one sample. Embedding gradients are
// listed per touched row (rows repeat if a unit occurs more than once).
struct SampleGradient {
  double loss = 0.0;
  std::array<double, 2> d_logits{};
  std::vector<double> d_weights;  // 2 x dim
  std::vector<double> d_hidden;   // dim
  std::vector<std::pair<uint32_t, double>> row_scales;  // d_row = scale * d_hidden
};

template <class Real>
SampleGradient sample_gradient(const BasicClassifier<Real>& model, const MessageFeatures& features, int y) {
  const size_t d = model.dim();
  SampleGradient g;
  const auto hidden = embed_message(features, model.embeddings);
  const auto z = model.logits(hidden);
  const auto p = softmax(z);
  const double w = y == 1 ? model.hyper.alpha : 1.0;
  g.loss = weighted_loss(p[1], y, model.hyper.alpha);
  for (int c = 0; c < 2; ++c) g.d_logits[c] = w * (p[c] - (c == y ? 1.0 : 0.0));
  g.d_weights.assign(2 * d, 0.0);
  g.d_hidden.assign(d, 0.0);
  for (size_t c = 0; c < 2; ++c) {
    const auto wr = model.weight_row(c);
    for (size_t k = 0; k < d; ++k) {
      g.d_weights[c * d + k] = g.d_logits[c] * static_cast<double>(hidden[k]);
      g.d_hidden[k] += g.d_logits[c] * static_cast<double>(wr[k]);
    }
  }
  const size_t parts = features.words.size() + features.ngrams.size();
  if (parts == 0) return g;
  const double inv_parts = 1.0 / static_cast<double>(parts);
  for (const auto& word : features.words)
    for (uint32_t idx : word) g.row_scales.emplace_back(idx, inv_parts / static_cast<double>(word.size()));
  for (uint32_t idx : features.ngrams) g.row_scales.emplace_back(idx, inv_parts);
  return g;
}

template <class Real>
void apply_gradient(BasicClassifier<Real>& model, const SampleGradient& g, double lr) {
  const size_t d = model.dim();
  for (size_t c = 0; c < 2; ++c) {
    auto wr = model.weight_row(c);
    for (size_t k = 0; k < d; ++k) wr[k] -= static_cast<Real>(lr * g.d_weights[c * d + k]);
    model.bias[c] -= static_cast<Real>(lr * g.d_logits[c]);
  }
  for (const auto& [idx, scale] : g.row_scales) {
    auto r = model.embeddings.row(idx);
    const double step = lr * scale;
    for (size_t k = 0; k < d; ++k) r[k] -= static_cast<Real>(step * g.d_hidden[k]);
  }
}

struct EncodedSample {
  MessageFeatures features;
  int label = 0;
};

std::vector<EncodedSample> encode_corpus(const Corpus& corpus, const SubwordConfig& cfg);

// Mean weighted loss over an encoded set.
template <class Real>
double mean_loss(const BasicClassifier<Real>& model, const std::vector<EncodedSample>& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : data) total += weighted_loss(forward(model, s.features).p_positive, s.label, model.hyper.alpha);
  return total / static_cast<double>(data.size());
}

template <class Real>
void initialize(BasicClassifier<Real>& model, Rng& rng) {
  const double bound = 1.0 / static_cast<double>(model.dim());
  for (auto& v : model.embeddings.data) v = static_cast<Real>(rng.uniform(-bound, bound));
  std::fill(model.weights.begin(), model.weights.end(), Real(0));
  model.bias = {Real(0), Real(0)};
}

using EpochCallback = std::function<void(uint32_t epoch, const ClassifierModel& model)>;

// Per-sample SGD with the learning rate decayed linearly from hyper.lr to 0.
// Throws DataError unless both labels are present.
ClassifierModel train(const Corpus& corpus, const Hyperparams& hyper, const EpochCallback& on_epoch = {});

// Compares the analytic gradient (weights, bias, touched embedding rows) with
// central differences of step h, in double precision. Returns the largest
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
double gradient_check(const ClassifierModel& model, const MessageFeatures& features, int y, double h = 1e-5);
double gradient_check(const BasicClassifier<double>& model, const MessageFeatures& features, int y,
                      double h = 1e-5);

// Binary model file: "CBRS1", version byte, hyperparameters, then
// little-endian float32 tensors E, W, b (row-major).
void save_model(const ClassifierModel& model, std::ostream& out);
void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(std::istream& in);
ClassifierModel load_model(const std::filesystem::path& path);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  size_t support = 0;
};

struct ClassReport {
  double accuracy = 0.0;
  std::array<ClassMetrics, 2> per_class{};
  ClassMetrics macro;
  ClassMetrics weighted;
  // confusion[gold][pred]
  std::array<std::array<size_t, 2>, 2> confusion{};
  double median_seconds = 0.0;
  double mean_seconds = 0.0;

  size_t false_negatives() const { return confusion[1][0]; }
  size_t false_positives() const { return confusion[0][1]; }
};

ClassReport report_from_labels(std::span<const int> gold, std::span<const int> predicted);

// Timing is the median wall-clock of single forward calls, cycling over the
// test texts until at least min_timed_calls calls have been made.
ClassReport classification_report(const std::function<int(std::string_view)>& predict, const Corpus& test,
                                  size_t min_timed_calls = 1000);
ClassReport classification_report(const ClassifierModel& model, const Corpus& test, size_t min_timed_calls = 1000);

}  // namespace cbrs
