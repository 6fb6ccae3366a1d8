#include "cbrs/baseline.hpp"

#include <cmath>

#include "cbrs/error.hpp"

namespace cbrs {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double dot(const std::vector<double>& w, const SparseVector& x) {
  double s = 0.0;
  for (const auto& [i, v] : x) s += w[i] * v;
  return s;
}

}  // namespace

TfidfLogReg TfidfLogReg::train(const Corpus& corpus, const LogRegConfig& cfg) {
  if (corpus.count_label(0) == 0 || corpus.count_label(1) == 0)
    throw DataError("training corpus must contain both labels");
  TfidfLogReg m;
  m.cfg_ = cfg;
  m.vocab_ = TfidfVocabulary::fit(corpus);
  m.weights_.assign(m.vocab_.size(), 0.0);

  std::vector<SparseVector> xs;
  xs.reserve(corpus.size());
  double total_weight = 0.0;
  for (const auto& s : corpus.samples) {
    xs.push_back(m.vocab_.transform(s.text));
    total_weight += s.label == 1 ? cfg.positive_weight : 1.0;
  }

  std::vector<double> grad(m.weights_.size());
  for (unsigned epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_bias = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      const int y = corpus.samples[i].label;
      const double w = y == 1 ? cfg.positive_weight : 1.0;
      const double err = w * (sigmoid(dot(m.weights_, xs[i]) + m.bias_) - y) / total_weight;
      for (const auto& [j, v] : xs[i]) grad[j] += err * v;
      grad_bias += err;
    }
    for (size_t j = 0; j < grad.size(); ++j) m.weights_[j] -= cfg.lr * (grad[j] + cfg.l2 * m.weights_[j]);
    m.bias_ -= cfg.lr * grad_bias;
  }
  return m;
}

double TfidfLogReg::p_positive(std::string_view text) const {
  return sigmoid(dot(weights_, vocab_.transform(text)) + bias_);
}

}  // namespace cbrs
