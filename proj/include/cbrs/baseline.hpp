#pragma once

#include <string_view>
#include <vector>

#include "cbrs/corpus.hpp"
#include "cbrs/textrep.hpp"

namespace cbrs {

struct LogRegConfig {
  double lr = 2.0;
  unsigned epochs = 300;
  double l2 = 1e-4;
  double positive_weight = 1.0;
  double threshold = 0.5;
};

// Baseline filter: TF-IDF features into an L2-regularized logistic
// regression, fit by full-batch gradient descent.
class TfidfLogReg {
 public:
  static TfidfLogReg train(const Corpus& corpus, const LogRegConfig& cfg = {});

  double p_positive(std::string_view text) const;
  int predict(std::string_view text) const { return p_positive(text) >= cfg_.threshold ? 1 : 0; }

  const TfidfVocabulary& vocabulary() const { return vocab_; }

 private:
  LogRegConfig cfg_;
  TfidfVocabulary vocab_;
  std::vector<double> weights_;
  double bias_ = 0.0;
};

}  // namespace cbrs
