#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbrs/corpus.hpp"
#include "cbrs/random.hpp"

// Seeded generators for the bundled bilingual message corpora.
namespace cbrs::synth {

struct Message {
  std::string text;
  int label = 0;
  Language language = Language::unknown;
  std::string kind;  // request, chat, appreciation, offer, adversarial
};

// One generated message of the given kind.
Message request(Rng& rng);
Message chat(Rng& rng);
Message appreciation(Rng& rng);
Message offer(Rng& rng);
Message adversarial(Rng& rng);

// size messages, round(size * positive_rate) of them requests; negatives mix
// chit-chat with appreciation posts, donor offers and adversarial texts.
// Texts are unique after normalization.
Corpus imbalanced(size_t size, double positive_rate, uint64_t seed);

// Requests against plain chit-chat only.
Corpus separable(size_t size, double positive_rate, uint64_t seed);

// A message stream of chit-chat with `requests` requests spread through it.
Corpus stream(size_t size, size_t requests, uint64_t seed);

}  // namespace cbrs::synth
