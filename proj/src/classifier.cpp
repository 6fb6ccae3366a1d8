#include "cbrs/classifier.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "cbrs/error.hpp"

namespace cbrs {

std::vector<EncodedSample> encode_corpus(const Corpus& corpus, const SubwordConfig& cfg) {
  std::vector<EncodedSample> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.samples) out.push_back({extract_features(classifier_tokens(s.text), cfg), s.label});
  return out;
}

ClassifierModel train(const Corpus& corpus, const Hyperparams& hyper, const EpochCallback& on_epoch) {
  if (corpus.count_label(0) == 0 || corpus.count_label(1) == 0)
    throw DataError("training corpus must contain both labels (got " + std::to_string(corpus.count_label(0)) +
                    " negatives, " + std::to_string(corpus.count_label(1)) + " positives)");
  if (!(hyper.alpha > 0.0)) throw DataError("alpha must be positive");
  if (hyper.dim == 0 || hyper.buckets == 0) throw DataError("dim and buckets must be positive");

  ClassifierModel model(hyper);
  Rng rng(hyper.seed);
  initialize(model, rng);

  const auto data = encode_corpus(corpus, hyper.subword());
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  const double total_steps = static_cast<double>(hyper.epochs) * static_cast<double>(data.size());
  double step = 0.0;
  for (uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t i : order) {
      const double lr = hyper.lr * (1.0 - step / total_steps);
      step += 1.0;
      apply_gradient(model, sample_gradient(model, data[i].features, data[i].label), lr);
    }
    if (on_epoch) on_epoch(epoch + 1, model);
  }
  return model;
}

namespace {

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

double loss_of(const BasicClassifier<double>& model, const MessageFeatures& f, int y) {
  return weighted_loss(forward(model, f).p_positive, y, model.hyper.alpha);
}

}  // namespace

double gradient_check(const BasicClassifier<double>& model, const MessageFeatures& features, int y, double h) {
  const size_t d = model.dim();
  const auto g = sample_gradient(model, features, y);

  std::map<uint32_t, std::vector<double>> row_grads;
  for (const auto& [idx, scale] : g.row_scales) {
    auto& acc = row_grads[idx];
    acc.resize(d, 0.0);
    for (size_t k = 0; k < d; ++k) acc[k] += scale * g.d_hidden[k];
  }

  auto probe = BasicClassifier<double>(model);
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss_of(probe, features, y);
    param = saved - h;
    const double down = loss_of(probe, features, y);
    param = saved;
    worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h)));
  };

  for (size_t i = 0; i < probe.weights.size(); ++i) check(probe.weights[i], g.d_weights[i]);
  for (size_t c = 0; c < 2; ++c) check(probe.bias[c], g.d_logits[c]);
  for (const auto& [idx, grad] : row_grads) {
    auto row = probe.embeddings.row(idx);
    for (size_t k = 0; k < d; ++k) check(row[k], grad[k]);
  }
  return worst;
}

double gradient_check(const ClassifierModel& model, const MessageFeatures& features, int y, double h) {
  // Copy only the touched rows into a compact double-precision model.
  std::map<uint32_t, uint32_t> remap;
  auto map_index = [&](uint32_t idx) {
    return remap.emplace(idx, static_cast<uint32_t>(remap.size())).first->second;
  };
  MessageFeatures local;
  for (const auto& word : features.words) {
    auto& w = local.words.emplace_back();
    for (uint32_t idx : word) w.push_back(map_index(idx));
  }
  for (uint32_t idx : features.ngrams) local.ngrams.push_back(map_index(idx));

  Hyperparams hyper = model.hyper;
  hyper.buckets = std::max<uint32_t>(1, static_cast<uint32_t>(remap.size()));
  BasicClassifier<double> compact(hyper);
  for (const auto& [global, row] : remap) {
    const auto src = model.embeddings.row(global);
    auto dst = compact.embeddings.row(row);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  std::copy(model.weights.begin(), model.weights.end(), compact.weights.begin());
  compact.bias = {model.bias[0], model.bias[1]};
  return gradient_check(compact, local, y, h);
}

namespace {

constexpr char kMagic[5] = {'C', 'B', 'R', 'S', '1'};
constexpr uint8_t kVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("model file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void put_floats(std::ostream& out, const std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) put(out, v);
  }
}

void get_floats(std::istream& in, std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto bytes = static_cast<std::streamsize>(values.size() * sizeof(float));
    if (!in.read(reinterpret_cast<char*>(values.data()), bytes)) throw DataError("model file truncated");
  } else {
    for (float& v : values) v = get<float>(in);
  }
}

}  // namespace

void save_model(const ClassifierModel& model, std::ostream& out) {
  const auto& h = model.hyper;
  out.write(kMagic, sizeof(kMagic));
  put<uint8_t>(out, kVersion);
  put<uint32_t>(out, h.dim);
  put<uint32_t>(out, h.buckets);
  put<int32_t>(out, h.minn);
  put<int32_t>(out, h.maxn);
  put<int32_t>(out, h.word_ngrams);
  put<double>(out, h.alpha);
  put<double>(out, h.lr);
  put<uint32_t>(out, h.epochs);
  put<double>(out, h.threshold);
  put<uint64_t>(out, h.seed);
  put_floats(out, model.embeddings.data);
  put_floats(out, model.weights);
  put<float>(out, model.bias[0]);
  put<float>(out, model.bias[1]);
  if (!out) throw Error("failed writing model");
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path.string());
  save_model(model, out);
}

ClassifierModel load_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a CBRS1 model file");
  const auto version = get<uint8_t>(in);
  if (version != kVersion) throw DataError("unsupported model version " + std::to_string(version));
  Hyperparams h;
  h.dim = get<uint32_t>(in);
  h.buckets = get<uint32_t>(in);
  h.minn = get<int32_t>(in);
  h.maxn = get<int32_t>(in);
  h.word_ngrams = get<int32_t>(in);
  h.alpha = get<double>(in);
  h.lr = get<double>(in);
  h.epochs = get<uint32_t>(in);
  h.threshold = get<double>(in);
  h.seed = get<uint64_t>(in);
  if (h.dim == 0 || h.buckets == 0 || h.minn < 1 || h.maxn < h.minn || h.word_ngrams < 1 || !(h.alpha > 0.0))
    throw DataError("model file has invalid hyperparameters");
  ClassifierModel model(h);
  get_floats(in, model.embeddings.data);
  get_floats(in, model.weights);
  model.bias[0] = get<float>(in);
  model.bias[1] = get<float>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("model file has trailing bytes");
  if (!model.finite()) throw DataError("model file contains non-finite parameters");
  return model;
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  return load_model(in);
}

ClassReport report_from_labels(std::span<const int> gold, std::span<const int> predicted) {
  ClassReport r;
  const size_t n = std::min(gold.size(), predicted.size());
  for (size_t i = 0; i < n; ++i) ++r.confusion[gold[i] == 1][predicted[i] == 1];
  if (n == 0) return r;
  r.accuracy = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / static_cast<double>(n);
  for (int c = 0; c < 2; ++c) {
    auto& m = r.per_class[c];
    const size_t tp = r.confusion[c][c];
    const size_t predicted_c = r.confusion[0][c] + r.confusion[1][c];
    m.support = r.confusion[c][0] + r.confusion[c][1];
    m.precision = predicted_c ? static_cast<double>(tp) / static_cast<double>(predicted_c) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  for (int c = 0; c < 2; ++c) {
    const auto& m = r.per_class[c];
    const double w = static_cast<double>(m.support) / static_cast<double>(n);
    r.macro.precision += m.precision / 2.0;
    r.macro.recall += m.recall / 2.0;
    r.macro.f1 += m.f1 / 2.0;
    r.weighted.precision += w * m.precision;
    r.weighted.recall += w * m.recall;
    r.weighted.f1 += w * m.f1;
  }
  r.macro.support = r.weighted.support = n;
  return r;
}

ClassReport classification_report(const std::function<int(std::string_view)>& predict, const Corpus& test,
                                  size_t min_timed_calls) {
  if (test.samples.empty()) throw DataError("classification report needs a non-empty test set");
  std::vector<int> gold, pred;
  for (const auto& s : test.samples) {
    gold.push_back(s.label);
    pred.push_back(predict(s.text));
  }
  auto report = report_from_labels(gold, pred);

  std::vector<double> seconds;
  const size_t calls = std::max(min_timed_calls, test.size());
  seconds.reserve(calls);
  volatile int sink = 0;
  for (size_t i = 0; i < calls; ++i) {
    const auto& text = test.samples[i % test.size()].text;
    const auto start = std::chrono::steady_clock::now();
    sink = sink + predict(text);
    const auto stop = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  report.mean_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  std::nth_element(seconds.begin(), seconds.begin() + static_cast<std::ptrdiff_t>(seconds.size() / 2), seconds.end());
  report.median_seconds = seconds[seconds.size() / 2];
  return report;
}

ClassReport classification_report(const ClassifierModel& model, const Corpus& test, size_t min_timed_calls) {
  return classification_report([&](std::string_view text) { return forward(model, text).label; }, test,
                               min_timed_calls);
}

}  // namespace cbrs
