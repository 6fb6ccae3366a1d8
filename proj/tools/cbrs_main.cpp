#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "cbrs/classifier.hpp"
#include "cbrs/config.hpp"
#include "cbrs/evalkit.hpp"
#include "cbrs/gateway.hpp"
#include "cbrs/service.hpp"
#include "cbrs/synth.hpp"

namespace {

using namespace cbrs;

void add_hyper_options(CLI::App* cmd, Hyperparams& h) {
  cmd->add_option("--dim", h.dim, "embedding size")->capture_default_str();
  cmd->add_option("--buckets", h.buckets, "hash buckets")->capture_default_str();
  cmd->add_option("--minn", h.minn, "shortest character n-gram")->capture_default_str();
  cmd->add_option("--maxn", h.maxn, "longest character n-gram")->capture_default_str();
  cmd->add_option("--word-ngrams", h.word_ngrams, "longest word n-gram")->capture_default_str();
  cmd->add_option("--alpha", h.alpha, "weight on the positive-class loss")->capture_default_str();
  cmd->add_option("--lr", h.lr, "initial learning rate")->capture_default_str();
  cmd->add_option("--epochs", h.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--threshold", h.threshold, "decision threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--seed", h.seed, "training seed")->capture_default_str();
}

Corpus read_corpus(const std::string& path) {
  auto loaded = load_corpus(path);
  for (const auto& s : loaded.skipped)
    std::cerr << path << ":" << s.line_number << ": skipped (" << s.reason << ")\n";
  return std::move(loaded.corpus);
}

AppConfig config_or_default(const std::string& path) {
  if (path.empty()) return AppConfig{};
  return load_app_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blood-request filtering, parsing and donor dispatch"};
  app.require_subcommand(1);
  bool as_json = false;

  // train
  Hyperparams train_h;
  std::string train_corpus, train_out;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  uint64_t split_seed = 7;
  bool no_split = false;
  uint32_t log_every = 0;
  auto* train_cmd = app.add_subcommand("train", "train the Layer-1 classifier");
  train_cmd->add_option("--corpus", train_corpus, "labeled JSONL corpus")->required();
  train_cmd->add_option("--out", train_out, "model file to write")->required();
  add_hyper_options(train_cmd, train_h);
  train_cmd->add_option("--split", ratios, "train/val/test ratios")->expected(3);
  train_cmd->add_option("--split-seed", split_seed, "split seed")->capture_default_str();
  train_cmd->add_flag("--no-split", no_split, "train on the whole corpus");
  train_cmd->add_option("--log-every", log_every, "print mean loss every N epochs");

  // classify
  std::string classify_model, classify_input;
  std::vector<std::string> classify_texts;
  auto* classify_cmd = app.add_subcommand("classify", "score messages with a trained model");
  classify_cmd->add_option("--model", classify_model, "model file")->required();
  classify_cmd->add_option("--text", classify_texts, "message text (repeatable)");
  classify_cmd->add_option("--input", classify_input, "file with one message per line");

  // report
  std::string report_model, report_corpus;
  size_t timed_calls = 1000;
  auto* report_cmd = app.add_subcommand("report", "classification report of a model on a corpus");
  report_cmd->add_option("--model", report_model, "model file")->required();
  report_cmd->add_option("--corpus", report_corpus, "labeled JSONL corpus")->required();
  report_cmd->add_option("--timed-calls", timed_calls, "forward calls timed for latency")->capture_default_str();
  report_cmd->add_flag("--json", as_json, "JSON output");

  // eval-parse
  std::string goldset, parse_config;
  auto* eval_parse_cmd = app.add_subcommand("eval-parse", "score a Layer-2 backend against a gold set");
  eval_parse_cmd->add_option("--goldset", goldset, "gold JSONL")->required();
  eval_parse_cmd->add_option("--config", parse_config, "config selecting the backend (default: rules)");
  eval_parse_cmd->add_flag("--json", as_json, "JSON output");

  // eval-classify
  std::string compare_corpus;
  ComparisonOptions compare;
  compare.dlf.buckets = 1u << 18;
  compare.dlf.dim = 32;
  compare.dlf.epochs = 20;
  compare.dlf.lr = 0.5;
  std::string methods = "dlf,tfidf";
  auto* eval_classify_cmd = app.add_subcommand("eval-classify", "compare Layer-1 classifiers on one split");
  eval_classify_cmd->add_option("--corpus", compare_corpus, "labeled JSONL corpus")->required();
  add_hyper_options(eval_classify_cmd, compare.dlf);
  eval_classify_cmd->add_option("--methods", methods, "comma list of dlf, tfidf")->capture_default_str();
  eval_classify_cmd->add_option("--split-seed", compare.split_seed, "split seed")->capture_default_str();
  eval_classify_cmd->add_option("--timed-calls", compare.timed_calls, "forward calls timed")->capture_default_str();
  eval_classify_cmd->add_flag("--json", as_json, "JSON output");

  // cost
  uint64_t volume = 0, blood = 0;
  std::string unit_price = "0.0003";
  auto* cost_cmd = app.add_subcommand("cost", "daily Layer-2 cost with and without the Layer-1 gate");
  cost_cmd->add_option("--volume", volume, "messages per day")->required();
  cost_cmd->add_option("--blood", blood, "blood-request messages per day")->required();
  cost_cmd->add_option("--unit-price", unit_price, "dollars per Layer-2 call")->capture_default_str();
  cost_cmd->add_flag("--json", as_json, "JSON output");

  // serve
  std::string serve_config;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  serve_cmd->add_option("--config", serve_config, "config file")->required();

  // simulate
  std::string scenario, sim_config, transcript_out;
  auto* simulate_cmd = app.add_subcommand("simulate", "replay a scenario under a logical clock");
  simulate_cmd->add_option("--scenario", scenario, "scenario JSONL")->required();
  simulate_cmd->add_option("--config", sim_config, "config file");
  simulate_cmd->add_option("--transcript", transcript_out, "write the transcript here instead of stdout");

  // synth
  std::string synth_kind = "imbalanced", synth_out;
  size_t synth_size = 2000;
  double synth_rate = 0.05;
  uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  synth_cmd->add_option("--kind", synth_kind, "imbalanced, separable or stream")
      ->check(CLI::IsMember({"imbalanced", "separable", "stream"}))
      ->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "messages")->capture_default_str();
  synth_cmd->add_option("--rate", synth_rate, "share of requests")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output JSONL")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto corpus = read_corpus(train_corpus);
      Corpus train_part = corpus;
      std::optional<Split> parts;
      if (!no_split) {
        parts = split(corpus, ratios, split_seed);
        train_part = parts->train;
      }
      EpochCallback cb;
      if (log_every) {
        const auto encoded = encode_corpus(train_part, train_h.subword());
        cb = [&](uint32_t epoch, const ClassifierModel& m) {
          if ((epoch + 1) % log_every == 0)
            std::cerr << "epoch " << epoch + 1 << " loss " << mean_loss(m, encoded) << "\n";
        };
      }
      const auto model = train(train_part, train_h, cb);
      save_model(model, train_out);
      std::cout << "trained on " << train_part.size() << " samples, wrote " << train_out << "\n";
      if (parts && parts->val.size()) {
        const auto r = classification_report(model, parts->val, 0);
        std::cout << "validation: accuracy " << r.accuracy << ", F1(request) " << r.per_class[1].f1 << "\n";
      }
    } else if (*classify_cmd) {
      const auto model = load_model(classify_model);
      auto show = [&](const std::string& text) {
        const auto p = forward(model, text);
        std::cout << p.label << "\t" << p.p_positive << "\t" << text << "\n";
      };
      for (const auto& t : classify_texts) show(t);
      if (!classify_input.empty()) {
        std::ifstream in(classify_input);
        if (!in) throw DataError("cannot open " + classify_input);
        std::string line;
        while (std::getline(in, line))
          if (!line.empty()) show(line);
      }
    } else if (*report_cmd) {
      const auto model = load_model(report_model);
      const auto corpus = read_corpus(report_corpus);
      const auto r = classification_report(model, corpus, timed_calls);
      if (as_json) std::cout << to_json(r).dump(2) << "\n";
      else std::cout << render_table({{ClassifierKind::dlf, r}});
    } else if (*eval_parse_cmd) {
      const auto cfg = config_or_default(parse_config);
      const auto backend = make_backend(cfg.backend);
      const auto report = evaluate_parser(*backend, load_goldset(goldset));
      if (as_json) std::cout << to_json(report).dump(2) << "\n";
      else std::cout << render_table(report);
    } else if (*eval_classify_cmd) {
      std::vector<ClassifierKind> kinds;
      std::stringstream ss(methods);
      std::string m;
      while (std::getline(ss, m, ',')) {
        if (m == "dlf") kinds.push_back(ClassifierKind::dlf);
        else if (m == "tfidf") kinds.push_back(ClassifierKind::tfidf_logreg);
        else throw Error("unknown method: " + m);
      }
      const auto rows = compare_classifiers(read_corpus(compare_corpus), kinds, compare);
      if (as_json) {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& r : rows) j.push_back({{"method", to_string(r.kind)}, {"report", to_json(r.report)}});
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << render_table(rows);
      }
    } else if (*cost_cmd) {
      const auto r = cost_report(volume, blood, parse_money(unit_price));
      if (as_json) {
        std::cout << to_json(r).dump(2) << "\n";
      } else {
        std::cout << "daily volume        " << r.daily_volume << "\n"
                  << "blood messages      " << r.blood_message_count << "\n"
                  << "single-layer cost   " << format_money(r.single_layer_cost) << "\n"
                  << "dual-layer cost     " << format_money(r.dual_layer_cost) << "\n"
                  << "dual / single       " << r.ratio() << "\n";
      }
    } else if (*serve_cmd) {
      return serve(load_app_config(serve_config), std::cout);
    } else if (*simulate_cmd) {
      const auto cfg = config_or_default(sim_config);
      const auto layer1 = make_layer1(cfg);
      const auto layer2 = make_backend(cfg.backend);
      const auto result = simulate(scenario, cfg, *layer1, *layer2);
      std::ofstream file;
      if (!transcript_out.empty()) {
        file.open(transcript_out);
        if (!file) throw Error("cannot write " + transcript_out);
      }
      std::ostream& out = transcript_out.empty() ? std::cout : file;
      for (const auto& line : result.transcript) out << line << "\n";
      if (transcript_out.empty())
        std::cout << nlohmann::ordered_json{{"type", "summary"}, {"summary", to_json(result.summary)}}.dump() << "\n";
      else
        std::cout << to_json(result.summary).dump(2) << "\n";
      for (const auto& [id, want] : result.expected) {
        if (result.actual.at(id) != want) {
          std::cerr << "expectation failed: " << id << " is " << result.actual.at(id) << ", expected " << want << "\n";
          return 1;
        }
      }
      if (!result.summary.violations.empty()) {
        for (const auto& v : result.summary.violations) std::cerr << "violation: " << v << "\n";
        return 1;
      }
    } else if (*synth_cmd) {
      Corpus c;
      if (synth_kind == "imbalanced") c = synth::imbalanced(synth_size, synth_rate, synth_seed);
      else if (synth_kind == "separable") c = synth::separable(synth_size, synth_rate, synth_seed);
      else c = synth::stream(synth_size, static_cast<size_t>(std::llround(synth_size * synth_rate)), synth_seed);
      save_corpus(c, synth_out);
      std::cout << "wrote " << c.size() << " messages (" << c.count_label(1) << " requests) to " << synth_out << "\n";
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
