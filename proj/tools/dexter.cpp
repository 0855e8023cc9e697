// dexter CLI: ingest / index / search / featurize / synth / train / predict /
// eval / grid subcommands over the library.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dexter/checkpoint.hpp"
#include "dexter/dataset.hpp"
#include "dexter/entity_search.hpp"
#include "dexter/eval.hpp"
#include "dexter/featurizer.hpp"
#include "dexter/grid.hpp"
#include "dexter/knowledge_store.hpp"
#include "dexter/synth.hpp"
#include "dexter/tagger.hpp"

namespace fs = std::filesystem;
using namespace dexter;

namespace {

std::vector<std::string> whitespace_tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> toks;
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

// Accepts either plain text (one utterance per line) or CoNLL input.
Dataset read_utterances(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw std::runtime_error("cannot open input file: " + path);
  std::string line;
  bool conll = false;
  while (std::getline(probe, line)) {
    if (line.find('\t') != std::string::npos) {
      conll = true;
      break;
    }
    if (!line.empty() && line[0] != '#') break;
  }
  if (conll) return read_conll(path, false);
  std::ifstream in(path);
  Dataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TaggedUtterance u;
    u.tokens = whitespace_tokens(line);
    u.labels.assign(u.tokens.size(), "O");
    if (!u.tokens.empty()) data.push_back(std::move(u));
  }
  return data;
}

int cmd_ingest(const std::string& entities, const std::string& out_path,
               const std::string& classes_csv, int max_ngram_len,
               const std::string& stemmer) {
  StoreOptions opt;
  opt.max_ngram_len = max_ngram_len;
  opt.stemmer = stemmer_from_string(stemmer);
  if (!classes_csv.empty()) {
    std::vector<std::string> classes;
    std::string cur;
    for (char c : classes_csv) {
      if (c == ',') {
        if (!cur.empty()) classes.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) classes.push_back(cur);
    opt.class_set = classes;
  }
  KnowledgeStore store = ingest(entities, opt);
  serialize_store(store, out_path);
  std::cout << "ingested " << store.size() << " entities, " << store.class_set.size()
            << " classes -> " << out_path << "\n";
  return 0;
}

int cmd_index(const std::string& store_path, const std::string& corrections,
              const std::string& out_path, int max_ngram_len,
              const std::string& stemmer, double fuzzy_threshold) {
  StoreOptions opt;
  opt.max_ngram_len = max_ngram_len;
  opt.stemmer = stemmer_from_string(stemmer);
  KnowledgeStore store = ingest(store_path, opt);
  EntityIndex index = build_index(store);
  if (!corrections.empty())
    index.correction =
        load_corrections(corrections, fuzzy_threshold, NormalizeOptions{opt.stemmer});
  else
    index.correction.fuzzy_threshold = fuzzy_threshold;
  save_index(index, store, out_path);
  std::cout << "indexed " << index.postings.size() << " n-grams over "
            << index.num_entities << " entities -> " << out_path << "\n";
  return 0;
}

int cmd_search(const std::string& index_path, const std::string& query, int k) {
  LoadedIndex loaded = load_index(index_path);
  NormalizeOptions nopt{loaded.store.options.stemmer};
  std::vector<std::string> gram = normalize(query, nopt);
  std::vector<std::string> corrected = correct(gram, loaded.index);
  if (corrected != gram)
    std::cout << "corrected: \"" << join_tokens(gram) << "\" -> \""
              << join_tokens(corrected) << "\"\n";
  std::vector<Candidate> results = search(gram, loaded.index, loaded.store, k);
  if (results.empty()) {
    std::cout << "no candidates\n";
    return 0;
  }
  std::cout << std::fixed << std::setprecision(4);
  std::string current_class;
  for (const Candidate& c : results) {
    if (c.class_label != current_class) {
      current_class = c.class_label;
      std::cout << "[" << current_class << "]\n";
    }
    std::cout << "  " << c.entity_id << "  tfidf=" << c.tfidf
              << "  popularity=" << c.popularity << "  rank_score=" << c.rank_score
              << "\n";
  }
  return 0;
}

int cmd_featurize(const std::string& index_path, const std::string& store_path,
                  const std::string& input, const std::string& out_path,
                  const std::string& ckpt, uint64_t seed, const std::string& ablation) {
  LoadedIndex loaded = load_index(index_path);
  KnowledgeStore* store_ptr = &loaded.store;
  KnowledgeStore full_store;
  if (!store_path.empty()) {
    full_store = ingest(store_path, loaded.store.options);
    store_ptr = &full_store;
  }
  int num_classes = static_cast<int>(store_ptr->class_set.size());

  FeaturizerConfig fc;
  fc.ablation = ablation_from_string(ablation);
  SlpParams slp;
  ConvParams conv;
  if (!ckpt.empty()) {
    ParamStore ps;
    nlohmann::json meta = load_checkpoint(ckpt, ps);
    TrainConfig tc = train_config_from_json(meta.at("config"));
    fc = tc.featurizer;
    if (fc.ablation != Ablation::b) {
      slp.weights = ps.get("slp.w").t.values;
      slp.bias = ps.get("slp.b").t.values(0, 0);
      slp.class_agnostic = fc.ablation == Ablation::c;
    }
    if (fc.ablation != Ablation::e) {
      conv.kernels = ps.get("cnn.k").t.values;
      conv.biases = ps.get("cnn.b").t.values.row(0).transpose();
      conv.width = fc.cnn_width;
      conv.tied = fc.ablation == Ablation::d;
    }
  } else {
    ParamStore ps;
    Rng rng(seed);
    init_featurizer(ps, num_classes, fc, rng);
    if (fc.ablation != Ablation::b) {
      slp.weights = ps.get("slp.w").t.values;
      slp.bias = ps.get("slp.b").t.values(0, 0);
      slp.class_agnostic = fc.ablation == Ablation::c;
    }
    if (fc.ablation != Ablation::e) {
      conv.kernels = ps.get("cnn.k").t.values;
      conv.biases = ps.get("cnn.b").t.values.row(0).transpose();
      conv.width = fc.cnn_width;
      conv.tied = fc.ablation == Ablation::d;
    }
  }

  Dataset utterances = read_utterances(input);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write tensor file: " + out_path);
  // Per utterance: header row (T, dim) then T*dim values, all little-endian
  // 64-bit floats, row-major.
  for (const auto& u : utterances) {
    Mat q = featurize(u.tokens, loaded.index, *store_ptr, fc, slp, conv);
    bin::write_f64(out, static_cast<double>(q.rows()));
    bin::write_f64(out, static_cast<double>(q.cols()));
    for (int64_t i = 0; i < q.size(); ++i) bin::write_f64(out, q.data()[i]);
  }
  std::cout << "featurized " << utterances.size() << " utterances -> " << out_path
            << "\n";
  return 0;
}

int cmd_synth(const std::string& store_path, const std::string& templates,
              uint64_t seed, const std::string& out_dir) {
  KnowledgeStore store = ingest(store_path);
  std::ifstream in(templates);
  if (!in) throw std::runtime_error("cannot open templates file: " + templates);
  nlohmann::json j;
  in >> j;
  SynthConfig cfg = synth_config_from_json(j, store);
  SynthResult result = synth_dataset(cfg, store, Rng(seed));
  fs::create_directories(out_dir);
  write_conll(result.train, (fs::path(out_dir) / "train.conll").string());
  write_conll(result.dev, (fs::path(out_dir) / "dev.conll").string());
  write_conll(result.test, (fs::path(out_dir) / "test.conll").string());
  std::ofstream stats((fs::path(out_dir) / "stats.json").string());
  stats << result.stats.dump(2) << "\n";
  std::cout << "wrote " << result.train.size() << "/" << result.dev.size() << "/"
            << result.test.size() << " train/dev/test utterances -> " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& variant_s, const std::string& ablation_s,
              const std::string& data_dir, const std::string& config_path,
              const std::string& out_ckpt, const std::string& index_path,
              const std::string& task_s, const std::string& log_path) {
  Variant variant = variant_from_string(variant_s);
  Task task = task_from_string(task_s);
  TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path);
    nlohmann::json j;
    in >> j;
    cfg = train_config_from_json(j);
  }
  cfg.featurizer.ablation = ablation_from_string(ablation_s);

  bool validate = task == Task::ner;
  Dataset train = read_conll((fs::path(data_dir) / "train.conll").string(), validate);
  Dataset dev = read_conll((fs::path(data_dir) / "dev.conll").string(), validate);

  std::optional<LoadedIndex> loaded;
  const KnowledgeStore* store = nullptr;
  const EntityIndex* index = nullptr;
  if (variant != Variant::baseline) {
    if (index_path.empty())
      throw std::runtime_error("--index is required for variant " + variant_s);
    loaded = load_index(index_path);
    store = &loaded->store;
    index = &loaded->index;
  }

  TaggerModel model = TaggerModel::build(task, variant, cfg, train, store, index);
  TrainResult result = train_model(model, train, dev);

  nlohmann::json meta = model.meta();
  meta["index_path"] = index_path;
  save_checkpoint(out_ckpt, model.params, meta);
  std::string lp = log_path.empty() ? out_ckpt + ".log" : log_path;
  std::ofstream log(lp);
  log << result.log;
  std::cout << result.log;
  std::cout << "checkpoint -> " << out_ckpt << " (best dev "
            << detail::fmt_double(result.best_dev) << ")\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& input,
                const std::string& index_path, const std::string& out_path) {
  std::optional<LoadedIndex> loaded;
  const KnowledgeStore* store = nullptr;
  const EntityIndex* index = nullptr;
  if (!index_path.empty()) {
    loaded = load_index(index_path);
    store = &loaded->store;
    index = &loaded->index;
  }
  TaggerModel model = TaggerModel::from_checkpoint(ckpt, store, index);
  Dataset data = read_utterances(input);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write output: " + out_path);
    out = &file;
  }
  for (const auto& u : data) {
    if (model.task == Task::parser) {
      TaggerModel::Parse p = model.predict_parse(u.tokens);
      if (!u.domain.empty()) *out << "# domain: " << u.domain << "\n";
      *out << "# intent: " << p.intent << "\n";
      for (size_t i = 0; i < u.tokens.size(); ++i)
        *out << u.tokens[i] << "\t" << p.labels[i] << "\n";
    } else {
      std::vector<std::string> labels = model.predict_labels(u.tokens);
      if (!u.domain.empty()) *out << "# domain: " << u.domain << "\n";
      for (size_t i = 0; i < u.tokens.size(); ++i)
        *out << u.tokens[i] << "\t" << labels[i] << "\n";
    }
    *out << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& gold_path, const std::string& pred_path,
             const std::string& ref_path, const std::string& csv_path) {
  Dataset gold = read_conll(gold_path, true);
  Dataset pred = read_conll(pred_path, false);
  std::vector<std::vector<std::string>> pred_labels;
  for (const auto& u : pred) pred_labels.push_back(u.labels);
  EvalReport report = ner_f1(gold, pred_labels);

  bool has_intents = !gold.empty() && !gold.front().intent.empty();
  if (has_intents) {
    std::vector<std::string> intents;
    for (const auto& u : pred) intents.push_back(u.intent);
    report.exact_match_pct = exact_match(gold, pred_labels, intents);
  }
  if (!ref_path.empty()) {
    Dataset ref = read_conll(ref_path, false);
    std::vector<std::vector<std::string>> ref_labels;
    for (const auto& u : ref) ref_labels.push_back(u.labels);
    report.p_value = binomial_significance(correctness_vector(gold, ref_labels),
                                           correctness_vector(gold, pred_labels));
  }
  std::cout << report_to_text(report);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << "scope,name,precision,recall,f1,tp,fp,fn\n" << std::setprecision(10);
    csv << "overall,," << report.overall.precision() << "," << report.overall.recall()
        << "," << report.overall.f1() << "," << report.overall.tp << ","
        << report.overall.fp << "," << report.overall.fn << "\n";
    for (const auto& [dom, prf] : report.per_domain)
      csv << "domain," << dom << "," << prf.precision() << "," << prf.recall() << ","
          << prf.f1() << "," << prf.tp << "," << prf.fp << "," << prf.fn << "\n";
    for (const auto& [lab, prf] : report.per_label)
      csv << "label," << lab << "," << prf.precision() << "," << prf.recall() << ","
          << prf.f1() << "," << prf.tp << "," << prf.fp << "," << prf.fn << "\n";
  }
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out_dir) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open grid config: " + config_path);
  nlohmann::json j;
  in >> j;
  GridConfig cfg = grid_config_from_json(j);
  GridReport report = run_grid(cfg);
  fs::create_directories(out_dir);
  std::string text = grid_to_text(report);
  std::ofstream txt((fs::path(out_dir) / "report.txt").string());
  txt << text;
  std::ofstream csv((fs::path(out_dir) / "report.csv").string());
  csv << grid_to_csv(report);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DEXTER: knowledge-graph entity search + dense entity embeddings "
               "for sequence tagging"};
  app.require_subcommand(1);

  // ingest
  std::string in_entities, in_out, in_classes, in_stemmer = "s";
  int in_maxlen = 5;
  auto* ingest_cmd = app.add_subcommand("ingest", "build a knowledge store from JSONL");
  ingest_cmd->add_option("--entities", in_entities)->required();
  ingest_cmd->add_option("--out", in_out)->required();
  ingest_cmd->add_option("--classes", in_classes, "comma-separated class set");
  ingest_cmd->add_option("--max-ngram-len", in_maxlen);
  ingest_cmd->add_option("--stemmer", in_stemmer, "none|s|porter");

  // index
  std::string ix_store, ix_corr, ix_out, ix_stemmer = "s";
  int ix_maxlen = 5;
  double ix_fuzzy = 0.6;
  auto* index_cmd = app.add_subcommand("index", "build the inverted tf-idf index");
  index_cmd->add_option("--store", ix_store)->required();
  index_cmd->add_option("--corrections", ix_corr, "observed<TAB>corrected<TAB>count");
  index_cmd->add_option("--out", ix_out)->required();
  index_cmd->add_option("--max-ngram-len", ix_maxlen);
  index_cmd->add_option("--stemmer", ix_stemmer);
  index_cmd->add_option("--fuzzy-threshold", ix_fuzzy);

  // search
  std::string se_index, se_query;
  int se_k = 10;
  auto* search_cmd = app.add_subcommand("search", "query the index");
  search_cmd->add_option("--index", se_index)->required();
  search_cmd->add_option("--query", se_query)->required();
  search_cmd->add_option("--k", se_k);

  // featurize
  std::string fe_index, fe_store, fe_input, fe_out, fe_ckpt, fe_ablation = "none";
  uint64_t fe_seed = 42;
  auto* feat_cmd = app.add_subcommand("featurize", "emit DEXTER embeddings as tensors");
  feat_cmd->add_option("--index", fe_index)->required();
  feat_cmd->add_option("--store", fe_store);
  feat_cmd->add_option("--input", fe_input)->required();
  feat_cmd->add_option("--out", fe_out)->required();
  feat_cmd->add_option("--ckpt", fe_ckpt, "pull trained featurizer weights");
  feat_cmd->add_option("--seed", fe_seed, "init seed when no checkpoint given");
  feat_cmd->add_option("--ablation", fe_ablation);

  // synth
  std::string sy_store, sy_templates, sy_out;
  uint64_t sy_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic tagged datasets");
  synth_cmd->add_option("--store", sy_store)->required();
  synth_cmd->add_option("--templates", sy_templates)->required();
  synth_cmd->add_option("--seed", sy_seed);
  synth_cmd->add_option("--out", sy_out)->required();

  // train
  std::string tr_variant = "baseline", tr_ablation = "none", tr_data, tr_config,
              tr_out, tr_index, tr_task = "ner", tr_log;
  auto* train_cmd = app.add_subcommand("train", "train a tagger");
  train_cmd->add_option("--variant", tr_variant, "baseline|gazetteer|dexter");
  train_cmd->add_option("--ablation", tr_ablation, "none|b|c|d|e");
  train_cmd->add_option("--data", tr_data)->required();
  train_cmd->add_option("--config", tr_config);
  train_cmd->add_option("--out", tr_out)->required();
  train_cmd->add_option("--index", tr_index);
  train_cmd->add_option("--task", tr_task, "ner|parser");
  train_cmd->add_option("--log", tr_log);

  // predict
  std::string pr_ckpt, pr_input, pr_index, pr_out;
  auto* predict_cmd = app.add_subcommand("predict", "tag utterances with a checkpoint");
  predict_cmd->add_option("--ckpt", pr_ckpt)->required();
  predict_cmd->add_option("--input", pr_input)->required();
  predict_cmd->add_option("--index", pr_index);
  predict_cmd->add_option("--out", pr_out);

  // eval
  std::string ev_gold, ev_pred, ev_ref, ev_csv;
  auto* eval_cmd = app.add_subcommand("eval", "entity-level F1 and exact match");
  eval_cmd->add_option("--gold", ev_gold)->required();
  eval_cmd->add_option("--pred", ev_pred)->required();
  eval_cmd->add_option("--ref", ev_ref, "reference predictions for the p-value");
  eval_cmd->add_option("--csv", ev_csv);

  // grid
  std::string gr_config, gr_out;
  auto* grid_cmd = app.add_subcommand("grid", "run a settings x domains experiment grid");
  grid_cmd->add_option("--config", gr_config)->required();
  grid_cmd->add_option("--out", gr_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) return cmd_ingest(in_entities, in_out, in_classes, in_maxlen, in_stemmer);
    if (*index_cmd) return cmd_index(ix_store, ix_corr, ix_out, ix_maxlen, ix_stemmer, ix_fuzzy);
    if (*search_cmd) return cmd_search(se_index, se_query, se_k);
    if (*feat_cmd)
      return cmd_featurize(fe_index, fe_store, fe_input, fe_out, fe_ckpt, fe_seed, fe_ablation);
    if (*synth_cmd) return cmd_synth(sy_store, sy_templates, sy_seed, sy_out);
    if (*train_cmd)
      return cmd_train(tr_variant, tr_ablation, tr_data, tr_config, tr_out, tr_index,
                       tr_task, tr_log);
    if (*predict_cmd) return cmd_predict(pr_ckpt, pr_input, pr_index, pr_out);
    if (*eval_cmd) return cmd_eval(ev_gold, ev_pred, ev_ref, ev_csv);
    if (*grid_cmd) return cmd_grid(gr_config, gr_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
