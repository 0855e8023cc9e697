#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexter/dataset.hpp"
#include "dexter/entity_search.hpp"
#include "dexter/eval.hpp"
#include "dexter/tagger.hpp"

namespace dexter {

struct GridSetting {
  std::string name;     // row label, e.g. "a".."e"
  Variant variant = Variant::baseline;
  Ablation ablation = Ablation::none;
};

struct GridConfig {
  std::string index_path;
  std::map<std::string, std::string> datasets;  // domain -> directory
  std::vector<GridSetting> settings;
  std::vector<uint64_t> seeds{1, 2, 3};
  int workers = 1;
  Task task = Task::ner;
  nlohmann::json train_overrides;
};

inline GridConfig grid_config_from_json(const nlohmann::json& j) {
  GridConfig cfg;
  cfg.index_path = j.at("index").get<std::string>();
  for (const auto& [dom, dir] : j.at("datasets").items())
    cfg.datasets[dom] = dir.get<std::string>();
  for (const auto& sj : j.at("settings")) {
    GridSetting s;
    s.name = sj.at("name").get<std::string>();
    s.variant = variant_from_string(sj.at("variant").get<std::string>());
    s.ablation = ablation_from_string(sj.value("ablation", std::string("none")));
    cfg.settings.push_back(std::move(s));
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  cfg.workers = j.value("workers", 1);
  cfg.task = task_from_string(j.value("task", std::string("ner")));
  if (j.contains("train")) cfg.train_overrides = j.at("train");
  return cfg;
}

struct SeedRun {
  uint64_t seed = 0;
  double precision = 0, recall = 0, f1 = 0, exact = 0;
  std::vector<uint8_t> correctness;
};

struct GridCell {
  std::string setting, domain;
  std::vector<SeedRun> runs;
  double mean_metric = 0;  // F1 for NER, exact match for the parser
  double p_value = 0.5;    // vs the first settings row, same domain
};

struct GridReport {
  std::vector<std::string> setting_names;
  std::vector<std::string> domains;
  std::map<std::pair<std::string, std::string>, GridCell> cells;
  Task task = Task::ner;
};

namespace detail {

inline SeedRun run_cell_seed(const GridConfig& cfg, const GridSetting& setting,
                             const std::string& data_dir, uint64_t seed,
                             const KnowledgeStore& store, const EntityIndex& index) {
  namespace fs = std::filesystem;
  bool validate = cfg.task == Task::ner;
  Dataset train = read_conll((fs::path(data_dir) / "train.conll").string(), validate);
  Dataset dev = read_conll((fs::path(data_dir) / "dev.conll").string(), validate);
  Dataset test = read_conll((fs::path(data_dir) / "test.conll").string(), validate);

  TrainConfig tc = train_config_from_json(cfg.train_overrides);
  tc.seed = seed;
  tc.featurizer.ablation = setting.ablation;
  TaggerModel model =
      TaggerModel::build(cfg.task, setting.variant, tc, train, &store, &index);
  train_model(model, train, dev);

  SeedRun run;
  run.seed = seed;
  std::vector<std::vector<std::string>> pred;
  std::vector<std::string> intents;
  for (const auto& u : test) {
    if (cfg.task == Task::ner) {
      pred.push_back(model.predict_labels(u.tokens));
    } else {
      TaggerModel::Parse p = model.predict_parse(u.tokens);
      pred.push_back(std::move(p.labels));
      intents.push_back(std::move(p.intent));
    }
  }
  if (cfg.task == Task::ner) {
    EvalReport rep = ner_f1(test, pred);
    run.precision = rep.overall.precision();
    run.recall = rep.overall.recall();
    run.f1 = rep.overall.f1();
    run.exact = rep.exact_match_pct;
    run.correctness = correctness_vector(test, pred);
  } else {
    run.exact = exact_match(test, pred, intents);
    run.f1 = run.exact;
    run.correctness = correctness_vector(test, pred, intents);
  }
  return run;
}

}  // namespace detail

// Trains and evaluates every setting x domain cell with the configured
// seeds. Significance per cell: correctness vectors concatenated across
// seeds against the first settings row of the same domain, one-tailed.
// Cells run independently (up to `workers` in flight); any failure aborts
// with the cell id.
inline GridReport run_grid(const GridConfig& cfg) {
  LoadedIndex loaded = load_index(cfg.index_path);
  GridReport report;
  report.task = cfg.task;
  for (const auto& s : cfg.settings) report.setting_names.push_back(s.name);
  for (const auto& [dom, _] : cfg.datasets) report.domains.push_back(dom);

  struct CellJob {
    const GridSetting* setting;
    std::string domain, dir;
  };
  std::vector<CellJob> jobs;
  for (const auto& s : cfg.settings)
    for (const auto& [dom, dir] : cfg.datasets) jobs.push_back({&s, dom, dir});

  std::vector<GridCell> results(jobs.size());
  auto run_job = [&](size_t i) {
    const CellJob& job = jobs[i];
    try {
      GridCell cell;
      cell.setting = job.setting->name;
      cell.domain = job.domain;
      double sum = 0;
      for (uint64_t seed : cfg.seeds) {
        SeedRun run = detail::run_cell_seed(cfg, *job.setting, job.dir, seed,
                                            loaded.store, loaded.index);
        sum += cfg.task == Task::ner ? run.f1 : run.exact;
        cell.runs.push_back(std::move(run));
      }
      cell.mean_metric = sum / static_cast<double>(cfg.seeds.size());
      results[i] = std::move(cell);
    } catch (const std::exception& e) {
      throw std::runtime_error("grid cell " + job.setting->name + "/" + job.domain +
                               " failed: " + e.what());
    }
  };

  int workers = std::max(1, cfg.workers);
  for (size_t at = 0; at < jobs.size(); at += workers) {
    std::vector<std::future<void>> wave;
    size_t end = std::min(jobs.size(), at + static_cast<size_t>(workers));
    for (size_t i = at; i < end; ++i)
      wave.push_back(std::async(std::launch::async, run_job, i));
    for (auto& f : wave) f.get();  // rethrows cell failures
  }

  for (auto& cell : results) {
    report.cells[{cell.setting, cell.domain}] = std::move(cell);
  }

  // Significance against the first row.
  const std::string& base = report.setting_names.front();
  for (auto& [key, cell] : report.cells) {
    const GridCell& ref = report.cells.at({base, cell.domain});
    std::vector<uint8_t> a, b;
    for (const auto& r : ref.runs) a.insert(a.end(), r.correctness.begin(), r.correctness.end());
    for (const auto& r : cell.runs) b.insert(b.end(), r.correctness.begin(), r.correctness.end());
    cell.p_value = binomial_significance(a, b);
  }
  return report;
}

// Aligned text table, rows in configured setting order; * marks p < 0.05
// against the first row.
inline std::string grid_to_text(const GridReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::setw(8) << "setting";
  for (const auto& d : r.domains) os << std::setw(22) << d;
  os << "\n";
  for (const auto& s : r.setting_names) {
    os << std::setw(8) << s;
    for (const auto& d : r.domains) {
      const GridCell& c = r.cells.at({s, d});
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << c.mean_metric;
      if (s != r.setting_names.front()) {
        cell << (c.p_value < 0.05 ? "*" : "");
        cell << " (p=" << std::setprecision(3) << c.p_value << ")";
      }
      os << std::setw(22) << cell.str();
    }
    os << "\n";
  }
  return os.str();
}

// Machine-readable rows: per-seed lines plus a "mean" line per cell.
inline std::string grid_to_csv(const GridReport& r) {
  std::ostringstream os;
  os << "setting,domain,seed,precision,recall,f1,exact_match,p_value\n";
  os << std::setprecision(10);
  for (const auto& s : r.setting_names) {
    for (const auto& d : r.domains) {
      const GridCell& c = r.cells.at({s, d});
      for (const auto& run : c.runs) {
        os << s << "," << d << "," << run.seed << "," << run.precision << ","
           << run.recall << "," << run.f1 << "," << run.exact << "," << c.p_value
           << "\n";
      }
      os << s << "," << d << ",mean,,," << c.mean_metric << ",," << c.p_value << "\n";
    }
  }
  return os.str();
}

}  // namespace dexter
