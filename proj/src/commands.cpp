#include "laplace_rl/commands.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "laplace_rl/analysis.hpp"
#include "laplace_rl/checkpoint.hpp"
#include "laplace_rl/io_util.hpp"
#include "laplace_rl/trainer.hpp"

namespace laplace_rl {

using nlohmann::json;

namespace {

std::string curve_header(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::string h;
  h += "# config_hash=" + cfg.hash() + "\n";
  h += "# seed=" + std::to_string(seed) + "\n";
  h += "trial,reward,length,policy_loss,value_loss,entropy\n";
  return h;
}

void write_trial_log_header(std::ofstream& out, const ExperimentConfig& cfg) {
  out << "# config_hash=" << cfg.hash() << "\n";
  out << "trial_id,task,scale,sampled_durations,action,reward,trial_length\n";
}

}  // namespace

RunOutput run_one_seed(const ExperimentConfig& config, std::uint64_t seed,
                       bool quiet) {
  const std::filesystem::path dir = config.run_dir(seed);
  std::filesystem::create_directories(dir);
  write_text_file(dir / "config.json", config.to_json());

  std::ofstream curve(dir / "curve.csv", std::ios::binary);
  curve << curve_header(config, seed);

  long next_progress = 1000;
  CheckpointSink sink;
  sink.save = [&](long trial, const AgentParams& params, const std::string& rng) {
    Checkpoint ck;
    ck.config = config;
    ck.config_hash = config.hash();
    ck.seed = seed;
    ck.trial = trial;
    ck.rng_state = rng;
    ck.params = params;
    ck.save(dir / ("ckpt-" + std::to_string(trial) + ".json"));
    ck.save(dir / "ckpt-final.json");
  };

  TrainResult result = run_training(
      config.env, config.net, config.train, seed,
      [&](const RunRecordRow& row) {
        curve << row.trial << ',' << format_double(row.reward) << ','
              << row.length << ',' << format_double(row.policy_loss) << ','
              << format_double(row.value_loss) << ','
              << format_double(row.entropy) << '\n';
        if (!quiet && row.trial + 1 >= next_progress) {
          std::fprintf(stderr, "[seed %llu] trial %ld\n",
                       static_cast<unsigned long long>(seed), row.trial + 1);
          next_progress += 1000;
        }
      },
      sink);
  curve.close();

  if (config.record_activity) {
    ActivityRecord rec;
    evaluate_policy(config, result.params, config.env.scale,
                    config.activity_trials, mix_seed(seed, 0xAC), &rec);
    rec.save(dir / "activity.bin");
  }

  std::ostringstream summary;
  summary << "{\n  \"trials_run\": " << result.trials_run
          << ",\n  \"trials_to_criterion\": " << result.trials_to_criterion
          << "\n}\n";
  write_text_file(dir / "summary.json", summary.str());

  RunOutput out;
  out.dir = dir;
  out.trials_to_criterion = result.trials_to_criterion;
  out.trials_run = result.trials_run;
  return out;
}

int cmd_train(const TrainArgs& args) {
  ExperimentConfig config;
  try {
    config = ExperimentConfig::load(args.config_path, args.overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitConfig;
  }
  try {
    std::vector<std::uint64_t> seeds =
        args.seed ? std::vector<std::uint64_t>{*args.seed} : config.seeds;
    for (std::uint64_t seed : seeds) {
      RunOutput out = run_one_seed(config, seed, args.quiet);
      std::printf("run seed=%llu dir=%s trials=%ld trials_to_criterion=%ld\n",
                  static_cast<unsigned long long>(seed), out.dir.c_str(),
                  out.trials_run, out.trials_to_criterion);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const EvalArgs& args) {
  Checkpoint ck;
  try {
    ck = Checkpoint::load(args.checkpoint_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitConfig;
  }
  try {
    std::filesystem::path out_dir =
        args.out_dir.empty()
            ? std::filesystem::path(args.checkpoint_path).parent_path() / "eval"
            : std::filesystem::path(args.out_dir);
    std::filesystem::create_directories(out_dir);

    std::ofstream acc(out_dir / "accuracy.csv", std::ios::binary);
    acc << "# config_hash=" << ck.config_hash << "\n";
    acc << "scale,trials,accuracy,mean_reward\n";

    std::ofstream trials_csv;
    if (args.trial_log) {
      trials_csv.open(out_dir / "trials.csv", std::ios::binary);
      write_trial_log_header(trials_csv, ck.config);
    }

    for (double scale : args.scales) {
      ActivityRecord rec;
      EvalSummary ev =
          evaluate_policy(ck.config, ck.params, scale, args.n_trials, args.seed,
                          args.record_activity ? &rec : nullptr);
      acc << format_double(scale) << ',' << ev.n_trials << ','
          << format_double(ev.accuracy) << ',' << format_double(ev.mean_reward)
          << '\n';
      if (args.trial_log) {
        long id = 0;
        for (const EvalTrial& t : ev.trials) {
          std::string durations = std::to_string(t.interval1);
          if (t.interval2 >= 0) durations += ";" + std::to_string(t.interval2);
          trials_csv << id++ << ',' << task_name(ck.config.env.task) << ','
                     << format_double(scale) << ',' << durations << ','
                     << t.action << ',' << format_double(t.reward) << ','
                     << t.length << '\n';
        }
      }
      if (args.record_activity)
        rec.save(out_dir / ("activity-scale" + format_double(scale) + ".bin"));
      std::printf("scale %g: accuracy %.4f mean_reward %.4f (%d trials)\n", scale,
                  ev.accuracy, ev.mean_reward, ev.n_trials);
      if ((ck.config.net.core == CoreKind::cogrnn_tilde ||
           ck.config.net.core == CoreKind::cogrnn_F)) {
        int max_base = 0;
        for (int d : ck.config.env.timing_durations)
          max_base = std::max(max_base, d);
        if (scale * max_base > ck.config.net.memory.taustar_max)
          std::fprintf(stderr,
                       "warning: scale %g pushes durations beyond tau*max\n", scale);
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "eval failed: %s\n", e.what());
    return kExitRuntime;
  }
}

namespace {

int analyze_time_cells(const AnalyzeArgs& args) {
  if (args.activity_path.empty()) {
    std::fprintf(stderr, "analyze time-cells: --activity is required\n");
    return kExitConfig;
  }
  if (!std::filesystem::exists(args.activity_path)) {
    std::fprintf(stderr, "analyze time-cells: missing activity dump %s\n",
                 args.activity_path.c_str());
    return kExitConfig;
  }
  ActivityRecord rec = ActivityRecord::load(args.activity_path);
  std::vector<CellStats> cells = classify_units(rec);

  std::filesystem::path out_dir =
      args.out_dir.empty()
          ? std::filesystem::path(args.activity_path).parent_path()
          : std::filesystem::path(args.out_dir);
  std::filesystem::create_directories(out_dir);

  std::ofstream cs(out_dir / "cellstats.csv", std::ios::binary);
  cs << "unit,class,peak,std,r2,fit_ok\n";
  for (const CellStats& c : cells)
    cs << c.unit << ',' << unit_class_name(c.klass) << ','
       << format_double(c.peak) << ',' << format_double(c.std_dev) << ','
       << format_double(c.r2) << ',' << (c.fit_ok ? 1 : 0) << '\n';

  try {
    Regression reg = peak_width_regression(cells);
    std::ofstream rg(out_dir / "peak_width.csv", std::ios::binary);
    rg << "slope,intercept,r2,n\n";
    rg << format_double(reg.slope) << ',' << format_double(reg.intercept) << ','
       << format_double(reg.r2) << ',' << reg.n << '\n';
    std::printf("peak-width regression: slope %.4f intercept %.4f r2 %.4f (n=%d)\n",
                reg.slope, reg.intercept, reg.r2, reg.n);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "peak-width regression skipped: %s\n", e.what());
  }

  if (args.heatmap) {
    // transient units sorted by fitted peak, min-max normalized rows
    Eigen::MatrixXd traces = mean_traces(rec);
    std::vector<const CellStats*> transients;
    for (const CellStats& c : cells)
      if (c.klass == UnitClass::transient && c.fit_ok) transients.push_back(&c);
    std::sort(transients.begin(), transients.end(),
              [](const CellStats* a, const CellStats* b) { return a->peak < b->peak; });
    if (!transients.empty()) {
      Eigen::MatrixXd img(transients.size(), traces.cols());
      for (size_t i = 0; i < transients.size(); ++i) {
        Eigen::VectorXd y = traces.row(transients[i]->unit).transpose();
        const double lo = y.minCoeff(), hi = y.maxCoeff();
        img.row(i) = ((y.array() - lo) / std::max(hi - lo, 1e-300)).transpose();
      }
      write_pgm(out_dir / "timecells.pgm", img, 0.0, 1.0);
    }
  }
  return kExitOk;
}

int analyze_psychometric(const AnalyzeArgs& args) {
  if (args.trials_path.empty() || !std::filesystem::exists(args.trials_path)) {
    std::fprintf(stderr, "analyze psychometric: --trials CSV is required\n");
    return kExitConfig;
  }
  std::ifstream in(args.trials_path);
  std::string line;
  std::vector<EvalTrial> trials;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("trial_id", 0) == 0) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 7) continue;
    EvalTrial t;
    const std::string& durations = fields[3];
    t.interval1 = std::stoi(durations.substr(0, durations.find(';')));
    t.action = std::stoi(fields[4]);
    t.reward = std::stod(fields[5]);
    trials.push_back(t);
  }
  std::filesystem::path out_dir =
      args.out_dir.empty()
          ? std::filesystem::path(args.trials_path).parent_path()
          : std::filesystem::path(args.out_dir);
  std::filesystem::create_directories(out_dir);
  try {
    auto points = psychometric_curve(trials);
    std::ofstream out(out_dir / "psychometric.csv", std::ios::binary);
    out << "interval,n,p_long,ci_lo,ci_hi\n";
    for (const auto& p : points)
      out << p.interval << ',' << p.n << ',' << format_double(p.p_long) << ','
          << format_double(p.ci_lo) << ',' << format_double(p.ci_hi) << '\n';
  } catch (const std::exception& e) {
    std::fprintf(stderr, "psychometric failed: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

int analyze_curves(const AnalyzeArgs& args) {
  if (args.run_dir.empty() || !std::filesystem::is_directory(args.run_dir)) {
    std::fprintf(stderr, "analyze curves: --run-dir is required\n");
    return kExitConfig;
  }
  std::vector<std::vector<double>> rewards;
  std::vector<std::filesystem::path> matched;
  for (const auto& entry : std::filesystem::directory_iterator(args.run_dir)) {
    if (!entry.is_directory()) continue;
    if (!glob_match(args.glob, entry.path().filename().string())) continue;
    const auto curve = entry.path() / "curve.csv";
    if (!std::filesystem::exists(curve)) continue;
    matched.push_back(curve);
  }
  std::sort(matched.begin(), matched.end());
  for (const auto& curve : matched) {
    std::ifstream in(curve);
    std::string line;
    std::vector<double> r;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("trial", 0) == 0) continue;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      r.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    if (!r.empty()) rewards.push_back(std::move(r));
  }
  if (rewards.empty()) {
    std::fprintf(stderr, "analyze curves: no curve.csv matched %s under %s\n",
                 args.glob.c_str(), args.run_dir.c_str());
    return kExitConfig;
  }
  CurveAggregate agg = aggregate_curves(rewards, args.window);
  std::filesystem::path out_dir =
      args.out_dir.empty() ? std::filesystem::path(args.run_dir)
                           : std::filesystem::path(args.out_dir);
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "curves_aggregate.csv", std::ios::binary);
  out << "trial,mean_reward,stderr,n_runs\n";
  for (size_t i = 0; i < agg.trial.size(); ++i)
    out << agg.trial[i] << ',' << format_double(agg.mean[i]) << ','
        << format_double(agg.stderr_[i]) << ',' << agg.n_runs << '\n';
  std::printf("aggregated %d runs over %zu trials\n", agg.n_runs, agg.trial.size());
  return kExitOk;
}

}  // namespace

int cmd_analyze(const AnalyzeArgs& args) {
  try {
    if (args.kind == "time-cells") return analyze_time_cells(args);
    if (args.kind == "psychometric") return analyze_psychometric(args);
    if (args.kind == "curves") return analyze_curves(args);
    std::fprintf(stderr, "unknown analysis kind: %s\n", args.kind.c_str());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "analyze failed: %s\n", e.what());
    return kExitRuntime;
  }
}

int cmd_sweep(const SweepArgs& args) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(args.manifest_path));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sweep: %s\n", e.what());
    return kExitConfig;
  }

  struct Item {
    std::string config_text;
    std::uint64_t seed;
    std::string tag;
  };
  std::vector<Item> items;
  try {
    const std::filesystem::path base_dir =
        std::filesystem::path(args.manifest_path).parent_path();
    std::string base_text;
    if (manifest.contains("base_config")) {
      base_text = read_text_file(base_dir / manifest.at("base_config").get<std::string>());
    }
    std::vector<std::uint64_t> seeds =
        manifest.value("seeds", std::vector<std::uint64_t>{0});

    if (manifest.contains("axes")) {
      // cartesian product over axes of overrides
      std::vector<std::pair<std::string, json>> axes;
      for (const auto& [key, values] : manifest.at("axes").items())
        axes.emplace_back(key, values);
      std::vector<std::vector<std::string>> combos{{}};
      for (const auto& [key, values] : axes) {
        std::vector<std::vector<std::string>> next;
        for (const auto& combo : combos)
          for (const auto& v : values) {
            auto c = combo;
            c.push_back(key + "=" + v.dump());
            next.push_back(std::move(c));
          }
        combos = std::move(next);
      }
      for (const auto& combo : combos) {
        std::string text = base_text;
        std::string tag;
        for (const auto& ov : combo) {
          apply_override(text, ov);
          tag += (tag.empty() ? "" : ",") + ov;
        }
        for (std::uint64_t s : seeds) items.push_back({text, s, tag});
      }
    }
    if (manifest.contains("runs")) {
      for (const auto& run : manifest.at("runs")) {
        std::string text =
            run.contains("config")
                ? read_text_file(base_dir / run.at("config").get<std::string>())
                : base_text;
        for (const auto& ov : run.value("overrides", std::vector<std::string>{}))
          apply_override(text, ov);
        const auto run_seeds = run.value("seeds", seeds);
        for (std::uint64_t s : run_seeds)
          items.push_back({text, s, run.value("tag", std::string())});
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sweep manifest error: %s\n", e.what());
    return kExitConfig;
  }

  if (items.empty()) {
    std::printf("sweep: empty manifest, nothing to do\n");
    return kExitOk;
  }

  struct Row {
    std::string run_id, tag, dir, status;
    std::uint64_t seed;
    long criterion;
  };
  std::vector<Row> rows(items.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      Row& row = rows[i];
      row.seed = items[i].seed;
      row.tag = items[i].tag;
      row.run_id = "run" + std::to_string(i);
      try {
        ExperimentConfig cfg = ExperimentConfig::from_json(items[i].config_text);
        RunOutput out = run_one_seed(cfg, items[i].seed, true);
        row.dir = out.dir.string();
        row.criterion = out.trials_to_criterion;
        row.status = "ok";
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
        row.criterion = -1;
      }
      if (!args.quiet) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::printf("[%zu/%zu] %s seed=%llu %s\n", i + 1, items.size(),
                    row.tag.c_str(), static_cast<unsigned long long>(row.seed),
                    row.status.c_str());
      }
    }
  };
  std::vector<std::thread> pool;
  const int jobs = std::max(1, args.jobs);
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const std::filesystem::path index_path =
      std::filesystem::path(args.manifest_path).parent_path() / "sweep_index.csv";
  std::ofstream index(index_path, std::ios::binary);
  index << "run_id,tag,seed,status,output_dir,trials_to_criterion\n";
  bool any_failed = false;
  for (const Row& r : rows) {
    index << csv_row({r.run_id, r.tag, std::to_string(r.seed), r.status, r.dir,
                      std::to_string(r.criterion)});
    any_failed = any_failed || r.status != "ok";
  }
  std::printf("sweep index written to %s\n", index_path.c_str());
  return any_failed ? kExitRuntime : kExitOk;
}

}  // namespace laplace_rl
