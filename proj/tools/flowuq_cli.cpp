// flowuq command-line driver.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error, 4 capability error (model cannot do the requested task).

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "flowuq/flowuq.hpp"

namespace fs = std::filesystem;
using namespace flowuq;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string scenario;
  std::string unknown;
  std::vector<std::string> tasks;
  std::string out;
  std::optional<std::size_t> reps;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "flat key = value configuration file");
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--model", c.model, "nn, energy, ddu, bnn or rf");
  app->add_option("--scenario", c.scenario, "3u, 6u, 8u, custom or none");
  app->add_option("--unknown", c.unknown, "comma-separated unknown classes for --scenario custom");
  app->add_option("--task", c.tasks, "closed, calibration, rejection, ood, al (repeatable)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--reps", c.reps, "repetitions");
}

/// File keys first, then every flag given on the command line.
KeyValues merged_keys(const Common& c) {
  KeyValues kv = c.config.empty() ? KeyValues{} : load_key_values(c.config);
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  if (!c.model.empty()) kv["model"] = c.model;
  if (!c.scenario.empty()) kv["scenario"] = c.scenario;
  if (!c.unknown.empty()) kv["scenario.unknown"] = c.unknown;
  if (!c.tasks.empty()) kv["tasks"] = detail::join(c.tasks);
  if (!c.out.empty()) kv["out"] = c.out;
  if (c.reps) kv["reps"] = std::to_string(*c.reps);
  return kv;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

struct EvalInputs {
  FlowDataset test, ood;
};

EvalInputs load_split_dir(const std::string& dir) {
  EvalInputs in;
  in.test = load_dataset((fs::path(dir) / "test.csv").string());
  if (fs::exists(fs::path(dir) / "ood.csv")) in.ood = load_dataset((fs::path(dir) / "ood.csv").string());
  return in;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowuq: uncertainty-aware flow classification experiments"};
  app.require_subcommand(1);

  // ingest
  std::string csv_path, label_column = "Attack", ingest_out;
  auto* ingest = app.add_subcommand("ingest", "parse a NetFlow CSV into a dataset file");
  ingest->add_option("csv", csv_path, "input CSV")->required();
  ingest->add_option("--label-column", label_column, "label column name");
  ingest->add_option("--out", ingest_out, "dataset file to write")->required();

  // synth
  Common synth_opts;
  auto* synth = app.add_subcommand("synth", "generate a synthetic blob dataset from synth.* keys");
  add_common(synth, synth_opts);

  // split
  Common split_opts;
  std::string split_data;
  auto* split = app.add_subcommand("split", "stratified 60/20/20 split with optional unknown classes");
  add_common(split, split_opts);
  split->add_option("--data", split_data, "dataset file")->required();

  // train
  Common train_opts;
  std::string train_dir;
  auto* train = app.add_subcommand("train", "train a model on <dir>/train.csv");
  add_common(train, train_opts);
  train->add_option("--data", train_dir, "split directory")->required();

  // eval
  Common eval_opts;
  std::string eval_dir, model_file;
  auto* eval = app.add_subcommand("eval", "evaluate a saved model on <dir>/test.csv (and ood.csv)");
  add_common(eval, eval_opts);
  eval->add_option("--data", eval_dir, "split directory")->required();
  eval->add_option("--model-file", model_file, "model dump")->required();

  // al, report
  Common al_opts, report_opts;
  auto* al = app.add_subcommand("al", "active-learning experiment");
  add_common(al, al_opts);
  auto* report = app.add_subcommand("report", "full repeated experiment with JSON report and CSV curves");
  add_common(report, report_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      auto res = load_flow_csv(csv_path, label_column);
      save_dataset(ingest_out, res.dataset);
      print_json({{"rows", res.dataset.size()},
                  {"features", res.dataset.dim()},
                  {"classes", res.dataset.class_names},
                  {"rejected_rows", res.rejected_rows}});
    } else if (*synth) {
      auto cfg = config_from_keys(merged_keys(synth_opts));
      fs::path out = synth_opts.out.empty() ? fs::path("synth.csv") : fs::path(synth_opts.out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      auto ds = load_source(cfg);
      save_dataset(out.string(), ds);
      print_json({{"rows", ds.size()}, {"classes", ds.class_names}, {"path", out.string()}});
    } else if (*split) {
      auto kv = merged_keys(split_opts);
      kv.erase("out");
      auto cfg = config_from_keys(kv);
      auto ds = load_dataset(split_data);
      auto bundle = prepare_split(cfg, ds);
      fs::path out = split_opts.out.empty() ? fs::path("split") : fs::path(split_opts.out);
      fs::create_directories(out);
      save_dataset((out / "train.csv").string(), bundle.train);
      save_dataset((out / "val.csv").string(), bundle.val);
      save_dataset((out / "test.csv").string(), bundle.test);
      if (!bundle.ood.empty()) save_dataset((out / "ood.csv").string(), bundle.ood);
      print_json({{"train", bundle.train.size()},
                  {"val", bundle.val.size()},
                  {"test", bundle.test.size()},
                  {"ood", bundle.ood.size()},
                  {"known", bundle.known_class_names},
                  {"unknown", bundle.unknown_class_names}});
    } else if (*train) {
      auto kv = merged_keys(train_opts);
      kv.erase("out");
      auto cfg = config_from_keys(kv);
      auto tr = load_dataset((fs::path(train_dir) / "train.csv").string());
      FlowDataset va;
      if (fs::exists(fs::path(train_dir) / "val.csv")) va = load_dataset((fs::path(train_dir) / "val.csv").string());
      const auto seed = Rng(cfg.seed).split(100).seed();
      auto model = train_model(cfg.model, cfg.settings, tr, va, seed);
      const std::string file = to_string(cfg.model) + ".dump";
      fs::path out = train_opts.out.empty() ? fs::path(file) : fs::path(train_opts.out);
      // a directory (existing, or written with a trailing slash) gets <model>.dump inside it
      if (fs::is_directory(out) || train_opts.out.ends_with('/')) out /= file;
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_model(out.string(), model);
      print_json({{"model", to_string(cfg.model)}, {"seed", seed}, {"path", out.string()}});
    } else if (*eval) {
      auto kv = merged_keys(eval_opts);
      kv.erase("out");
      auto cfg = config_from_keys(kv);
      auto model = load_model(model_file);
      auto in = load_split_dir(eval_dir);
      fs::path out = eval_opts.out.empty() ? fs::path("eval") : fs::path(eval_opts.out);
      fs::create_directories(out);
      auto pred = model.predict(in.test.features);
      nlohmann::json metrics = nlohmann::json::object();
      const std::size_t k = model.num_classes();
      if (cfg.has_task(Task::Al)) throw ConfigError("eval does not run active learning; use the al subcommand");
      if (cfg.has_task(Task::Closed)) {
        auto m = classification_metrics(pred.labels, in.test.labels, k);
        metrics["closed"] = to_json(m);
      }
      if (cfg.has_task(Task::Calibration)) {
        auto cal = calibration(pred.probs, in.test.labels);
        metrics["calibration"] = to_json(cal);
        std::ofstream os(out / "calibration.csv");
        write_calibration_csv(os, cal);
      }
      if (cfg.has_task(Task::Rejection)) {
        auto curve = accuracy_rejection(pred.total, pred.labels, in.test.labels);
        std::ofstream os(out / "rejection.csv");
        write_rejection_csv(os, curve);
        metrics["rejection"] = {{"accuracy_0", curve.points[0].accuracy}, {"accuracy_50", curve.points[10].accuracy}};
      }
      if (cfg.has_task(Task::Ood)) {
        if (in.ood.empty()) throw InvalidInput("task ood needs <dir>/ood.csv");
        auto curve = roc(model.ood_scores(in.test.features), model.ood_scores(in.ood.features));
        metrics["ood"] = to_json(curve);
        std::ofstream os(out / "roc.csv");
        write_roc_csv(os, curve);
      }
      std::ofstream(out / "metrics.json") << metrics.dump(2) << '\n';
      print_json(metrics);
    } else if (*al || *report) {
      auto kv = merged_keys(*al ? al_opts : report_opts);
      if (*al) kv["tasks"] = "al";
      auto cfg = config_from_keys(kv);
      auto res = run_experiment(cfg);
      std::cout << (res.dir / "report.json").string() << '\n';
      print_json(res.report["aggregate"]);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const CapabilityError& e) {
    std::cerr << "capability error: " << e.what() << '\n';
    return 4;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const EmptyDataset& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidInput& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const DimensionMismatch& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
