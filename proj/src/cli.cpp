#include "fedfusion/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fedfusion/artifact.hpp"
#include "fedfusion/federation.hpp"
#include "fedfusion/fusion.hpp"
#include "fedfusion/logging.hpp"
#include "fedfusion/metrics.hpp"
#include "fedfusion/transport.hpp"

namespace fedfusion {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- shared flag groups ----

struct DataFlags {
  std::string source = "synthetic";
  std::size_t n_per_class = 100;
  std::size_t size = 32;
  double noise = 0.1;
  std::optional<std::uint64_t> data_seed;
  double train_fraction = 0.8;
};

struct Prepared {
  LabeledDataset train;
  LabeledDataset test;
  ArchitectureOptions arch;
};

void add_data_flags(CLI::App* app, DataFlags& d) {
  app->add_option("--data", d.source, "'synthetic' or a directory with covid/, pneumonia/, normal/ subdirectories")
      ->capture_default_str();
  app->add_option("--n-per-class", d.n_per_class, "Synthetic samples per class")->capture_default_str();
  app->add_option("--size", d.size, "Synthetic image side length (multiple of 4)")->capture_default_str();
  app->add_option("--noise", d.noise, "Synthetic Gaussian noise level")->capture_default_str();
  app->add_option("--data-seed", d.data_seed, "Seed for data generation and the train/test split (default: --seed)");
  app->add_option("--train-fraction", d.train_fraction, "Share of each class used for training")
      ->capture_default_str();
}

Prepared prepare_data(const DataFlags& d, std::uint64_t seed) {
  const std::uint64_t ds_seed = d.data_seed.value_or(seed);
  LabeledDataset ds;
  if (d.source == "synthetic") {
    ds = generate_synthetic(d.n_per_class, d.size, d.noise, ds_seed);
  } else {
    LoadResult loaded = load_directory(d.source);
    if (!loaded.rejected.empty()) {
      spdlog::warn("rejected {} file(s) from {}", loaded.rejected.size(), d.source);
      for (const auto& r : loaded.rejected) {
        spdlog::warn("  {} ({}: {})", r.path.string(), reject_reason_name(r.reason), r.detail);
      }
    }
    ds = std::move(loaded.dataset);
  }
  TrainTestSplit s = split(ds, d.train_fraction, mix_seed(ds_seed, 0x5B1));
  Prepared p{std::move(s.train), std::move(s.test), {}};
  const Shape shape = ds.image_shape();
  p.arch.height = shape.at(0);
  p.arch.width = shape.at(1);
  p.arch.channels = shape.at(2);
  p.arch.num_classes = kNumClasses;
  spdlog::info("data: {} train / {} test images of shape {}", p.train.size(), p.test.size(), shape_to_string(shape));
  return p;
}

struct TrainFlags {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::size_t steps_per_epoch = 0;
  double lr = 0.05;
  double momentum = 0.0;
  double dropout = 0.5;
  bool augment = false;
};

void add_train_flags(CLI::App* app, TrainFlags& t, const std::string& epochs_flag = "--epochs") {
  app->add_option(epochs_flag, t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--batch-size", t.batch_size, "Minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--steps-per-epoch", t.steps_per_epoch, "Steps per epoch (0: one pass over the data)")
      ->capture_default_str();
  app->add_option("--lr", t.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--momentum", t.momentum, "SGD momentum (e.g. 0.9)")->capture_default_str();
  app->add_option("--dropout", t.dropout, "Dropout rate in the classifier heads")->capture_default_str();
  app->add_flag("--augment", t.augment, "Apply random rotation/flip/zoom to training images");
}

TrainConfig make_train_config(const TrainFlags& t, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = t.epochs;
  c.batch_size = t.batch_size;
  c.steps_per_epoch = t.steps_per_epoch;
  c.learning_rate = t.lr;
  c.momentum = t.momentum;
  c.dropout_rate = t.dropout;
  c.augment = t.augment;
  c.rng_seed = seed;
  c.validate();
  return c;
}

CLI::Validator model_name_validator() {
  return CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          parse_architecture(s);
          return {};
        } catch (const std::invalid_argument& e) {
          return e.what();
        }
      },
      "{vgg,inception,dense,swin}", "MODEL");
}

void write_metrics(const ClassifierMetrics& m, const std::string& metrics_path, const std::string& roc_path) {
  if (!metrics_path.empty()) write_text_file(metrics_path, metrics_csv(metric_records(m)));
  if (!roc_path.empty()) write_text_file(roc_path, roc_csv(m));
}

void print_confusion(const ConfusionMatrix& cm) {
  std::printf("confusion (rows=true, cols=pred):\n");
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    std::printf("  %-10s", std::string(kClassNames[i]).c_str());
    for (std::size_t j = 0; j < cm.classes(); ++j) std::printf(" %5zu", cm.at(i, j));
    std::printf("\n");
  }
}

// ---- commands ----

struct TrainCmd {
  std::string model = "vgg";
  std::uint64_t seed = 1;
  DataFlags data;
  TrainFlags train;
  std::string out, curves, metrics, roc;

  int run() const {
    const ArchitectureId arch = parse_architecture(model);
    Prepared p = prepare_data(data, seed);
    p.arch.dropout_rate = train.dropout;
    p.arch.init_seed = seed;
    const TrainConfig cfg = make_train_config(train, seed);
    Model m = build_model(arch, p.arch);
    spdlog::info("training {} ({} parameters) for {} epochs", model, m.parameter_count(), cfg.epochs);

    const auto t0 = Clock::now();
    const TrainingHistory history = fedfusion::train(m, p.train, &p.test, cfg);
    const double train_s = seconds_since(t0);
    const auto t1 = Clock::now();
    const Evaluation ev = evaluate(m, p.test);
    const double test_s = seconds_since(t1);

    const std::string out_path = out.empty() ? model + ".fmodel" : out;
    const std::string curves_path = curves.empty() ? out_path + ".curves.csv" : curves;
    save_artifact(out_path, export_artifact(m));
    write_text_file(curves_path, training_curves_csv(history));

    ClassifierMetrics cm = compute_metrics(std::string(architecture_display_name(arch)), ev.probabilities, ev.labels,
                                           kNumClasses);
    cm.training_time_s = train_s;
    cm.testing_time_s = test_s;
    write_metrics(cm, metrics, roc);

    const double train_acc = history.epochs.empty() ? 0.0 : history.epochs.back().train_accuracy;
    std::printf("model=%s train_acc=%.4f val_acc=%.4f training_time_s=%.2f\n", model.c_str(), train_acc, ev.accuracy,
                train_s);
    std::printf("wrote %s and %s\n", out_path.c_str(), curves_path.c_str());
    return 0;
  }
};

struct EvaluateCmd {
  std::string model_file;
  std::string name;
  std::uint64_t seed = 1;
  DataFlags data;
  std::string metrics, roc;

  int run() const {
    const ModelArtifact a = load_artifact(model_file);
    Prepared p = prepare_data(data, seed);
    Model m = model_from_artifact(a, p.arch);
    const auto t0 = Clock::now();
    const Evaluation ev = evaluate(m, p.test);
    ClassifierMetrics cm = compute_metrics(name.empty() ? std::string(architecture_display_name(a.arch)) : name,
                                           ev.probabilities, ev.labels, kNumClasses);
    cm.testing_time_s = seconds_since(t0);
    write_metrics(cm, metrics, roc);
    std::printf("model=%s test_acc=%.4f macro_auc=%.4f\n", std::string(architecture_cli_name(a.arch)).c_str(),
                cm.accuracy, cm.macro_auc);
    print_confusion(cm.confusion);
    return 0;
  }
};

struct EnsembleCmd {
  std::vector<std::string> models;
  bool logits = false;
  std::uint64_t seed = 1;
  DataFlags data;
  std::string out = "ensemble.metrics.csv";
  std::string roc;

  int run() const {
    if (models.size() < 2 || models.size() > 4) throw std::invalid_argument("ensemble needs 2 to 4 model files");
    std::vector<ModelArtifact> artifacts;
    for (const auto& f : models) artifacts.push_back(load_artifact(f));
    Prepared p = prepare_data(data, seed);
    EnsembleModel ens(artifacts, p.arch, FusionMode::Sum, logits);

    std::vector<std::size_t> idx(p.test.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto t0 = Clock::now();
    const std::vector<Tensor> outs = ens.member_outputs(batch_images(p.test, idx));
    const double infer_s = seconds_since(t0);
    const std::vector<std::size_t> labels = batch_labels(p.test, idx);

    std::vector<MetricRecord> records;
    std::string roc_text;
    std::vector<std::vector<std::size_t>> preds;
    for (FusionMode mode : kAllFusionModes) {
      const auto t1 = Clock::now();
      const auto fused = fuse_rows(outs, mode, !logits);
      const double fuse_s = seconds_since(t1);
      std::vector<std::vector<double>> scores;
      preds.emplace_back();
      for (const auto& f : fused) {
        scores.emplace_back(f.scores.data().begin(), f.scores.data().end());
        preds.back().push_back(f.class_index);
      }
      ClassifierMetrics cm = compute_metrics(fusion_display_name(mode), scores, labels, kNumClasses);
      cm.testing_time_s = infer_s + fuse_s;
      auto r = metric_records(cm);
      records.insert(records.end(), r.begin(), r.end());
      if (!roc.empty()) {
        const std::string part = roc_csv(cm);
        roc_text += roc_text.empty() ? part : part.substr(part.find('\n') + 1);
      }
      std::printf("%s: accuracy=%.4f macro_auc=%.4f\n", cm.classifier.c_str(), cm.accuracy, cm.macro_auc);
      print_confusion(cm.confusion);
    }
    std::size_t agree = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) agree += preds[0][i] == preds[1][i] ? 1 : 0;
    std::printf("sum/average argmax agreement: %zu/%zu\n", agree, labels.size());
    write_text_file(out, metrics_csv(records));
    if (!roc.empty()) write_text_file(roc, roc_text);
    return 0;
  }
};

struct FedFlags {
  std::string model = "vgg";
  std::uint64_t seed = 1;
  DataFlags data;
  TrainFlags train;
  std::size_t clients = 5;
  std::size_t rounds = 3;
  double top_frac = 0.8;
  std::size_t min_clients = 1;
  std::string shard = "iid";
  std::string aggregate = "none";

  FedFlags() { train.epochs = 2; }

  void add(CLI::App* app, bool rounds_flag) {
    app->add_option("--model", model, "Architecture federated by every client")
        ->capture_default_str()
        ->check(model_name_validator());
    app->add_option("--seed", seed, "Seed for data, sharding, initial model and local training")
        ->capture_default_str();
    add_data_flags(app, data);
    add_train_flags(app, train, "--local-epochs");
    app->add_option("--clients", clients, "Number of clients (hospitals)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    if (rounds_flag) {
      app->add_option("--rounds", rounds, "Federated rounds")->capture_default_str()->check(CLI::PositiveNumber);
      app->add_option("--top-frac", top_frac, "Fraction of updates kept before promotion")
          ->capture_default_str()
          ->check(CLI::Range(1e-9, 1.0));
      app->add_option("--min-clients", min_clients, "Quorum of updates per round")->capture_default_str();
      app->add_option("--aggregate", aggregate, "'none', or 'avg' to also try an accuracy-weighted average")
          ->capture_default_str()
          ->check(CLI::IsMember({"none", "avg"}));
    }
    app->add_option("--shard", shard, "Sharding of the training split: iid or label_skew")
        ->capture_default_str()
        ->check(CLI::IsMember({"iid", "label_skew", "label-skew"}));
  }

  struct Setup {
    Prepared data;
    FederationConfig cfg;
  };

  Setup setup() const {
    Setup s{prepare_data(data, seed), {}};
    s.data.arch.dropout_rate = train.dropout;
    s.cfg.arch = parse_architecture(model);
    s.cfg.arch_options = s.data.arch;
    s.cfg.local_train = make_train_config(train, seed);
    s.cfg.clients = clients;
    s.cfg.rounds = rounds;
    s.cfg.top_fraction = top_frac;
    s.cfg.min_clients = min_clients;
    s.cfg.shard_mode = parse_shard_mode(shard);
    s.cfg.aggregate_average = aggregate == "avg";
    s.cfg.seed = seed;
    s.cfg.validate();
    return s;
  }
};

void finish_federation(const std::vector<RoundSummary>& log, const RoundCoordinator& coord, const std::string& out,
                       const std::string& global_out) {
  write_text_file(out, round_log_csv(log));
  if (!global_out.empty()) save_artifact(global_out, coord.state().global);
  for (const auto& r : log) {
    std::printf("round %u promoted=%d client=%s global_accuracy=%.4f\n", r.round, r.promoted ? 1 : 0,
                r.promoted_client ? std::to_string(*r.promoted_client).c_str() : "-", r.global_accuracy);
  }
  std::printf("wrote %s\n", out.c_str());
}

struct FedSimCmd {
  FedFlags fed;
  std::string out = "fed_log.csv";
  std::string global_out;

  int run() const {
    auto s = fed.setup();
    RoundCoordinator coord = make_coordinator(s.cfg, s.data.test);
    std::vector<FedClient> clients = make_clients(s.cfg, s.data.train);
    const auto log = run_simulation(coord, clients, s.cfg.rounds);
    finish_federation(log, coord, out, global_out);
    return 0;
  }
};

struct FedServerCmd {
  FedFlags fed;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7878;
  std::string port_file;
  std::size_t register_timeout_ms = 30'000;
  std::size_t round_timeout_ms = 600'000;
  std::string out = "fed_log.csv";
  std::string global_out;

  int run() const {
    auto s = fed.setup();
    RoundCoordinator coord = make_coordinator(s.cfg, s.data.test);
    ServerOptions opts;
    opts.host = host;
    opts.port = port;
    opts.expected_clients = s.cfg.clients;
    opts.rounds = s.cfg.rounds;
    opts.register_timeout = std::chrono::milliseconds(register_timeout_ms);
    opts.round_timeout = std::chrono::milliseconds(round_timeout_ms);
    opts.on_listening = [this](std::uint16_t bound) {
      std::printf("listening on %s:%u\n", host.c_str(), static_cast<unsigned>(bound));
      std::fflush(stdout);
      if (!port_file.empty()) write_text_file(port_file, std::to_string(bound) + "\n");
    };
    const auto log = run_server(opts, coord);
    finish_federation(log, coord, out, global_out);
    return 0;
  }
};

struct FedClientCmd {
  FedFlags fed;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7878;
  std::uint32_t id = 0;

  int run() const {
    auto s = fed.setup();
    FedClient client = make_client(s.cfg, s.data.train, id);
    spdlog::info("client {} holds {} samples", id, client.shard().size());
    const std::size_t rounds = run_client({host, port}, client);
    std::printf("client %u served %zu rounds\n", id, rounds);
    return 0;
  }
};

struct ReportCmd {
  std::vector<std::string> metrics;
  std::string out = "comparison.csv";

  int run() const {
    std::vector<MetricRecord> records;
    for (const auto& f : metrics) {
      if (!fs::exists(f)) throw std::runtime_error("missing metrics file " + f);
      auto r = parse_metrics_csv(read_text_file(f));
      records.insert(records.end(), r.begin(), r.end());
    }
    std::vector<ComparisonRow> rows = comparison_rows(records);
    // Individual models first in the usual order, then fusion rows, then anything else.
    std::vector<std::string> canonical;
    for (ArchitectureId a : kAllArchitectures) canonical.emplace_back(architecture_display_name(a));
    for (FusionMode m : kAllFusionModes) canonical.push_back(fusion_display_name(m));
    auto rank = [&](const ComparisonRow& r) {
      for (std::size_t i = 0; i < canonical.size(); ++i) {
        if (canonical[i] == r.classifier) return i;
      }
      return canonical.size();
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
    const std::string csv = comparison_csv(rows);
    write_text_file(out, csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
  }
};

}  // namespace

int run_cli(int argc, char** argv) {
  init_logging();
  CLI::App app{"Federated ensemble image classification toolkit", "fedfusion"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainCmd train_cmd;
  auto* train = app.add_subcommand("train", "Train one model and write its model file and training curves");
  train->add_option("--model", train_cmd.model, "Architecture")->required()->check(model_name_validator());
  train->add_option("--seed", train_cmd.seed, "Seed for data, initialisation and training")->capture_default_str();
  add_data_flags(train, train_cmd.data);
  add_train_flags(train, train_cmd.train);
  train->add_option("--out", train_cmd.out, "Model file (default <model>.fmodel)");
  train->add_option("--curves", train_cmd.curves, "Training curves CSV (default <out>.curves.csv)");
  train->add_option("--metrics", train_cmd.metrics, "Also write test-split metrics CSV here");
  train->add_option("--roc", train_cmd.roc, "Also write ROC points CSV here");
  train->callback([&] { action = [&] { return train_cmd.run(); }; });

  EvaluateCmd eval_cmd;
  auto* evaluate_sub = app.add_subcommand("evaluate", "Evaluate a model file on the test split");
  evaluate_sub->add_option("--model-file", eval_cmd.model_file, "Model file")->required();
  evaluate_sub->add_option("--name", eval_cmd.name, "Classifier name in the metrics file");
  evaluate_sub->add_option("--seed", eval_cmd.seed, "Seed the model was trained with (selects the split)")
      ->capture_default_str();
  add_data_flags(evaluate_sub, eval_cmd.data);
  evaluate_sub->add_option("--metrics", eval_cmd.metrics, "Metrics CSV output");
  evaluate_sub->add_option("--roc", eval_cmd.roc, "ROC points CSV output");
  evaluate_sub->callback([&] { action = [&] { return eval_cmd.run(); }; });

  EnsembleCmd ens_cmd;
  auto* ensemble = app.add_subcommand("ensemble", "Fuse 2-4 trained models by sum and average");
  ensemble->add_option("--models", ens_cmd.models, "Model files")->required()->expected(1, 16);
  ensemble->add_flag("--logits", ens_cmd.logits, "Fuse pre-softmax scores instead of probabilities");
  ensemble->add_option("--seed", ens_cmd.seed, "Seed the models were trained with (selects the split)")
      ->capture_default_str();
  add_data_flags(ensemble, ens_cmd.data);
  ensemble->add_option("--out", ens_cmd.out, "Metrics CSV output")->capture_default_str();
  ensemble->add_option("--roc", ens_cmd.roc, "ROC points CSV output");
  ensemble->callback([&] { action = [&] { return ens_cmd.run(); }; });

  FedSimCmd sim_cmd;
  auto* sim = app.add_subcommand("fed-sim", "Run a federated simulation in-process");
  sim_cmd.fed.add(sim, true);
  sim->add_option("--out", sim_cmd.out, "Round log CSV")->capture_default_str();
  sim->add_option("--global-out", sim_cmd.global_out, "Write the final global model here");
  sim->callback([&] { action = [&] { return sim_cmd.run(); }; });

  FedServerCmd server_cmd;
  auto* server = app.add_subcommand("fed-server", "Serve federated rounds over TCP");
  server_cmd.fed.add(server, true);
  server->add_option("--host", server_cmd.host, "Listen address")->capture_default_str();
  server->add_option("--port", server_cmd.port, "Listen port (0 picks a free one)")->capture_default_str();
  server->add_option("--port-file", server_cmd.port_file, "Write the bound port to this file");
  server->add_option("--register-timeout-ms", server_cmd.register_timeout_ms, "Time allowed for registration")
      ->capture_default_str();
  server->add_option("--round-timeout-ms", server_cmd.round_timeout_ms, "Time allowed per round")
      ->capture_default_str();
  server->add_option("--out", server_cmd.out, "Round log CSV")->capture_default_str();
  server->add_option("--global-out", server_cmd.global_out, "Write the final global model here");
  server->callback([&] { action = [&] { return server_cmd.run(); }; });

  FedClientCmd client_cmd;
  auto* client = app.add_subcommand("fed-client", "Join a federated server as one client");
  client_cmd.fed.add(client, false);
  client->add_option("--host", client_cmd.host, "Server address")->capture_default_str();
  client->add_option("--port", client_cmd.port, "Server port")->capture_default_str();
  client->add_option("--id", client_cmd.id, "Client id in [0, clients)")->required();
  client->callback([&] { action = [&] { return client_cmd.run(); }; });

  ReportCmd report_cmd;
  auto* report = app.add_subcommand("report", "Build the model comparison table from metrics files");
  report->add_option("--metrics", report_cmd.metrics, "Metrics CSV files")->required()->expected(1, 64);
  report->add_option("--out", report_cmd.out, "Comparison CSV output")->capture_default_str();
  report->callback([&] { action = [&] { return report_cmd.run(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action ? action() : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fedfusion
