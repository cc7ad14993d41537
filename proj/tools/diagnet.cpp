// diagnet: generate datasets, train and specialise models, diagnose samples
// and run the benchmark. Exit codes: 0 success, 1 usage, 2 data or contract.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "diagnet/container.hpp"
#include "diagnet/eval.hpp"
#include "diagnet/inference.hpp"

namespace {

using namespace diagnet;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

void run_gen(const GenArgs& a) {
  auto cfg = a.config.empty() ? sim::default_sim_config() : sim::sim_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  write_dataset(sim::generate_dataset(cfg), a.out);
}

struct TrainArgs {
  std::string data, model = "diagnet", out, hidden, protocol;
  std::optional<std::uint64_t> seed;
};

void run_train(const TrainArgs& a) {
  auto kind = parse_model_kind(a.model);
  Protocol p;
  if (!a.protocol.empty()) p = protocol_from_json(read_json_file(a.protocol));
  if (a.seed) {
    p.train.seed = *a.seed;
    p.forest.seed = *a.seed;
  }
  auto data = read_dataset(a.data);
  auto hidden = split_list(a.hidden);
  auto split = split_hidden(data, hidden);
  if (split.train.empty()) throw DataError("training split is empty");

  json training = {{"hidden", hidden}, {"train_samples", split.train.size()}};
  ModelContainer c;
  switch (kind) {
    case ModelKind::DiagNet: {
      auto res = diagnet::train(data.schema, split.train, p.train);
      if (res.history.degenerate) std::cerr << "warning: training data holds a single coarse class\n";
      training["config"] = to_json(p.train);
      training["history"] = history_json(res.history);
      c = make_container(res.model, data.schema, data.config_digest, training);
      break;
    }
    case ModelKind::Forest:
      training["config"] = to_json(p.forest);
      c = make_container(train_forest(split.train, p.forest), data.schema, data.config_digest, training);
      break;
    case ModelKind::Bayes:
      training["config"] = to_json(p.bayes);
      c = make_container(fit_bayes(data.schema, split.train, p.bayes), data.config_digest, training);
      break;
  }
  write_container(c, a.out);
  std::cout << "model_digest " << c.model_digest() << "\n";
}

struct TransferArgs {
  std::string model, data, service, out, protocol;
  std::optional<std::size_t> epochs;
};

void run_transfer(const TransferArgs& a) {
  auto general = read_container(a.model);
  auto data = read_dataset(a.data);
  general.require_schema(data.schema, "dataset");
  auto model = general.coarse();
  Protocol p;
  if (!a.protocol.empty()) p = protocol_from_json(read_json_file(a.protocol));
  TrainConfig tc = p.train;
  tc.max_epochs = a.epochs.value_or(p.transfer.max_epochs);
  tc.min_delta = p.transfer.min_delta;

  // Same landmark view as the general model saw.
  std::vector<std::uint8_t> known(data.schema.landmark_count(), 0);
  for (const auto& id : model.trained_landmarks) known[data.schema.landmark_index(id)] = 1;
  const int svc = data.service_index(a.service);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    if (data.split[i] != Split::Train || s.service_id != svc) continue;
    if (cohort_of(s, data.schema, known) == Cohort::New) continue;
    samples.push_back(restrict(s, known));
  }
  if (samples.empty()) throw DataError("no training samples for service '" + a.service + "'");
  auto res = transfer(model, samples, tc);
  json training = {{"base_model_digest", general.model_digest()},
                   {"service", a.service},
                   {"train_samples", samples.size()},
                   {"config", to_json(tc)},
                   {"history", history_json(res.history)}};
  auto c = make_container(res.model, data.schema, data.config_digest, training);
  write_container(c, a.out);
  std::cout << "best_epoch " << res.history.best_epoch << "\nmodel_digest " << c.model_digest() << "\n";
}

struct DiagnoseArgs {
  std::string model, aux, sample, data;
  std::optional<std::size_t> row;
  std::size_t top = 0;
};

void run_diagnose(const DiagnoseArgs& a) {
  auto mc = read_container(a.model);
  auto model = mc.coarse();
  std::optional<ForestModel> forest;
  if (!a.aux.empty()) {
    auto ac = read_container(a.aux);
    ac.require_schema(mc.schema, "auxiliary model");
    forest = ac.forest();
  }
  Sample s;
  if (!a.sample.empty()) {
    s = sample_from_json(read_json_file(a.sample), mc.schema);
  } else {
    if (a.data.empty() || !a.row) throw ContractViolation("diagnose needs --sample, or --data with --row");
    auto data = read_dataset(a.data);
    mc.require_schema(data.schema, "dataset");
    if (*a.row >= data.size()) throw IndexError("row " + std::to_string(*a.row) + " is out of range");
    s = data.samples[*a.row];
  }
  auto d = diagnose(model, forest ? &*forest : nullptr, s, mc.schema);
  std::cout << to_json(d, mc.schema, a.top).dump(2) << "\n";
}

struct BenchArgs {
  std::string protocol, out, data;
};

void run_bench(const BenchArgs& a) {
  auto p = protocol_from_json(read_json_file(a.protocol));
  std::optional<Dataset> data;
  if (!a.data.empty()) data = read_dataset(a.data);
  auto r = run_benchmark(p, data ? &*data : nullptr);
  write_report(r, a.out);
  for (const auto& row : r.recalls)
    if (row.k == 1) std::printf("%-8s %-9s Recall@1 %.3f [%.3f, %.3f] n=%zu\n", row.model.c_str(), row.cohort.c_str(),
                                row.recall, row.ci.lo, row.ci.hi, row.n);
}

void run_report(const std::string& path) {
  std::filesystem::path p(path);
  if (std::filesystem::is_directory(p)) p /= "report.json";
  auto j = read_json_file(p.string());
  std::printf("%-8s %-9s %4s %7s %17s %6s\n", "model", "cohort", "k", "recall", "95% CI", "n");
  for (const auto& r : j.at("recalls"))
    std::printf("%-8s %-9s %4zu %7.3f   [%.3f, %.3f] %6zu\n", r.at("model").get<std::string>().c_str(),
                r.at("cohort").get<std::string>().c_str(), r.at("k").get<std::size_t>(), r.at("recall").get<double>(),
                r.at("ci_low").get<double>(), r.at("ci_high").get<double>(), r.at("n").get<std::size_t>());
  if (j.contains("transfer") && !j["transfer"]["services"].empty())
    std::printf("transfer median best epoch %.1f\n", j["transfer"]["median_best_epoch"].get<double>());
  if (j.contains("meta") && j["meta"].contains("reference_combined_recall1"))
    std::printf("reference combined Recall@1 %.3f\n", j["meta"]["reference_combined_recall1"].get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiagNet root-cause analysis toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--config", gen.config, "Simulation config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Dataset file to write")->required();
  g->add_option("--seed", gen.seed, "Override the config seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on the training split");
  t->add_option("--data", tr.data, "Dataset file")->required()->check(CLI::ExistingFile);
  t->add_option("--model", tr.model, "diagnet, forest or bayes")->check(CLI::IsMember({"diagnet", "forest", "bayes"}));
  t->add_option("--out", tr.out, "Model container to write")->required();
  t->add_option("--hidden", tr.hidden, "Comma-separated landmarks withheld from training");
  t->add_option("--protocol", tr.protocol, "Protocol JSON supplying hyperparameters")->check(CLI::ExistingFile);
  t->add_option("--seed", tr.seed, "Override the training seed");

  TransferArgs tf;
  auto* x = app.add_subcommand("transfer", "Specialise a general DiagNet model to one service");
  x->add_option("--model", tf.model, "General model container")->required()->check(CLI::ExistingFile);
  x->add_option("--data", tf.data, "Dataset file")->required()->check(CLI::ExistingFile);
  x->add_option("--service", tf.service, "Service name")->required();
  x->add_option("--out", tf.out, "Model container to write")->required();
  x->add_option("--protocol", tf.protocol, "Protocol JSON supplying hyperparameters")->check(CLI::ExistingFile);
  x->add_option("--epochs", tf.epochs, "Maximum epochs");

  DiagnoseArgs dg;
  auto* d = app.add_subcommand("diagnose", "Rank the probable causes of one sample");
  d->add_option("--model", dg.model, "DiagNet model container")->required()->check(CLI::ExistingFile);
  d->add_option("--aux", dg.aux, "Forest container for ensemble averaging")->check(CLI::ExistingFile);
  auto* sample_opt = d->add_option("--sample", dg.sample, "Sample JSON")->check(CLI::ExistingFile);
  auto* data_opt = d->add_option("--data", dg.data, "Dataset file")->check(CLI::ExistingFile);
  d->add_option("--row", dg.row, "Row of --data to diagnose")->needs(data_opt);
  d->add_option("--top", dg.top, "Print only the first N causes");
  sample_opt->excludes(data_opt);

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Run the evaluation protocol");
  b->add_option("--protocol", bn.protocol, "Protocol JSON")->required()->check(CLI::ExistingFile);
  b->add_option("--out", bn.out, "Output directory")->required();
  b->add_option("--data", bn.data, "Reuse a dataset generated from the protocol's config")->check(CLI::ExistingFile);

  std::string report_in;
  auto* r = app.add_subcommand("report", "Print the recall table of a benchmark report");
  r->add_option("--in", report_in, "report.json or the directory holding it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*g) run_gen(gen);
    else if (*t) run_train(tr);
    else if (*x) run_transfer(tf);
    else if (*d) run_diagnose(dg);
    else if (*b) run_bench(bn);
    else if (*r) run_report(report_in);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const IndexError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed document: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
