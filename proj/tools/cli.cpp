#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "plot.hpp"
#include "run_manifest.hpp"
#include "xastruct/config.hpp"
#include "xastruct/crystal.hpp"
#include "xastruct/dataset_io.hpp"
#include "xastruct/error.hpp"
#include "xastruct/gradcheck.hpp"
#include "xastruct/pipelines.hpp"
#include "xastruct/synth.hpp"

namespace xastruct::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
namespace pl = pipelines;

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "xastruct-run";
  std::vector<std::string> set;  // key=value overrides
};

void AddCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
  cmd->add_option("--out", c.out, "run directory")->capture_default_str();
  cmd->add_option("--set", c.set, "override a config key, key=value");
}

// Precedence: flags > file > defaults.
KeyValueConfig ResolveConfig(const Common& c) {
  KeyValueConfig cfg;
  if (!c.config.empty()) cfg = KeyValueConfig::Load(c.config);
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kUsage, "--set expects key=value, got '" + kv + "'");
    }
    cfg.Set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.Set("seed", std::to_string(*c.seed));
  return cfg;
}

RunManifest StartManifest(const std::string& command, const Common& c,
                          const std::vector<std::string>& args, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.arguments = args;
  if (!c.config.empty()) {
    m.config_path = fs::path(c.config).generic_string();
    m.AddInput(c.config);
  }
  m.seed = seed;
  return m;
}

void Emit(RunManifest& manifest, const fs::path& run_dir, const fs::path& path,
          const std::string& text) {
  io::WriteText(path, text);
  manifest.AddOutput(run_dir, path);
}

// Every file a dataset manifest points at, so the hash covers the data.
void AddDatasetInputs(RunManifest& m, const fs::path& manifest_path) {
  m.AddInput(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::vector<std::string> files;
  for (const auto& r : io::ReadManifest(manifest_path)) {
    if (!r.structure.empty()) files.push_back((base / r.structure).generic_string());
    for (const auto& p : {r.xanes, r.exafs}) {
      files.push_back((base / p).generic_string());
      files.push_back(io::SidecarPath(base / p).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  for (const auto& f : files) m.AddInput(f);
}

std::string ScopeFileKey(const std::string& scope_key) {
  std::string out = scope_key;
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return out;
}

// ---- synth ------------------------------------------------------------------

int Synth(const Common& c, const std::optional<std::size_t>& n,
          const std::string& elements, const std::vector<std::string>& args) {
  KeyValueConfig cfg = ResolveConfig(c);
  if (n) cfg.Set("n_samples", std::to_string(*n));
  if (!elements.empty()) cfg.Set("elements", elements);
  const auto sc = synth::SynthConfig::FromConfig(cfg);
  const fs::path run_dir = c.out;
  auto manifest = StartManifest("synth", c, args, sc.seed);

  const auto samples = synth::Generate(sc);
  const fs::path dataset = synth::WriteDataset(samples, run_dir);

  // Round-trip: labels written must match a fresh extraction from the
  // structures on disk.
  const fs::path base = dataset.parent_path();
  for (const auto& r : io::ReadManifest(dataset)) {
    const auto s = io::ReadStructures(base / r.structure).front();
    const auto fresh = ExtractDescriptors(s, r.absorber_index);
    if (fresh.cn != r.labels.cn || fresh.neighbor_type != r.labels.neighbor_type ||
        std::abs(fresh.mnnd - r.labels.mnnd) > 1e-9) {
      throw Error(ErrorCode::kLabel, "labels of " + r.id + " do not survive a round trip");
    }
    for (const auto& p : {r.structure, r.xanes, r.exafs}) {
      manifest.AddOutput(run_dir, base / p);
      if (p != r.structure) manifest.AddOutput(run_dir, io::SidecarPath(base / p));
    }
  }
  manifest.AddOutput(run_dir, dataset);
  manifest.Write(run_dir);
  std::cout << "wrote " << samples.size() << " samples to " << dataset.generic_string()
            << "\n";
  return kExitOk;
}

// ---- extract ----------------------------------------------------------------

int Extract(const Common& c, const std::string& input, const std::vector<std::size_t>& sites,
            const std::vector<std::string>& elements, const std::vector<std::string>& args) {
  const KeyValueConfig cfg = ResolveConfig(c);
  const double tol = cfg.GetDouble("shell_tolerance", kDefaultShellTolerance);
  const double radius = cfg.GetDouble("search_radius", kDefaultCutoff);
  auto manifest = StartManifest("extract", c, args,
                                static_cast<std::uint64_t>(cfg.GetInt("seed", 0)));
  manifest.AddInput(input);

  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".json" || ext == ".jsonl")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  std::vector<Element> wanted;
  for (const auto& sym : elements) wanted.push_back(Element::FromSymbol(sym));

  std::string out;
  for (const auto& f : files) {
    for (const auto& s : io::ReadStructures(f)) {
      std::vector<std::size_t> absorbers;
      if (!wanted.empty()) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (std::find(wanted.begin(), wanted.end(), s.sites()[i].element) != wanted.end()) {
            absorbers.push_back(i);
          }
        }
      }
      for (std::size_t i : sites) absorbers.push_back(i);
      if (sites.empty() && wanted.empty()) absorbers.push_back(0);
      std::sort(absorbers.begin(), absorbers.end());
      absorbers.erase(std::unique(absorbers.begin(), absorbers.end()), absorbers.end());
      for (std::size_t a : absorbers) {
        if (a >= s.size()) {
          throw Error(ErrorCode::kOutOfRange, s.id() + ": no site " + std::to_string(a));
        }
        json line = {{"structure_id", s.id()},
                     {"absorber_index", a},
                     {"absorber", s.sites()[a].element.symbol()},
                     {"labels", io::LabelsToJson(ExtractDescriptors(s, a, tol, radius))}};
        out += line.dump() + "\n";
      }
    }
  }
  const fs::path run_dir = c.out;
  Emit(manifest, run_dir, run_dir / "labels.jsonl", out);
  manifest.Write(run_dir);
  std::cout << out;
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

int Train(const Common& c, const std::string& task_name, const std::string& dataset,
          const std::string& scope, const std::vector<std::string>& args) {
  const pl::Task task = pl::ParseTask(task_name);
  KeyValueConfig cfg = ResolveConfig(c);
  if (!scope.empty()) cfg.Set("scope", scope);
  const auto tc = pl::TrainConfig::FromConfig(cfg);
  const fs::path run_dir = c.out;
  auto manifest = StartManifest("train", c, args, tc.seed);
  AddDatasetInputs(manifest, dataset);

  auto results = pl::Train(task, io::LoadDataset(dataset), tc);
  const std::string scope_name(pl::ToString(tc.scope.value_or(pl::DefaultScope(task))));
  json aggregate = {{"task", pl::ToString(task)},
                    {"scope", scope_name},
                    {"seed", tc.seed},
                    {"models", json::array()}};
  for (auto& r : results) {
    const std::string key = pl::ScopeKey(r.model);
    const std::string stem = std::string(pl::ToString(task)) + "_" + ScopeFileKey(key);
    const json report = pl::MetricsReport(task, key, r.metrics, r.n_train, r.n_val, tc.seed);
    aggregate["models"].push_back(report);
    Emit(manifest, run_dir, run_dir / ("metrics_" + stem + ".json"), report.dump(2) + "\n");
    Emit(manifest, run_dir, run_dir / "logs" / (stem + ".csv"), pl::EpochLogCsv(r.log));
    const fs::path ckpt = run_dir / "checkpoints" / (stem + ".json");
    pl::WriteCheckpoint(ckpt, r.model);
    manifest.AddOutput(run_dir, ckpt);
  }
  Emit(manifest, run_dir, run_dir / "metrics.json", aggregate.dump(2) + "\n");
  manifest.Write(run_dir);
  std::cout << aggregate.dump(2) << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

int Eval(const Common& c, const std::string& checkpoint, const std::string& dataset,
         const std::vector<std::string>& args) {
  const KeyValueConfig cfg = ResolveConfig(c);
  const auto seed = static_cast<std::uint64_t>(cfg.GetInt("seed", 0));
  const fs::path run_dir = c.out;
  auto manifest = StartManifest("eval", c, args, seed);
  manifest.AddInput(checkpoint);
  AddDatasetInputs(manifest, dataset);

  pl::Model model = pl::ReadCheckpoint(checkpoint);
  const auto samples = io::LoadDataset(dataset);
  const auto in_scope = pl::FilterToScope(model, samples);
  const Metrics m = pl::Evaluate(model, samples);
  const json report =
      pl::MetricsReport(pl::TaskOf(model), pl::ScopeKey(model), m, 0, in_scope.size(), seed);
  Emit(manifest, run_dir, run_dir / "metrics_eval.json", report.dump(2) + "\n");
  manifest.Write(run_dir);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---- predict ----------------------------------------------------------------

LabeledSample SampleFromInputs(const std::vector<std::string>& inputs, const std::string& id) {
  if (inputs.size() == 2) {
    LabeledSample s{io::ReadSpectrum(inputs[0]), io::ReadSpectrum(inputs[1]), {}, std::nullopt, 0};
    ValidateSample(s);
    return s;
  }
  if (fs::path(inputs[0]).extension() != ".jsonl") {
    throw Error(ErrorCode::kTaskMismatch,
                "spectral models take a XANES/EXAFS CSV pair or a dataset manifest");
  }
  auto samples = io::LoadDataset(inputs[0]);
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, inputs[0] + " lists no samples");
  if (id.empty()) return samples.front();
  for (auto& s : samples) {
    if (s.xanes.structure_id() == id) return s;
  }
  throw Error(ErrorCode::kOutOfRange, "no sample with id " + id);
}

int Predict(const Common& c, const std::string& checkpoint,
            const std::vector<std::string>& inputs, const std::string& expected_task,
            std::size_t absorber, const std::string& id, const std::vector<std::string>& args) {
  const KeyValueConfig cfg = ResolveConfig(c);
  const auto seed = static_cast<std::uint64_t>(cfg.GetInt("seed", 0));
  const fs::path run_dir = c.out;
  auto manifest = StartManifest("predict", c, args, seed);
  manifest.AddInput(checkpoint);
  for (const auto& in : inputs) manifest.AddInput(in);
  if (inputs.empty() || inputs.size() > 2) {
    throw Error(ErrorCode::kUsage, "predict takes one structure/manifest or two spectrum files");
  }

  pl::Model model = pl::ReadCheckpoint(checkpoint);
  const pl::Task task = pl::TaskOf(model);
  if (!expected_task.empty() && pl::ParseTask(expected_task) != task) {
    throw Error(ErrorCode::kTaskMismatch, "checkpoint holds a " + std::string(pl::ToString(task)) +
                                              " model, not " + expected_task);
  }

  if (auto* f = std::get_if<pl::ForwardModel>(&model)) {
    if (inputs.size() != 1 || fs::path(inputs[0]).extension() != ".json") {
      throw Error(ErrorCode::kTaskMismatch, "forward models take a structure file");
    }
    const auto s = io::ReadStructures(inputs[0]).front();
    if (absorber >= s.size()) {
      throw Error(ErrorCode::kOutOfRange, s.id() + ": no site " + std::to_string(absorber));
    }
    if (s.sites()[absorber].element != f->element()) {
      throw Error(ErrorCode::kScope, "model is for " + std::string(f->element().symbol()) +
                                         " absorbers");
    }
    const auto mu = pl::ForwardPredict(*f, BuildGraph(s, absorber));
    const Spectrum sp(f->grid(), mu, f->kind(), f->edge(), f->element(), s.id());
    const fs::path csv = run_dir / "prediction.csv";
    io::WriteSpectrum(csv, sp);
    manifest.AddOutput(run_dir, csv);
    manifest.AddOutput(run_dir, io::SidecarPath(csv));
    manifest.Write(run_dir);
    std::cout << io::ReadText(csv);
    return kExitOk;
  }

  const LabeledSample sample = SampleFromInputs(inputs, id);
  json result;
  if (auto* m = std::get_if<pl::InverseMnnd>(&model)) {
    result["mnnd_angstrom"] = pl::MnndPredict(*m, sample);
  } else if (auto* nb = std::get_if<pl::InverseNeighbor>(&model)) {
    const auto probs = pl::NeighborProbabilities(*nb, sample);
    result["neighbor_type"] = pl::NeighborPredict(*nb, sample).symbol();
    json p = json::object();
    for (std::size_t i = 0; i < probs.size(); ++i) p[std::string(nb->classes()[i].symbol())] = probs[i];
    result["probabilities"] = p;
  } else {
    result["cn"] = pl::CnPredict(std::get<pl::CnClassifier>(model), sample);
  }
  Emit(manifest, run_dir, run_dir / "prediction.json", result.dump(2) + "\n");
  manifest.Write(run_dir);
  std::cout << result.dump() << "\n";
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

int GradCheck(const Common& c, bool inject_fault, int seeds,
              const std::vector<std::string>& args, bool out_given) {
  const KeyValueConfig cfg = ResolveConfig(c);
  gradcheck::Options opt;
  opt.seeds = seeds;
  opt.inject_fault = inject_fault;
  opt.base_seed = static_cast<std::uint64_t>(cfg.GetInt("seed", static_cast<std::int64_t>(opt.base_seed)));
  opt.eps = cfg.GetDouble("gradcheck_eps", opt.eps);
  opt.tolerance = cfg.GetDouble("gradcheck_tolerance", opt.tolerance);
  const auto results = gradcheck::RunSuite(opt);
  const std::string report = gradcheck::FormatReport(results);
  std::cout << report;
  if (out_given) {
    const fs::path run_dir = c.out;
    auto manifest = StartManifest("gradcheck", c, args, opt.base_seed);
    Emit(manifest, run_dir, run_dir / "gradcheck.txt", report);
    manifest.Write(run_dir);
  }
  const bool ok = std::all_of(results.begin(), results.end(),
                              [](const auto& r) { return r.passed; });
  return ok ? kExitOk : kExitFailure;
}

// ---- plot -------------------------------------------------------------------

int Plot(const Common& c, const std::vector<std::string>& inputs, const std::string& title,
         const std::vector<std::string>& args) {
  const fs::path run_dir = c.out;
  auto manifest = StartManifest("plot", c, args, 0);
  std::vector<json> reports;
  std::vector<Series> series;
  for (const auto& in : inputs) {
    manifest.AddInput(in);
    const fs::path p = in;
    if (p.extension() == ".json") {
      CollectReports(json::parse(io::ReadText(p)), reports);
    } else if (p.extension() == ".csv") {
      for (auto& s : ReadSeries(p)) series.push_back(std::move(s));
    } else {
      throw Error(ErrorCode::kUsage, in + ": expected .json metrics or .csv spectra");
    }
  }
  if (!reports.empty()) {
    Emit(manifest, run_dir, run_dir / "errors.csv", ErrorTableCsv(reports));
  }
  if (!series.empty()) {
    Emit(manifest, run_dir, run_dir / "overlay.svg", OverlaySvg(series, title));
  }
  manifest.Write(run_dir);
  for (const auto& o : manifest.outputs) std::cout << "wrote " << o << "\n";
  return kExitOk;
}

}  // namespace

int RunCli(int argc, char** argv) {
  CLI::App app{"Structure descriptors and spectra: synthesis, training and inference"};
  app.name("xastruct");
  app.require_subcommand(1);

  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);

  Common synth_c, extract_c, train_c, eval_c, predict_c, grad_c, plot_c;

  auto* synth = app.add_subcommand("synth", "generate a synthetic labelled dataset");
  AddCommon(synth, synth_c);
  std::optional<std::size_t> n_samples;
  std::string synth_elements;
  synth->add_option("-n,--samples", n_samples, "number of samples");
  synth->add_option("--elements", synth_elements, "comma-separated element symbols");

  auto* extract = app.add_subcommand("extract", "CN, MNND and neighbor type of absorbers");
  AddCommon(extract, extract_c);
  std::string extract_input;
  std::vector<std::size_t> extract_sites;
  std::vector<std::string> extract_elements;
  extract->add_option("structures", extract_input, "structure file or directory")
      ->required()
      ->check(CLI::ExistingPath);
  extract->add_option("--absorber", extract_sites, "absorber site index (repeatable)");
  extract->add_option("--element", extract_elements, "every site of this element (repeatable)");

  auto* train = app.add_subcommand("train", "train a model for one task");
  AddCommon(train, train_c);
  std::string task_name, train_dataset, train_scope;
  train->add_option("task", task_name, "forward, mnnd, cn or neighbor")->required();
  train->add_option("dataset", train_dataset, "dataset manifest (.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--scope", train_scope, "per-element or unified");

  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on a dataset");
  AddCommon(eval, eval_c);
  std::string eval_ckpt, eval_dataset;
  eval->add_option("checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("dataset", eval_dataset)->required()->check(CLI::ExistingFile);

  auto* predict = app.add_subcommand("predict", "single-sample inference");
  AddCommon(predict, predict_c);
  std::string predict_ckpt, predict_task, predict_id;
  std::vector<std::string> predict_inputs;
  std::size_t predict_absorber = 0;
  predict->add_option("checkpoint", predict_ckpt)->required()->check(CLI::ExistingFile);
  predict->add_option("inputs", predict_inputs,
                      "structure .json, dataset .jsonl, or XANES and EXAFS .csv")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--task", predict_task, "fail unless the checkpoint is for this task");
  predict->add_option("--absorber", predict_absorber, "absorber site for structure input");
  predict->add_option("--id", predict_id, "sample id when the input is a manifest");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  AddCommon(grad, grad_c);
  bool inject_fault = false;
  int grad_seeds = gradcheck::Options{}.seeds;
  grad->add_flag("--inject-fault", inject_fault, "include a deliberately wrong backward");
  grad->add_option("--seeds", grad_seeds, "random seeds per case")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "error tables and spectrum overlays");
  AddCommon(plot, plot_c);
  std::vector<std::string> plot_inputs;
  std::string plot_title = "spectra";
  plot->add_option("inputs", plot_inputs, "metrics .json or spectrum .csv files")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--title", plot_title);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return Synth(synth_c, n_samples, synth_elements, args);
    if (*extract) return Extract(extract_c, extract_input, extract_sites, extract_elements, args);
    if (*train) return Train(train_c, task_name, train_dataset, train_scope, args);
    if (*eval) return Eval(eval_c, eval_ckpt, eval_dataset, args);
    if (*predict) {
      return Predict(predict_c, predict_ckpt, predict_inputs, predict_task, predict_absorber,
                     predict_id, args);
    }
    if (*grad) return GradCheck(grad_c, inject_fault, grad_seeds, args, grad->count("--out") > 0);
    if (*plot) return Plot(plot_c, plot_inputs, plot_title, args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kUsage ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xastruct::cli
