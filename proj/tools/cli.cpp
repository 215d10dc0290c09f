#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "debgcd/config.hpp"
#include "debgcd/data.hpp"
#include "debgcd/errors.hpp"
#include "debgcd/eval.hpp"
#include "debgcd/model.hpp"
#include "debgcd/monitor.hpp"
#include "debgcd/trainer.hpp"
#include "json.hpp"

namespace debgcd::cli {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthArgs {
  std::string out;
  data::SynthSpec spec;
};

struct TrainArgs {
  std::string features, labels, config, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool print_config = false;
};

struct EvalArgs {
  std::string checkpoint, features, labels;
};

struct InspectArgs {
  std::string log;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto& s = a.spec;
  if (s.num_classes < 2) throw UsageError("--classes must be at least 2");
  if (s.num_old < 1 || s.num_old > s.num_classes) throw UsageError("--old must be in [1, --classes]");
  if (s.per_class < 2) throw UsageError("--per-class must be at least 2");
  if (s.dim < 2) throw UsageError("--dim must be at least 2");
  if (!(s.cluster_sigma >= 0.0)) throw UsageError("--sigma must be non-negative");
  const auto ds = data::synth_generate(s);
  const fs::path fpath = a.out + ".dgce";
  const fs::path lpath = a.out + ".dgcl";
  if (fpath.has_parent_path()) fs::create_directories(fpath.parent_path());
  data::save_embeddings(ds, fpath, lpath);
  out << "wrote " << fpath.string() << " and " << lpath.string() << ": n=" << ds.size()
      << " d=" << ds.dim() << " K=" << ds.num_classes << " M=" << ds.num_old
      << " labelled=" << ds.labelled_count() << '\n';
  return kExitOk;
}

Config resolve_config(const TrainArgs& a) {
  std::string text;
  if (a.config.empty()) {
    text = Config{}.to_text();
  } else {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot read config file " + a.config);
    std::stringstream ss;
    ss << in.rdbuf();
    text = parse_config(ss.str()).to_text();
  }
  std::vector<std::string> extra = a.overrides;
  if (a.seed) extra.push_back("seed=" + std::to_string(*a.seed));
  for (const auto& kv : extra) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string prefix = kv.substr(0, eq + 1);
    std::istringstream lines(text);
    std::string line, rebuilt;
    bool found = false;
    while (std::getline(lines, line)) {
      if (line.rfind(prefix, 0) == 0) {
        line = kv;
        found = true;
      }
      rebuilt += line + '\n';
    }
    if (!found) throw ConfigError("unknown config key '" + kv.substr(0, eq) + "'");
    text = rebuilt;
  }
  return parse_config(text);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const Config config = resolve_config(a);
  if (a.print_config) {
    out << config.to_text();
    return kExitOk;
  }
  if (a.features.empty() || a.labels.empty() || a.out_dir.empty()) {
    throw UsageError("train requires --features, --labels and --out-dir");
  }
  const auto ds = data::load_embeddings(a.features, a.labels);
  fs::create_directories(a.out_dir);
  const fs::path log_path = fs::path(a.out_dir) / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());

  train::EpochHook hook;
  if (ds.ground_truth) hook = train::make_monitor(ds);
  auto result = train::train(ds.training_view(), config, hook, &log);
  log.close();
  model::save_checkpoint(result.model, config, fs::path(a.out_dir) / "checkpoint.dgck");

  std::size_t empty_batches = 0;
  for (const auto& s : result.log.steps) empty_batches += s.empty_labelled ? 1 : 0;
  if (empty_batches > 0) err << "warning: " << empty_batches << " steps had no labelled rows\n";

  if (ds.ground_truth) {
    out << eval::to_json(eval::evaluate(result.model, ds, config.tau_s, config.tau_o)) << '\n';
  } else {
    err << "labels carry no ground truth; skipping final evaluation\n";
  }
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto [config, model] = model::load_checkpoint(a.checkpoint);
  const auto ds = data::load_embeddings(a.features, a.labels);
  out << eval::to_json(eval::evaluate(model, ds, config.tau_s, config.tau_o)) << '\n';
  return kExitOk;
}

const char* const kLossKeys[] = {"cls_u", "cls_s", "cls", "rep",   "gcd",   "sdl_s",
                                 "sdl_u", "sdl",   "adl_s", "adl_u", "adl", "all"};

std::string cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v.get<double>());
  return buf;
}

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.log);
  if (!in) throw DataError("cannot read " + a.log);
  out << "epoch";
  for (const char* k : kLossKeys) out << ',' << k;
  out << ",acc_all,acc_old,acc_new,auroc,utilization_old,utilization_new\n";

  std::string line;
  std::size_t lineno = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("type") != "epoch") continue;
      std::ostringstream row;
      row << j.at("epoch").get<int>();
      const auto& losses = j.at("losses");
      for (const char* k : kLossKeys) row << ',' << cell(losses.at(k));
      const auto& ev = j.at("eval");
      for (const char* k : {"acc_all", "acc_old", "acc_new", "auroc"}) {
        row << ',' << (ev.is_null() ? std::string() : cell(ev.at(k)));
      }
      row << ',' << cell(j.at("utilization_old")) << ',' << cell(j.at("utilization_new"));
      out << row.str() << '\n';
    } catch (const nlohmann::json::exception& e) {
      ++skipped;
      err << "warning: " << a.log << ":" << lineno << ": skipped malformed line (" << e.what() << ")\n";
    }
  }
  if (skipped > 0) err << "skipped " << skipped << " malformed lines\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Debiased generalized category discovery on precomputed embeddings"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a clustered synthetic DGCE/DGCL pair");
  s->add_option("--out", synth.out, "Output prefix (<out>.dgce, <out>.dgcl)")->required();
  s->add_option("--classes", synth.spec.num_classes, "Total classes K")->capture_default_str();
  s->add_option("--old", synth.spec.num_old, "Old classes M")->capture_default_str();
  s->add_option("--per-class", synth.spec.per_class, "Rows per class")->capture_default_str();
  s->add_option("--dim", synth.spec.dim, "Feature dimension")->capture_default_str();
  s->add_option("--sigma", synth.spec.cluster_sigma, "Within-class noise")->capture_default_str();
  s->add_option("--seed", synth.spec.seed, "Generator seed")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model and write checkpoint.dgck + train_log.jsonl");
  t->add_option("--features", train.features, "DGCE feature file");
  t->add_option("--labels", train.labels, "DGCL label file");
  t->add_option("--config", train.config, "Config file (key=value lines); defaults if omitted");
  t->add_option("--out-dir", train.out_dir, "Output directory");
  t->add_option("--seed", train.seed, "Override the config seed");
  t->add_option("--set", train.overrides, "Override one config key (key=value); repeatable");
  t->add_flag("--print-config", train.print_config, "Print the resolved config and exit");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the unlabelled rows");
  e->add_option("--checkpoint", ev.checkpoint, "DGCK checkpoint")->required();
  e->add_option("--features", ev.features, "DGCE feature file")->required();
  e->add_option("--labels", ev.labels, "DGCL label file")->required();

  InspectArgs insp;
  auto* i = app.add_subcommand("inspect", "Summarize a training log as CSV");
  i->add_option("--log", insp.log, "train_log.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    std::ostringstream o, eo;
    const int code = app.exit(pe, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(ev, out);
    return cmd_inspect(insp, out, err);
  } catch (const UsageError& ue) {
    err << "usage error: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace debgcd::cli
