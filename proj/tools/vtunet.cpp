#include "vtu/dataset.hpp"
#include "vtu/io.hpp"
#include "vtu/keyvalue.hpp"
#include "vtu/metrics.hpp"
#include "vtu/staple.hpp"
#include "vtu/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vtu;

namespace {

std::string g_command_line;

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  KeyValues kv = path.empty() ? KeyValues{} : KeyValues::load(path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return TrainConfig::from_key_values(kv);
}

void write_run_manifest(const fs::path& dir, const std::string& subcommand, const KeyValues& extra,
                        const TrainConfig* cfg) {
  KeyValues kv;
  kv.set("version", VTU_VERSION);
  kv.set("subcommand", subcommand);
  kv.set("command", g_command_line);
  for (const auto& k : extra.keys()) kv.set(k, extra.get(k));
  if (cfg) {
    const auto c = cfg->to_key_values();
    for (const auto& k : c.keys()) kv.set("config." + k, c.get(k));
  }
  fs::create_directories(dir);
  write_text(dir / "run.txt", kv.to_text());
}

DatasetManifest open_dataset(const std::string& data, const TrainConfig& cfg) {
  if (!fs::exists(fs::path(data) / "manifest.txt")) throw std::runtime_error("dataset not found: " + data);
  auto m = read_manifest(data);
  if (m.spec.height != cfg.model.height || m.spec.width != cfg.model.width)
    throw ConfigError("dataset frames are " + std::to_string(m.spec.height) + "x" + std::to_string(m.spec.width) +
                      " but the config expects " + std::to_string(cfg.model.height) + "x" +
                      std::to_string(cfg.model.width));
  return m;
}

void write_metrics(const fs::path& path, const MetricReport& report) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(os, report);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- generate ------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  Index sequences = 20;
  std::uint64_t seed = 1;
  Index size = 64;
  Index length = 20;
};

int cmd_generate(const GenerateArgs& a) {
  SceneSpec spec;
  spec.seed = a.seed;
  spec.height = spec.width = a.size;
  spec.sequence_length = a.length;
  spec.validate();
  if (a.sequences < 1) throw std::invalid_argument("--sequences must be >= 1");
  const auto m = generate_dataset(a.out, spec, a.sequences);
  std::cout << "wrote " << m.sequences << " sequences (" << m.split.train.size() << " train, " << m.split.val.size()
            << " val, " << m.split.test.size() << " test) to " << a.out << "\n";
  return 0;
}

// ---- staple --------------------------------------------------------------

struct StapleArgs {
  std::vector<std::string> raters;
  std::string out;
};

int cmd_staple(const StapleArgs& a) {
  std::vector<fs::path> dirs(a.raters.begin(), a.raters.end());
  const auto s = fuse_dataset(dirs, a.out);
  std::cout << "fused " << s.frames << " frames (" << s.masks_written << " masks, " << s.non_converged
            << " not converged) into " << a.out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out, resume;
  std::vector<std::string> overrides;
  bool overfit_one = false;
  Index overfit_steps = 300;
  double overfit_target = 0.05;
  double overfit_lr = kOverfitLr;
};

int cmd_overfit(const TrainArgs& a, const TrainConfig& cfg, const DatasetManifest& m) {
  const auto stacks = load_split(a.data, m, "train", cfg.model.snippet_length);
  if (stacks.empty()) throw std::runtime_error("training split is empty");
  // The middle frame of the first training sequence carries a bolus.
  const FrameStack& sample = stacks[static_cast<std::size_t>(m.spec.sequence_length / 2)];
  const auto r = overfit_one(cfg, sample, a.overfit_steps, a.overfit_target, a.overfit_lr);
  KeyValues extra;
  extra.set("data", a.data);
  extra.set("overfit.frame", sample.frame_id());
  extra.set("overfit.lr", format_double(a.overfit_lr));
  write_run_manifest(a.out, "train --overfit-one", extra, &cfg);
  std::string csv = "step,loss\r\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) csv += std::to_string(i) + "," + format_double(r.losses[i]) + "\r\n";
  write_text(fs::path(a.out) / "overfit.csv", csv);
  std::cout << "overfit " << sample.frame_id() << ": loss " << r.losses.front() << " -> " << r.losses.back()
            << " after " << r.steps << " steps\n";
  if (!r.reached) {
    std::cerr << "vtunet: error: overfit loss " << r.losses.back() << " did not reach " << a.overfit_target
              << " within " << a.overfit_steps << " steps\n";
    return 3;
  }
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = load_config(a.config, a.overrides);
  const auto m = open_dataset(a.data, cfg);
  if (a.overfit_one) return cmd_overfit(a, cfg, m);

  const Index t = cfg.model.snippet_length;
  const auto train_set = load_split(a.data, m, "train", t);
  const auto val_set = load_split(a.data, m, "val", t);
  if (val_set.empty()) throw std::runtime_error("validation split is empty");
  KeyValues extra;
  extra.set("data", a.data);
  if (!a.resume.empty()) extra.set("resume", a.resume);
  write_run_manifest(a.out, "train", extra, &cfg);

  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  opts.on_epoch = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " train " << fmt(r.train_loss) << " val " << fmt(r.val_loss) << " dsc "
              << fmt(r.val_dsc_bolus) << "/" << fmt(r.val_dsc_pharynx) << " lr " << r.lr << std::endl;
  };
  const auto res = train(cfg, train_set, val_set, opts);
  std::cout << "best epoch " << res.best_epoch << ", checkpoints in " << a.out << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string data, checkpoint, split = "test", out;
  bool dump_attention = false;
  bool overlays = true;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(fs::path(a.checkpoint) / "meta.txt")) throw std::runtime_error("checkpoint not found: " + a.checkpoint);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto m = open_dataset(a.data, ck.config);
  const auto& model = ck.config.model;
  const auto stacks = load_split(a.data, m, a.split, model.snippet_length);
  if (stacks.empty()) throw std::runtime_error("split '" + a.split + "' is empty");

  KeyValues extra;
  extra.set("data", a.data);
  extra.set("checkpoint", a.checkpoint);
  extra.set("split", a.split);
  extra.set("checkpoint.epoch", std::to_string(ck.epoch));
  write_run_manifest(a.out, "eval", extra, &ck.config);

  const fs::path overlay_dir = a.overlays ? fs::path(a.out) / "overlays" : fs::path();
  const auto report = evaluate_stacks(model_predictor(ck.params, model), stacks, overlay_dir);
  write_metrics(fs::path(a.out) / "metrics.csv", report);

  if (a.dump_attention) {
    if (!model.uses_temporal_context()) throw ConfigError("--dump-attention needs a model with snippet_length > 1");
    const fs::path dir = fs::path(a.out) / "attention";
    fs::create_directories(dir);
    for (const auto& s : stacks) {
      auto id = s.frame_id();
      std::replace(id.begin(), id.end(), '/', '_');
      write_vtt1(dir / (id + ".vtt1"), model_forward_full(s.frames, ck.params, model).attn);
    }
  }
  for (Head h : {Head::Bolus, Head::Pharynx}) {
    const auto& r = report.head(h);
    std::cout << head_name(h) << ": dsc " << fmt(r.dsc) << " hd95 " << fmt(r.hd95) << " asd " << fmt(r.asd)
              << " sens " << fmt(r.sensitivity) << " spec " << fmt(r.specificity) << "\n";
  }
  std::cout << "mean dsc " << fmt(report.mean_of_heads.dsc) << " over " << stacks.size() << " frames\n";
  return 0;
}

// ---- ablate-snippet ------------------------------------------------------

struct AblateArgs {
  std::string data, config, out;
  std::vector<std::string> overrides;
  std::vector<Index> lengths{1, 3, 5, 7};
  Index seeds = 3;
  std::uint64_t seed_base = 1;
  Index jobs = 1;
};

struct AblateRun {
  Index length = 0;
  std::uint64_t seed = 0;
  Index best_epoch = 0;
  MetricReport report;
};

AblateRun ablate_one(const AblateArgs& a, const DatasetManifest& m, TrainConfig cfg, Index t, std::uint64_t seed) {
  cfg.model.snippet_length = t;
  cfg.seed = seed;
  const fs::path dir = fs::path(a.out) / ("t" + std::to_string(t) + "_s" + std::to_string(seed));
  const auto train_set = load_split(a.data, m, "train", t);
  const auto val_set = load_split(a.data, m, "val", t);
  const auto test_set = load_split(a.data, m, "test", t);
  TrainOptions opts;
  opts.out_dir = dir;
  auto res = train(cfg, train_set, val_set, opts);
  AblateRun r{t, seed, res.best_epoch, evaluate_stacks(model_predictor(res.best_params, cfg.model), test_set)};
  write_metrics(dir / "test_metrics.csv", r.report);
  return r;
}

int cmd_ablate(const AblateArgs& a) {
  const TrainConfig cfg = load_config(a.config, a.overrides);
  const auto m = open_dataset(a.data, cfg);
  if (a.lengths.empty()) throw std::invalid_argument("--lengths is empty");
  for (Index t : a.lengths)
    if (t < 1 || t % 2 == 0) throw ConfigError("snippet length " + std::to_string(t) + " must be odd and >= 1");
  if (a.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
  if (a.jobs < 1) throw std::invalid_argument("--jobs must be >= 1");
  if (m.split.test.empty() || m.split.val.empty()) throw std::runtime_error("dataset needs val and test sequences");

  KeyValues extra;
  extra.set("data", a.data);
  std::vector<std::string> ls;
  for (Index t : a.lengths) ls.push_back(std::to_string(t));
  extra.set("lengths", join(ls));
  extra.set("seeds", std::to_string(a.seeds));
  extra.set("seed_base", std::to_string(a.seed_base));
  write_run_manifest(a.out, "ablate-snippet", extra, &cfg);

  std::vector<std::pair<Index, std::uint64_t>> plan;
  for (Index t : a.lengths)
    for (Index s = 0; s < a.seeds; ++s) plan.emplace_back(t, a.seed_base + static_cast<std::uint64_t>(s));

  std::vector<AblateRun> runs(plan.size());
  for (std::size_t start = 0; start < plan.size(); start += static_cast<std::size_t>(a.jobs)) {
    const std::size_t stop = std::min(plan.size(), start + static_cast<std::size_t>(a.jobs));
    std::vector<std::future<AblateRun>> pending;
    for (std::size_t i = start; i < stop; ++i)
      pending.push_back(std::async(a.jobs > 1 ? std::launch::async : std::launch::deferred, ablate_one, std::cref(a),
                                   std::cref(m), cfg, plan[i].first, plan[i].second));
    for (std::size_t i = start; i < stop; ++i) {
      runs[i] = pending[i - start].get();
      const auto& r = runs[i];
      std::cout << "t=" << r.length << " seed=" << r.seed << " best_epoch=" << r.best_epoch << " dsc "
                << fmt(r.report.mean_of_heads.dsc) << " (bolus " << fmt(r.report.head(Head::Bolus).dsc)
                << ", pharynx " << fmt(r.report.head(Head::Pharynx).dsc) << ")" << std::endl;
    }
  }

  std::string per_run = "length,seed,best_epoch,dsc,dsc_bolus,dsc_pharynx,hd95,asd\r\n";
  for (const auto& r : runs)
    per_run += std::to_string(r.length) + "," + std::to_string(r.seed) + "," + std::to_string(r.best_epoch) + "," +
               format_double(r.report.mean_of_heads.dsc) + "," + format_double(r.report.head(Head::Bolus).dsc) +
               "," + format_double(r.report.head(Head::Pharynx).dsc) + "," +
               format_double(r.report.mean_of_heads.hd95) + "," + format_double(r.report.mean_of_heads.asd) + "\r\n";
  write_text(fs::path(a.out) / "runs.csv", per_run);

  std::string table = "length,seeds,median_dsc,median_dsc_bolus,median_dsc_pharynx\r\n";
  for (Index t : a.lengths) {
    std::vector<double> d, b, p;
    for (const auto& r : runs)
      if (r.length == t) {
        d.push_back(r.report.mean_of_heads.dsc);
        b.push_back(r.report.head(Head::Bolus).dsc);
        p.push_back(r.report.head(Head::Pharynx).dsc);
      }
    table += std::to_string(t) + "," + std::to_string(d.size()) + "," + format_double(median(d)) + "," +
             format_double(median(b)) + "," + format_double(median(p)) + "\r\n";
    std::cout << "t=" << t << " median dsc " << fmt(median(d)) << "\n";
  }
  write_text(fs::path(a.out) / "table.csv", table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Multi-frame bolus and pharynx segmentation on synthetic swallow videos"};
  app.set_version_flag("--version", std::string(VTU_VERSION));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--sequences", gen.sequences, "Number of sequences")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--size", gen.size, "Frame height and width (multiple of 16)")->capture_default_str();
  g->add_option("--length", gen.length, "Frames per sequence")->capture_default_str();

  StapleArgs st;
  auto* s = app.add_subcommand("staple", "Fuse rater masks with STAPLE");
  s->add_option("--raters", st.raters, "Rater directories holding <frame>_<instance>.pgm")->required()->expected(2, -1);
  s->add_option("--out", st.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
  t->add_flag("--overfit-one", tr.overfit_one, "Fit a single training stack as a sanity check");
  t->add_option("--overfit-steps", tr.overfit_steps, "Step budget for --overfit-one")->capture_default_str();
  t->add_option("--overfit-target", tr.overfit_target, "Loss to reach for --overfit-one")->capture_default_str();
  t->add_option("--overfit-lr", tr.overfit_lr, "Learning rate for --overfit-one")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_flag("--dump-attention", ev.dump_attention, "Write temporal attention maps");
  e->add_flag("!--no-overlays", ev.overlays, "Skip PGM overlays");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate-snippet", "Train and test one model per snippet length and seed");
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--config", ab.config, "key=value config file");
  a->add_option("--set", ab.overrides, "Config override key=value (repeatable)");
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_option("--lengths", ab.lengths, "Snippet lengths")->delimiter(',')->capture_default_str();
  a->add_option("--seeds", ab.seeds, "Seeds per length")->capture_default_str();
  a->add_option("--seed-base", ab.seed_base, "First seed")->capture_default_str();
  a->add_option("--jobs", ab.jobs, "Concurrent runs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "vtunet: error: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (s->parsed()) return cmd_staple(st);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (a->parsed()) return cmd_ablate(ab);
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "vtunet: error: " << msg << "\n";
    return 1;
  }
  return 1;
}
