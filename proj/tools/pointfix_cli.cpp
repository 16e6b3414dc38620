// pointfix_cli: generate data, pretrain, meta-train, evaluate and plot.
//
//   pointfix_cli generate [--force]
//   pointfix_cli pretrain
//   pointfix_cli train [--resume] [ablation flags]
//   pointfix_cli evaluate [--checkpoint PATH] [--repeat S]
//   pointfix_cli plot [CSV...] [--y COLUMN] [--output SVG]
//
// Every subcommand accepts --config FILE, --set key=value (repeatable),
// --name, --seed, --runs-dir, --data-dir and --no-timing. Command-line values
// override the config file, which overrides the defaults. Without --config
// the config.json of an existing run of the same name is used.
#include <pointfix/experiment.hpp>
#include <pointfix/plot.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace pointfix;
using Real = float;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> name, runs_dir, data_dir;
  std::optional<std::uint64_t> seed;
  bool no_timing = false;
};

void add_common(CLI::App* app, CommonArgs& a) {
  app->add_option("--config", a.config, "JSON config file");
  app->add_option("--set", a.sets, "override a config value, e.g. train.alpha=1e-4")->take_all();
  app->add_option("--name", a.name, "run name");
  app->add_option("--seed", a.seed, "global seed");
  app->add_option("--runs-dir", a.runs_dir, "root of run directories");
  app->add_option("--data-dir", a.data_dir, "dataset directory");
  app->add_flag("--no-timing", a.no_timing, "write 0 in timing columns");
}

/// `extra` holds patches from subcommand-specific flags; they win over --set.
ExperimentConfig resolve_config(const CommonArgs& a, const std::vector<nlohmann::json>& extra = {}) {
  std::vector<nlohmann::json> patches;
  for (const auto& s : a.sets) patches.push_back(set_patch(s));
  nlohmann::json flags = nlohmann::json::object();
  if (a.name) flags["name"] = *a.name;
  if (a.runs_dir) flags["runs_dir"] = *a.runs_dir;
  if (a.data_dir) flags["data_dir"] = *a.data_dir;
  if (a.seed) flags["seed"] = *a.seed;
  if (a.no_timing) flags["record_timing"] = false;
  patches.push_back(flags);
  for (const auto& p : extra) patches.push_back(p);

  std::string file = a.config;
  if (file.empty()) {
    // Locate an existing run config from name / runs_dir alone.
    const ExperimentConfig probe = load_config("", patches);
    const fs::path prev = probe.run_dir() / "config.json";
    if (fs::exists(prev)) file = prev.string();
  }
  return load_config(file, patches);
}

fs::path prepare_run(const ExperimentConfig& cfg) {
  const fs::path run = cfg.run_dir();
  for (const char* sub : {"checkpoints", "logs", "reports", "plots"}) fs::create_directories(run / sub);
  write_text((run / "config.json").string(), nlohmann::json(cfg).dump(2) + "\n");
  return run;
}

nlohmann::json data_signature(const ExperimentConfig& cfg) { return {{"seed", cfg.seed}, {"data", cfg.data}}; }

void generate_dataset(const ExperimentConfig& cfg, bool force) {
  const fs::path dir = cfg.data_dir;
  const fs::path mpath = dir / "manifest.json";
  if (fs::exists(mpath)) {
    const auto manifest = nlohmann::json::parse(read_text(mpath.string()));
    if (manifest.value("signature", nlohmann::json()) == data_signature(cfg) && !force) {
      std::cout << "dataset in " << dir.string() << " is up to date\n";
      return;
    }
    if (!force)
      throw std::runtime_error("dataset in " + dir.string() +
                               " was generated with a different config; rerun generate with --force");
    fs::remove_all(dir / "source");
    fs::remove_all(dir / "target");
  }
  const auto data = generate_data<Real>(cfg.data, cfg.seed);
  nlohmann::json manifest = {{"signature", data_signature(cfg)}, {"sequences", nlohmann::json::array()}};
  auto put = [&](const std::vector<Sequence<Real>>& seqs, const char* split) {
    for (const auto& s : seqs) {
      export_sequence(dir / split, s);
      manifest["sequences"].push_back(
          {{"id", s.id}, {"split", split}, {"environment", s.environment}, {"frames", s.frames.size()}});
    }
  };
  put(data.source, "source");
  put(data.target, "target");
  write_text(mpath.string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << data.source.size() << " source and " << data.target.size() << " target sequences to "
            << dir.string() << "\n";
}

SplitData<Real> ensure_dataset(const ExperimentConfig& cfg) {
  const fs::path mpath = fs::path(cfg.data_dir) / "manifest.json";
  if (!fs::exists(mpath)) generate_dataset(cfg, false);
  const auto manifest = nlohmann::json::parse(read_text(mpath.string()));
  if (manifest.value("signature", nlohmann::json()) != data_signature(cfg))
    throw std::runtime_error("dataset in " + cfg.data_dir +
                             " does not match the data config; run generate --force or use another --data-dir");
  return load_dataset<Real>(cfg.data_dir);
}

nlohmann::json checkpoint_meta(const ExperimentConfig& cfg, const char* stage) {
  return {{"stage", stage},
          {"model", cfg.model},
          {"train", cfg.train},
          {"config_hash", config_hash({{"model", cfg.model}, {"train", cfg.train}})}};
}

fs::path pretrain_path(const fs::path& run) { return run / "checkpoints" / "pretrain.pfx"; }

ParamSet<Real> run_pretrain(const ExperimentConfig& cfg, const SplitData<Real>& data, const fs::path& run) {
  std::cout << "pretraining for " << cfg.pretrain.steps << " steps\n";
  auto [theta, losses] = pretrain<Real>(cfg.model.stereo, data.source, cfg.pretrain);
  std::string csv = "step,loss\n";
  for (std::size_t k = 0; k < losses.size(); ++k) csv += std::to_string(k) + "," + fmt_num(losses[k]) + "\n";
  write_text((run / "logs" / "pretrain.csv").string(), csv);
  nlohmann::json meta = {{"stage", "pretrain"}, {"model", cfg.model}, {"pretrain", cfg.pretrain}};
  save_archive<Real>(pretrain_path(run).string(), {&theta}, meta);
  if (!losses.empty()) std::printf("pretrain loss %.4f -> %.4f\n", losses.front(), losses.back());
  return theta;
}

int cmd_pretrain(const CommonArgs& a) {
  const auto cfg = resolve_config(a);
  const auto run = prepare_run(cfg);
  run_pretrain(cfg, ensure_dataset(cfg), run);
  return 0;
}

struct TrainArgs {
  bool resume = false, no_pfn = false, no_meta = false, no_online = false, no_residual = false, first_order = false;
  std::optional<double> tau;
  std::optional<std::size_t> iterations;
};

int cmd_train(const CommonArgs& a, const TrainArgs& t) {
  nlohmann::json flags = nlohmann::json::object();
  if (t.no_pfn) flags["use_pointfix_net"] = false;
  if (t.no_meta) flags["use_meta_learning"] = false;
  if (t.no_online) flags["use_online_adapt_stage"] = false;
  if (t.no_residual) flags["residual_learning"] = false;
  if (t.first_order) flags["second_order"] = false;
  if (t.tau) flags["tau"] = *t.tau;
  if (t.iterations) flags["iterations"] = *t.iterations;
  const auto cfg = resolve_config(a, {nlohmann::json{{"train", flags}}});
  const auto run = prepare_run(cfg);
  const auto data = ensure_dataset(cfg);
  const fs::path ckdir = run / "checkpoints";
  const fs::path latest = ckdir / "latest.pfx";
  const fs::path log_path = run / "logs" / "train.csv";

  TrainState<Real> state;
  std::vector<TrainRecord> log;
  if (t.resume) {
    if (!fs::exists(latest)) throw std::runtime_error("--resume: no checkpoint at " + latest.string());
    nlohmann::json meta;
    state = load_checkpoint<Real>(latest.string(), cfg.model, cfg.train, &meta);
    nlohmann::json stored = meta.value("train", nlohmann::json()), now = cfg.train;
    stored.erase("iterations");
    now.erase("iterations");
    if (stored != now) throw std::runtime_error("--resume: training config differs from the checkpoint");
    if (fs::exists(log_path)) {
      const auto prev = parse_csv(read_text(log_path.string()), log_path.string());
      const auto it = prev.numbers("iter"), lk = prev.numbers("L_k"), pl = prev.numbers("point_loss"),
                 np = prev.numbers("n_points"), sec = prev.numbers("seconds");
      for (std::size_t i = 0; i < it.size(); ++i)
        if (std::size_t(it[i]) < state.iteration) log.push_back({std::size_t(it[i]), lk[i], pl[i], np[i], sec[i]});
    }
    std::cout << "resuming at iteration " << state.iteration << "\n";
  } else {
    ParamSet<Real> theta = fs::exists(pretrain_path(run)) ? load_theta<Real>(pretrain_path(run).string(), cfg.model)
                                                          : run_pretrain(cfg, data, run);
    const auto psi = init_pointfix<Real>(cfg.model.pointfix, cfg.model.stereo, cfg.seed + 17);
    state = make_train_state(theta, psi, cfg.train);
  }

  auto save = [&](const TrainState<Real>& st) {
    char name[64];
    std::snprintf(name, sizeof name, "iter_%06zu.pfx", st.iteration);
    const auto meta = checkpoint_meta(cfg, "train");
    save_checkpoint<Real>((ckdir / name).string(), st, meta);
    save_checkpoint<Real>(latest.string(), st, meta);
    write_text(log_path.string(), train_log_csv(log, cfg.record_timing));
  };
  const std::size_t start = state.iteration;
  train<Real>(cfg.train, cfg.model, data.source, state, save, [&](const TrainRecord& r) {
    log.push_back(r);
    if ((r.iter + 1) % 50 == 0 || r.iter + 1 == cfg.train.iterations)
      std::printf("iter %zu L_k %.4f points %.1f\n", r.iter + 1, r.base_loss, r.n_points);
  });
  const auto meta = checkpoint_meta(cfg, "train");
  save_checkpoint<Real>((ckdir / "final.pfx").string(), state, meta);
  save_checkpoint<Real>(latest.string(), state, meta);
  write_text(log_path.string(), train_log_csv(log, cfg.record_timing));
  std::cout << "trained iterations " << start << ".." << state.iteration << "; wrote " << (ckdir / "final.pfx").string()
            << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& a, const std::string& checkpoint, std::optional<std::size_t> repeat) {
  nlohmann::json extra = nlohmann::json::object();
  if (repeat) extra["eval"] = {{"repeat_steps", *repeat}};
  const auto cfg = resolve_config(a, {extra});
  const auto run = prepare_run(cfg);
  const auto data = ensure_dataset(cfg);
  if (data.target.empty()) throw std::runtime_error("evaluate: dataset has no target sequences");
  const fs::path ck = checkpoint.empty() ? run / "checkpoints" / "final.pfx" : fs::path(checkpoint);
  if (!fs::exists(ck)) throw std::runtime_error("evaluate: checkpoint not found: " + ck.string());
  const ParamSet<Real> theta = load_theta<Real>(ck.string(), cfg.model);

  EvalOptions opts;
  opts.metrics.kitti_d1 = cfg.eval.kitti_d1;
  opts.metrics.sparse_gt = cfg.eval.sparse_gt;
  opts.metrics.sparse_fraction = cfg.eval.sparse_fraction;
  opts.metrics.sparse_seed = cfg.seed;
  const fs::path reports = run / "reports";
  nlohmann::json summary = {{"checkpoint", ck.string()}, {"protocols", nlohmann::json::object()}};
  for (const auto& pname : cfg.eval.protocols) {
    const ProtocolKind protocol = protocol_from_name(pname);
    std::vector<ProtocolReport> rows;
    for (const auto& mname : cfg.eval.modes) {
      AdaptConfig ad = cfg.adapt;
      ad.mode.kind = adapt_kind_from_name(mname);
      rows.push_back(evaluate_protocol(theta, data.target, protocol, cfg.model.stereo, ad, opts));
      const auto& rep = rows.back();
      std::printf("%-5s %-4s avg D1-all %.2f%% EPE %.3f\n", pname.c_str(), rep.mode.c_str(), rep.avg_d1_all,
                  rep.avg_epe);
      for (const auto& g : rep.groups)
        for (const auto& s : g.sequences)
          write_text((reports / ("trace_" + pname + "_" + rep.mode + "_" + s.sequence + ".csv")).string(),
                     adaptation_csv(s));
      summary["protocols"][pname][rep.mode] = {{"avg_d1_all", rep.avg_d1_all}, {"avg_epe", rep.avg_epe}};
    }
    write_text((reports / (pname + ".csv")).string(), protocol_table_csv(rows));
  }
  if (cfg.eval.repeat_steps > 0) {
    const auto& frames = data.target.front().frames;
    for (const auto& mname : cfg.eval.modes) {
      AdaptConfig ad = cfg.adapt;
      ad.mode.kind = adapt_kind_from_name(mname);
      const auto rep = repeated_adaptation(theta, frames, cfg.eval.repeat_steps, cfg.model.stereo, ad, opts.metrics);
      write_text((reports / ("repeat_" + rep.mode + ".csv")).string(), adaptation_csv(rep));
      std::printf("repeat %-4s D1-all %.2f%% -> %.2f%%\n", rep.mode.c_str(), rep.records.front().d1_all,
                  rep.records.back().d1_all);
    }
  }
  write_text((reports / "summary.json").string(), summary.dump(2) + "\n");
  return 0;
}

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string x = "frame", y = "d1_all", output, title;
  std::size_t smooth = 1;
};

int cmd_plot(const CommonArgs& a, PlotArgs p) {
  const auto cfg = resolve_config(a);
  const fs::path run = cfg.run_dir();
  if (p.inputs.empty() && fs::exists(run / "reports"))
    for (const auto& e : fs::directory_iterator(run / "reports"))
      if (e.path().extension() == ".csv" && e.path().filename().string().rfind("trace_short_", 0) == 0)
        p.inputs.push_back(e.path().string());
  if (p.inputs.empty()) throw std::runtime_error("plot: no input CSV files");
  std::sort(p.inputs.begin(), p.inputs.end());
  std::vector<Series> series;
  for (const auto& in : p.inputs) {
    const auto table = parse_csv(read_text(in), in);
    if (table.rows.empty()) throw std::runtime_error("plot: " + in + " has no data rows");
    Series s;
    s.name = fs::path(in).stem().string();
    s.x = table.numbers(p.x);
    s.y = running_median(table.numbers(p.y), p.smooth);
    series.push_back(std::move(s));
  }
  PlotOptions opt;
  opt.title = p.title;
  opt.x_label = p.x;
  opt.y_label = p.y;
  const fs::path out = p.output.empty() ? run / "plots" / (p.y + ".svg") : fs::path(p.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out.string(), svg_line_plot(series, opt));
  std::cout << "wrote " << out.string() << " (" << series.size() << " series)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PointFix stereo meta-learning experiments"};
  app.require_subcommand(1);

  CommonArgs gen_a, pre_a, train_a, eval_a, plot_a;
  bool force = false;
  auto* gen = app.add_subcommand("generate", "render the synthetic source/target dataset");
  add_common(gen, gen_a);
  gen->add_flag("--force", force, "regenerate even if a dataset exists");

  auto* pre = app.add_subcommand("pretrain", "supervised pretraining on the source split");
  add_common(pre, pre_a);

  TrainArgs targs;
  auto* tr = app.add_subcommand("train", "meta-train from the pretrained weights");
  add_common(tr, train_a);
  tr->add_flag("--resume", targs.resume, "continue from checkpoints/latest.pfx");
  tr->add_flag("--no-pointfix-net", targs.no_pfn, "inner update on the full-map L1 instead of the point loss");
  tr->add_flag("--no-meta", targs.no_meta, "joint training without the inner update");
  tr->add_flag("--no-online-ml", targs.no_online, "skip the adaptation stage after each outer step");
  tr->add_flag("--no-residual", targs.no_residual, "point loss on the residual alone");
  tr->add_flag("--first-order", targs.first_order, "drop second-order terms of the meta-gradient");
  tr->add_option("--point-threshold", targs.tau, "error threshold (px) for selecting points");
  tr->add_option("--iterations", targs.iterations, "outer iterations");

  std::string checkpoint;
  std::optional<std::size_t> repeat;
  auto* ev = app.add_subcommand("evaluate", "online adaptation on the target split");
  add_common(ev, eval_a);
  ev->add_option("--checkpoint", checkpoint, "weights to evaluate (default checkpoints/final.pfx)");
  ev->add_option("--repeat", repeat, "also adapt repeatedly on the first target sequence for S passes");

  PlotArgs pargs;
  auto* pl = app.add_subcommand("plot", "SVG line plot, one curve per CSV");
  add_common(pl, plot_a);
  pl->add_option("inputs", pargs.inputs, "CSV files (default reports/trace_short_*.csv)");
  pl->add_option("--x", pargs.x, "x column");
  pl->add_option("--y", pargs.y, "y column");
  pl->add_option("--output,-o", pargs.output, "output SVG");
  pl->add_option("--title", pargs.title, "plot title");
  pl->add_option("--smooth", pargs.smooth, "running-median window");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) {
      const auto cfg = resolve_config(gen_a);
      generate_dataset(cfg, force);
      return 0;
    }
    if (pre->parsed()) return cmd_pretrain(pre_a);
    if (tr->parsed()) return cmd_train(train_a, targs);
    if (ev->parsed()) return cmd_evaluate(eval_a, checkpoint, repeat);
    if (pl->parsed()) return cmd_plot(plot_a, pargs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
