#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "featlens/analysis.hpp"
#include "featlens/artifacts.hpp"
#include "featlens/config.hpp"
#include "featlens/report.hpp"

namespace fs = std::filesystem;
using namespace featlens;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::string data_dir;
  int64_t seed = -1;  // -1: take the config/default seed
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value configuration file");
  cmd->add_option("--out", opts.out_dir, "output directory for checkpoints and reports");
  cmd->add_option("--data", opts.data_dir, "dataset directory (IDX files)");
  cmd->add_option("--seed", opts.seed, "master seed");
}

struct Workspace {
  RunConfig rc;
  std::string out_dir;
  std::string data_dir;
  uint64_t data_seed = 1234;
};

Workspace open_workspace(const CommonOpts& opts) {
  Config cfg = opts.config_path.empty() ? Config::from_string("") : Config::load(opts.config_path);
  if (opts.seed >= 0) cfg.set("seed", std::to_string(opts.seed));
  Workspace ws;
  ws.rc = RunConfig::from_config(cfg);
  ws.out_dir = opts.out_dir;
  fs::create_directories(ws.out_dir);
  const std::string preferred = !opts.data_dir.empty() ? opts.data_dir : ws.rc.data_dir;
  ws.data_dir = resolve_data_dir(preferred, ws.out_dir + "/data");
  ws.data_seed = cfg.get_u64("data.synth_seed", ws.data_seed);
  return ws;
}

Dataset train_set(const Workspace& ws) {
  return ensure_dataset(ws.data_dir, "train", ws.rc.synth_train, ws.data_seed);
}
Dataset test_set(const Workspace& ws) {
  return ensure_dataset(ws.data_dir, "t10k", ws.rc.synth_test, ws.data_seed);
}

void print_epoch_summaries(const TrainLog& log, int epochs) {
  if (log.rows.empty() || epochs <= 0) return;
  const size_t per = (log.rows.size() + size_t(epochs) - 1) / size_t(epochs);
  for (int e = 0; e < epochs; ++e) {
    const size_t lo = size_t(e) * per, hi = std::min(log.rows.size(), lo + per);
    if (lo >= hi) break;
    double loss = 0.0, acc = 0.0;
    int acc_n = 0;
    for (size_t i = lo; i < hi; ++i) {
      loss += log.rows[i].loss;
      if (log.rows[i].acc >= 0) {
        acc += log.rows[i].acc;
        ++acc_n;
      }
    }
    std::cout << "  epoch " << (e + 1) << "/" << epochs << "  lr=" << log.rows[lo].lr
              << "  loss=" << loss / double(hi - lo);
    if (acc_n) std::cout << "  acc=" << acc / acc_n;
    std::cout << "\n";
  }
}

FrozenHost load_frozen_host(const Workspace& ws) {
  const std::string path = host_ckpt_path(ws.out_dir);
  check(fs::exists(path), "no host checkpoint at " + path + "; run train-host first");
  return freeze(load_host(path));
}

Dataset rotated_eval_set(const Workspace& ws, const Dataset& test) {
  return make_rotated_dataset(test, 0.0, 360.0, Rng::derive(ws.rc.seed, 100));
}

int cmd_synth_data(const CommonOpts& opts) {
  Workspace ws = open_workspace(opts);
  Dataset train = train_set(ws);
  Dataset test = test_set(ws);
  std::cout << "dataset ready under " << ws.data_dir << ": " << train.count() << " train / "
            << test.count() << " test images of " << train.h << "x" << train.w << "\n";
  return 0;
}

int cmd_train_host(const CommonOpts& opts) {
  Workspace ws = open_workspace(opts);
  Dataset train = train_set(ws);
  std::cout << "[train-host] " << train.count() << " images, subset "
            << ws.rc.host_train.subset << ", epochs " << ws.rc.host_train.epochs << "\n";
  HostTrainResult r = train_host(train, ws.rc.host, ws.rc.host_train);
  print_epoch_summaries(r.log, ws.rc.host_train.epochs);
  save_host(r.model, host_ckpt_path(ws.out_dir));
  write_train_log_csv(r.log, ws.out_dir + "/host_train_log.csv");

  FrozenHost frozen = freeze(std::move(r.model));
  Dataset test = test_set(ws);
  EvalSpec spec;
  spec.max_images = ws.rc.eval_images;
  AccuracyReport rep = evaluate_accuracy(host_predictor(frozen), test, spec);
  std::cout << "[train-host] upright test accuracy " << rep.accuracy << " over " << rep.total
            << " images\n";
  return 0;
}

int cmd_train_lens(const CommonOpts& opts, const std::string& transform,
                   const std::string& loss) {
  Workspace ws = open_workspace(opts);
  FrozenHost host = load_frozen_host(ws);
  Dataset train = train_set(ws);
  const LossMode mode = parse_loss_mode(loss);

  if (transform == "scale2" || transform == "scale3") {
    const double scale = transform == "scale2" ? 0.5 : 1.0 / 3.0;
    TrainConfig cfg = ws.rc.scaling_lens_train;
    cfg.loss.mode = mode;
    std::cout << "[train-lens] scaling lens " << transform << ", loss " << loss << ", subset "
              << cfg.subset << ", epochs " << cfg.epochs << "\n";
    ScalingLensTrainResult r = train_scaling_lens(host, scale, train, cfg, ws.rc.lens_groups);
    print_epoch_summaries(r.log, cfg.epochs);
    const ScaleKey key = transform == "scale2" ? ScaleKey::Half : ScaleKey::Third;
    save_scaling_lens(r.lens, key, scaling_ckpt_path(ws.out_dir, key, mode));
    write_train_log_csv(r.log, ws.out_dir + "/lens_" + transform + "_" + loss + "_log.csv");
    std::cout << "[train-lens] final mixing weights w1=" << r.lens.w1() << " w2=" << r.lens.w2()
              << "\n";
    return 0;
  }

  LensBin bin;
  if (transform == "rot90")
    bin = LensBin::Rot90;
  else if (transform == "rot180")
    bin = LensBin::Rot180;
  else if (transform == "rot270")
    bin = LensBin::Rot270;
  else
    throw CLI::ValidationError("--transform", "unknown transform '" + transform + "'");

  TrainConfig cfg = ws.rc.lens_train;
  cfg.loss.mode = mode;
  std::cout << "[train-lens] rotation lens " << transform << ", loss " << loss << ", subset "
            << cfg.subset << ", epochs " << cfg.epochs << "\n";
  LensTrainResult r = train_lens(host, bin, train, cfg, ws.rc.lens_groups);
  print_epoch_summaries(r.log, cfg.epochs);
  save_rotation_lens(r.lens, bin, lens_ckpt_path(ws.out_dir, bin, mode));
  write_train_log_csv(r.log, ws.out_dir + "/lens_" + transform + "_" + loss + "_log.csv");
  return 0;
}

int cmd_train_baseline(const CommonOpts& opts, const std::string& which) {
  Workspace ws = open_workspace(opts);
  Dataset train = train_set(ws);
  if (which == "dataaug") {
    std::cout << "[train-baseline] dataaug host, subset " << ws.rc.dataaug_train.subset
              << ", epochs " << ws.rc.dataaug_train.epochs << "\n";
    HostTrainResult r = train_dataaug(train, ws.rc.host, AugPolicy::small_dataset_rotations(),
                                      ws.rc.dataaug_train);
    print_epoch_summaries(r.log, ws.rc.dataaug_train.epochs);
    save_host(r.model, dataaug_ckpt_path(ws.out_dir));
    write_train_log_csv(r.log, ws.out_dir + "/dataaug_train_log.csv");
    return 0;
  }
  if (which == "xlayer") {
    FrozenHost host = load_frozen_host(ws);
    Dataset rotated =
        make_rotated_dataset(train, 0.0, 360.0, Rng::derive(ws.rc.xlayer_train.seed, 11));
    std::cout << "[train-baseline] xlayer block, subset " << ws.rc.xlayer_train.subset
              << ", epochs " << ws.rc.xlayer_train.epochs << "\n";
    XlayerTrainResult r = train_xlayer(host, rotated, ws.rc.xlayer_train);
    print_epoch_summaries(r.log, ws.rc.xlayer_train.epochs);
    save_xlayer(r.block, xlayer_ckpt_path(ws.out_dir));
    write_train_log_csv(r.log, ws.out_dir + "/xlayer_train_log.csv");
    return 0;
  }
  throw CLI::ValidationError("baseline", "unknown baseline '" + which + "'");
}

int cmd_train_rotclf(const CommonOpts& opts) {
  Workspace ws = open_workspace(opts);
  FrozenHost host = load_frozen_host(ws);
  Dataset train = train_set(ws);
  std::cout << "[train-rotclf] subset " << ws.rc.rotclf_train.subset << ", epochs "
            << ws.rc.rotclf_train.epochs << "\n";
  RotClfTrainResult r = train_rot_classifier(host, train, ws.rc.rotclf_train);
  print_epoch_summaries(r.log, ws.rc.rotclf_train.epochs);
  save_rotclf(r.clf, rotclf_ckpt_path(ws.out_dir));
  write_train_log_csv(r.log, ws.out_dir + "/rotclf_train_log.csv");
  std::cout << "[train-rotclf] holdout bin accuracy " << r.holdout_accuracy << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& select_str,
             const std::string& filter_str, const std::string& method_str, bool upright) {
  Workspace ws = open_workspace(opts);
  FrozenHost host = load_frozen_host(ws);
  Dataset test = test_set(ws);

  const LensSelect select = parse_lens_select(select_str);
  std::string method = method_str;
  if (method == "auto") method = select == LensSelect::None ? "host" : "lenses";

  EvalSpec spec;
  spec.max_images = ws.rc.eval_images;
  if (!upright) {
    spec.apply_angle_filter = true;
    spec.filter_lo_deg = ws.rc.filter_lo_deg;
    spec.filter_hi_deg = ws.rc.filter_hi_deg;
    if (!filter_str.empty()) {
      const auto comma = filter_str.find(',');
      check(comma != std::string::npos, "--filter-angles expects 'lo,hi'");
      spec.filter_lo_deg = std::stod(filter_str.substr(0, comma));
      spec.filter_hi_deg = std::stod(filter_str.substr(comma + 1));
    }
  }

  Dataset eval_ds = upright ? test : rotated_eval_set(ws, test);

  LensRegistry registry;
  RotationClassifier clf;
  XlayerBlock xblock;
  HostModel dataaug_model(ws.rc.host, 0);
  std::optional<FrozenHost> dataaug_host;
  BatchPredictor predictor;
  if (method == "host") {
    predictor = host_predictor(host);
  } else if (method == "lenses") {
    registry = load_registry(ws.out_dir);
    check(registry.rot90 && registry.rot180 && registry.rot270,
          "eval: missing rotation lens checkpoints in " + ws.out_dir);
    if (select == LensSelect::Predicted) {
      clf = load_rotclf(rotclf_ckpt_path(ws.out_dir));
      predictor = lens_predictor(host, registry, select, &clf);
    } else {
      predictor = lens_predictor(host, registry, select);
    }
  } else if (method == "xlayer") {
    xblock = load_xlayer(xlayer_ckpt_path(ws.out_dir));
    predictor = xlayer_predictor(host, xblock);
  } else if (method == "dataaug") {
    dataaug_host = freeze(load_host(dataaug_ckpt_path(ws.out_dir)));
    predictor = host_predictor(*dataaug_host);
  } else {
    throw CLI::ValidationError("--method", "unknown method '" + method + "'");
  }

  AccuracyReport rep = evaluate_accuracy(predictor, eval_ds, spec);
  std::vector<ReportRow> rows;
  rows.push_back({method + "+" + select_str, upright ? "upright" : "rotated-filtered", "top1",
                  rep.accuracy});
  for (const auto& [name, cc] : rep.per_transform)
    rows.push_back({method + "+" + select_str, name, "top1", double(cc.first) / cc.second});
  const std::string path = ws.out_dir + "/eval_" + method + "_" + select_str +
                           (upright ? "_upright" : "") + ".csv";
  write_report_csv(rows, path);
  std::cout << "[eval] method=" << method << " select=" << select_str << " accuracy "
            << rep.accuracy << " over " << rep.total << " images -> " << path << "\n";
  return 0;
}

int cmd_analyze_correlation(const CommonOpts& opts) {
  Workspace ws = open_workspace(opts);
  FrozenHost host = load_frozen_host(ws);
  Dataset test = test_set(ws);

  std::vector<TransformSpec> specs = {TransformSpec::identity(), TransformSpec::rotation(90),
                                      TransformSpec::rotation(180), TransformSpec::rotation(270),
                                      TransformSpec::scaling(0.5),
                                      TransformSpec::scaling(1.0 / 3.0)};
  LensRegistry registry = load_registry(ws.out_dir);

  std::vector<ReportRow> rows;
  for (const auto& spec : specs) {
    CorrelationEntry e = feature_correlations(host, test, spec, ws.rc.corr_images);
    rows.push_back({"host", e.transform, "whole_feature_r", e.whole_feature_r});
    rows.push_back({"host", e.transform, "channel_mean_r", e.channel_mean_r});
    std::cout << "[correlation] " << e.transform << " whole=" << e.whole_feature_r
              << " channel-mean=" << e.channel_mean_r << " (n=" << e.sample_count << ")\n";
    const bool lens_covers =
        (spec.kind == TransformKind::Rotation && registry.covers(bin_angle(spec.angle_deg)) &&
         bin_angle(spec.angle_deg) != LensBin::Identity) ||
        (spec.kind == TransformKind::Scaling &&
         ((scale_key(spec.scale) == ScaleKey::Half && registry.scale_half) ||
          (scale_key(spec.scale) == ScaleKey::Third && registry.scale_third)));
    if (lens_covers) {
      CorrelationEntry le = lens_feature_correlations(host, registry, test, spec,
                                                      ws.rc.corr_images);
      rows.push_back({"lenses", le.transform, "whole_feature_r", le.whole_feature_r});
      rows.push_back({"lenses", le.transform, "channel_mean_r", le.channel_mean_r});
      std::cout << "[correlation] " << le.transform << " whole=" << le.whole_feature_r
                << " channel-mean=" << le.channel_mean_r << "\n";
    }
  }
  write_report_csv(rows, ws.out_dir + "/correlation.csv");
  std::cout << "[correlation] wrote " << ws.out_dir << "/correlation.csv\n";
  return 0;
}

int cmd_report(const CommonOpts& opts) {
  Workspace ws = open_workspace(opts);
  FrozenHost host = load_frozen_host(ws);
  Dataset test = test_set(ws);
  const std::string corr_path = ws.out_dir + "/correlation.csv";
  check(fs::exists(corr_path), "report: " + corr_path + " missing; run analyze-correlation");
  std::vector<ReportRow> corr = read_report_csv(corr_path);
  auto corr_of = [&corr](const std::string& method, const std::string& transform) {
    for (const auto& r : corr)
      if (r.method == method && r.transform == transform && r.metric == "whole_feature_r")
        return r.value;
    throw std::runtime_error("report: no correlation row for " + method + "/" + transform);
  };

  LensRegistry registry = load_registry(ws.out_dir);
  const bool with_lenses = registry.rot90 && registry.rot180 && registry.rot270;

  // accuracy at exact transforms so points pair with the measured correlations
  std::vector<ReportRow> rows;
  std::vector<ScatterPoint> points;
  std::vector<std::pair<double, double>> host_points;
  const std::vector<std::pair<std::string, TransformSpec>> exact = {
      {"identity", TransformSpec::identity()},
      {"rot90", TransformSpec::rotation(90)},
      {"rot180", TransformSpec::rotation(180)},
      {"rot270", TransformSpec::rotation(270)}};
  for (const auto& [name, spec] : exact) {
    Dataset fixed = make_transformed_dataset(test, spec);
    EvalSpec espec;
    espec.max_images = ws.rc.eval_images;
    const double host_acc = evaluate_accuracy(host_predictor(host), fixed, espec).accuracy;
    const double x = corr_of("host", name);
    rows.push_back({"host", name, "top1_exact", host_acc});
    host_points.push_back({x, host_acc});
    points.push_back({x, host_acc, "host " + name, 0});
    if (with_lenses) {
      const double lens_acc =
          evaluate_accuracy(lens_predictor(host, registry, LensSelect::TrueTransform), fixed,
                            espec)
              .accuracy;
      const double lx = name == "identity" ? x : corr_of("lenses", name + "+lens");
      rows.push_back({"lenses", name, "top1_exact", lens_acc});
      points.push_back({lx, lens_acc, "lens " + name, 1});
    }
  }

  Regression fit = regress_corr_accuracy(host_points);
  rows.push_back({"fit", "all", "slope", fit.slope});
  rows.push_back({"fit", "all", "intercept", fit.intercept});
  rows.push_back({"fit", "all", "pearson_r", fit.r});
  write_report_csv(rows, ws.out_dir + "/report.csv");
  write_scatter_svg(ws.out_dir + "/scatter.svg", points, fit,
                    "feature correlation vs accuracy");
  std::cout << "[report] fit slope=" << fit.slope << " intercept=" << fit.intercept
            << " r=" << fit.r << "\n";
  std::cout << "[report] wrote " << ws.out_dir << "/report.csv and scatter.svg\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-lens toolkit: train a frozen host CNN, attach reconstruction lenses, "
               "and measure accuracy recovery against baselines"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string transform = "rot90", loss = "tac";
  std::string baseline;
  std::string select = "true", filter, method = "auto";
  bool upright = false;

  add_common(app.add_subcommand("synth-data", "generate or verify the dataset files"), opts);
  add_common(app.add_subcommand("train-host", "train the host classifier on upright images"),
             opts);

  CLI::App* lens_cmd = app.add_subcommand("train-lens", "self-supervised lens training");
  add_common(lens_cmd, opts);
  lens_cmd->add_option("--transform", transform, "rot90|rot180|rot270|scale2|scale3")
      ->required();
  lens_cmd->add_option("--loss", loss, "tac|mse|mae|mse+tac|mae+tac");

  CLI::App* baseline_cmd = app.add_subcommand("train-baseline", "train a baseline");
  add_common(baseline_cmd, opts);
  baseline_cmd->add_option("baseline", baseline, "xlayer|dataaug")->required();

  add_common(app.add_subcommand("train-rotclf", "train the rotation-type classifier"), opts);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a pipeline on the rotated test set");
  add_common(eval_cmd, opts);
  eval_cmd->add_option("--select", select, "true|predicted|none");
  eval_cmd->add_option("--filter-angles", filter, "lo,hi kept-angle window (default 45,315)");
  eval_cmd->add_option("--method", method, "auto|host|lenses|xlayer|dataaug");
  eval_cmd->add_flag("--upright", upright, "evaluate on upright images without a filter");

  add_common(app.add_subcommand("analyze-correlation",
                                "feature correlations under each transform"),
             opts);
  add_common(app.add_subcommand("report", "correlation/accuracy regression table and scatter"),
             opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("synth-data")) return cmd_synth_data(opts);
    if (app.got_subcommand("train-host")) return cmd_train_host(opts);
    if (app.got_subcommand("train-lens")) return cmd_train_lens(opts, transform, loss);
    if (app.got_subcommand("train-baseline")) return cmd_train_baseline(opts, baseline);
    if (app.got_subcommand("train-rotclf")) return cmd_train_rotclf(opts);
    if (app.got_subcommand("eval")) return cmd_eval(opts, select, filter, method, upright);
    if (app.got_subcommand("analyze-correlation")) return cmd_analyze_correlation(opts);
    if (app.got_subcommand("report")) return cmd_report(opts);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
