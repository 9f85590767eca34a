#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttv/augment.hpp"
#include "ttv/csv.hpp"
#include "ttv/errors.hpp"
#include "ttv/eval.hpp"
#include "ttv/feed.hpp"
#include "ttv/labeling.hpp"
#include "ttv/pipeline.hpp"
#include "ttv/regress.hpp"
#include "ttv/scene.hpp"
#include "ttv/svg.hpp"
#include "ttv/trigger.hpp"
#include "ttv/vit.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ttv;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStageFailure = 2;

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const auto key = strip(line.substr(0, eq));
    if (!key.empty()) kv[key] = strip(line.substr(eq + 1));
  }
  return kv;
}

ViTConfig vit_config_from_kv(const std::map<std::string, std::string>& kv, TrainOptions* opts) {
  ViTConfig config;
  auto geti = [&](const char* k, int* out) {
    if (auto it = kv.find(k); it != kv.end()) *out = std::stoi(it->second);
  };
  auto getd = [&](const char* k, double* out) {
    if (auto it = kv.find(k); it != kv.end()) *out = std::stod(it->second);
  };
  geti("image_w", &config.image_w);
  geti("image_h", &config.image_h);
  geti("patch_size", &config.patch_size);
  geti("latent_dim", &config.latent_dim);
  geti("layers", &config.num_layers);
  geti("heads", &config.num_heads);
  geti("mlp_hidden", &config.mlp_hidden_dim);
  getd("dropout", &config.dropout_p);
  if (opts) {
    geti("batch_size", &opts->batch_size);
    getd("learning_rate", &opts->learning_rate);
    geti("epochs", &opts->epochs);
  }
  return config;
}

int cmd_synth(const SynthParams& params, const std::string& out_dir) {
  const auto outs = generate_synthetic_corpus(params, out_dir);
  std::cout << "trips " << outs.n_trips << "\nframes " << outs.n_frames << "\nfeed "
            << outs.feed_path << "\navl " << outs.avl_path << "\nmanifest " << outs.manifest_path
            << "\n";
  return kExitOk;
}

int cmd_replay(const std::string& feed_path, double speedup, bool fast) {
  FeedParseReport report;
  FeedStream stream = parse_feed_file(feed_path, &report);
  stream.clock_mode = fast ? ClockMode::AsFastAsPossible : ClockMode::RealtimeScaled;
  if (report.skipped) {
    std::cerr << "skipped " << report.skipped << " line(s), first at line "
              << report.first_bad_line << "\n";
  }
  auto it = replay(stream, speedup);
  while (auto rec = it.next()) {
    nlohmann::json j;
    j["ts"] = rec->timestamp;
    j["trip"] = rec->trip_id;
    j["dir"] = rec->direction;
    j["lat"] = rec->lat;
    j["lon"] = rec->lon;
    j["occ"] = rec->occupancy;
    std::cout << j.dump() << "\n";
  }
  return kExitOk;
}

int cmd_trigger(const std::string& feed_path, double lat, double lon, double radius_m, int frames,
                int interval_s, const std::string& manifest_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  MonitoredSegment segment{{lat, lon}, radius_m, 2 * radius_m};

  std::unique_ptr<FrameSource> source;
  Manifest manifest;
  if (!manifest_path.empty()) {
    manifest = read_manifest(manifest_path);
    source = std::make_unique<ManifestFrameSource>(manifest);
  } else {
    // Without recorded frames, render ambient background scenes.
    source = std::make_unique<ScheduledRenderSource>(SceneGeometry{96, 96}, 0);
  }

  SessionRegistryOptions opts;
  opts.frame_count = frames;
  opts.frame_interval_s = interval_s;
  if (manifest_path.empty()) opts.frames_dir = (fs::path(out_dir) / "frames").string();
  SessionRegistry registry(segment, *source, opts);

  const FeedStream stream = parse_feed_file(feed_path);
  auto it = replay(stream, 1.0);
  while (auto rec = it.next()) registry.process_position(*rec);
  registry.finish();

  export_trip_database((fs::path(out_dir) / "trips.csv").string(), registry);
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), registry.manifest());
  std::cout << "sessions " << registry.sessions().size() << "\napproaches "
            << registry.approaches().size() << "\nsuccessful "
            << registry.successful_approaches().size() << "\n";
  return kExitOk;
}

int cmd_label(const std::string& manifest_path, const std::string& trips_path,
              const std::string& avl_path, const std::string& scope, const std::string& out_path) {
  const Manifest manifest = read_manifest(manifest_path);
  const auto trips = read_trip_database(trips_path);
  const auto avl = read_avl_csv(avl_path);
  const ScopePolicy policy =
      scope == "overall" ? ScopePolicy::Overall : ScopePolicy::PerDirection;
  LabelReport report;
  const Manifest labeled = label_dataset(manifest, trips, avl, policy, &report);
  write_manifest(out_path, labeled);
  std::cout << "labeled " << report.labeled << "\ndropped " << report.dropped << "\n";
  return kExitOk;
}

int cmd_augment(const std::string& manifest_path, int passes, std::uint64_t seed,
                const std::string& out_dir) {
  const Manifest labeled = read_manifest(manifest_path);
  if (labeled.rows.empty()) throw DataError("empty manifest");
  const RasterFrame probe = read_ppm(labeled.rows.front().frame_path);
  AugmentationSpec spec = AugmentationSpec{}.scaled_to(probe.width, probe.height);
  spec.passes_per_image = passes;
  spec.seed = seed;
  AugmentCorpusReport report;
  const Manifest expanded =
      augment_corpus(labeled, spec, (fs::path(out_dir) / "frames").string(), 1, &report);
  write_manifest((fs::path(out_dir) / "expanded.csv").string(), expanded);
  std::cout << "originals " << report.originals << "\nvariants " << report.variants
            << "\nskipped " << report.skipped_unreadable << "\n";
  return kExitOk;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path,
              std::uint64_t seed, int threads, const std::string& out_path) {
  TrainOptions opts;
  ViTConfig config = config_path.empty()
                         ? ViTConfig{}
                         : vit_config_from_kv(read_kv_file(config_path), &opts);
  opts.seed = seed;
  opts.threads = threads;
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.kind == ManifestKind::Base) throw DataError("manifest must be labeled");
  const FrameDataset train_set = load_dataset(manifest.rows, config);
  const TrainResult result = train_vit(train_set, nullptr, config, opts);
  save_checkpoint(out_path, result.params, config);
  for (const auto& e : result.log) {
    std::cout << "epoch " << e.epoch << " loss " << fmt6(e.train_loss) << "\n";
  }
  std::cout << "checkpoint " << out_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, int folds,
             std::uint64_t seed, int threads, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.kind == ManifestKind::Base) throw DataError("manifest must be labeled");
  const FoldPlan plan = make_folds(manifest, folds, seed);

  std::vector<ClassMetrics> fold_metrics;
  ConfusionMatrix pooled;
  std::vector<SequenceEvalRow> sequences;
  FrameDataset pooled_set;
  std::vector<Vec> pooled_probs;
  for (int fold = 0; fold < plan.k; ++fold) {
    std::vector<FrameRecord> rows;
    for (auto i : plan.test_rows[fold]) {
      if (!manifest.rows[i].is_augmented()) rows.push_back(manifest.rows[i]);
    }
    const FrameDataset set = load_dataset(rows, ckpt.config);
    const auto probs = predict_probs(set, ckpt.params, ckpt.config, threads);
    for (std::size_t i = 0; i < set.size(); ++i) {
      pooled_set.frames.emplace_back(1, 1);  // placeholder; only metadata is used
      pooled_set.labels.push_back(set.labels[i]);
      pooled_set.trip_ids.push_back(set.trip_ids[i]);
      pooled_set.capture_ts.push_back(set.capture_ts[i]);
      pooled_set.directions.push_back(set.directions[i]);
      pooled_set.augmented.push_back(set.augmented[i]);
      pooled_probs.push_back(probs[i]);
    }
    std::vector<int> preds, truths;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      Eigen::Index p;
      probs[i].maxCoeff(&p);
      preds.push_back(static_cast<int>(p));
      truths.push_back(set.labels[i]);
    }
    auto [cm, metrics] = evaluate_frames(preds, truths);
    fold_metrics.push_back(metrics);
    for (int r = 0; r < kNumBands; ++r) {
      for (int c = 0; c < kNumBands; ++c) pooled.counts[r][c] += cm.counts[r][c];
    }
    for (auto& s : sequence_inference(set, probs)) sequences.push_back(std::move(s));
  }

  csv::Table metrics_table;
  metrics_table.header = {"class", "precision", "recall", "f1", "fold"};
  for (int fold = 0; fold < plan.k; ++fold) {
    for (int b = 0; b < kNumBands; ++b) {
      metrics_table.rows.push_back({band_name(static_cast<TravelTimeBand>(b)),
                                    fmt6(fold_metrics[fold].precision[b]),
                                    fmt6(fold_metrics[fold].recall[b]),
                                    fmt6(fold_metrics[fold].f1[b]), std::to_string(fold)});
    }
  }
  csv::write_file((fs::path(out_dir) / "metrics.csv").string(), metrics_table);
  svg::write_confusion_heatmap((fs::path(out_dir) / "confusion.svg").string(),
                               "frame confusion (column-normalized)", pooled.normalized());

  // Sequence-length and hourly breakdowns over the pooled test folds.
  const auto curve = accuracy_vs_sequence_length(pooled_set, pooled_probs);
  csv::Table curve_table;
  curve_table.header = {"length", "band", "accuracy", "ci_lo", "ci_hi", "support"};
  std::vector<svg::Series> curve_series;
  for (int b = -1; b < kNumBands; ++b) {
    svg::Series series;
    series.name = b < 0 ? "all" : band_name(static_cast<TravelTimeBand>(b));
    for (const auto& p : curve) {
      if (p.band != b) continue;
      curve_table.rows.push_back(
          {std::to_string(p.length), series.name, fmt6(p.accuracy), fmt6(p.ci_lo),
           fmt6(p.ci_hi), std::to_string(p.support)});
      series.points.push_back({static_cast<double>(p.length), p.accuracy});
      series.band.push_back({p.ci_lo, p.ci_hi});
    }
    if (!series.points.empty()) curve_series.push_back(std::move(series));
  }
  csv::write_file((fs::path(out_dir) / "seq_len.csv").string(), curve_table);
  svg::write_line_chart((fs::path(out_dir) / "seq_len.svg").string(),
                        "accuracy vs sequence length", "images in sequence", "accuracy",
                        curve_series);

  const auto hour_rows = accuracy_by_hour(sequences);
  csv::Table hour_table;
  hour_table.header = {"direction", "hour", "accuracy", "support"};
  for (const auto& r : hour_rows) {
    hour_table.rows.push_back(
        {std::to_string(r.direction), r.bucket, fmt6(r.accuracy), std::to_string(r.support)});
  }
  csv::write_file((fs::path(out_dir) / "hour_accuracy.csv").string(), hour_table);

  long seq_correct = 0;
  for (const auto& s : sequences) seq_correct += s.predicted == s.truth;
  const FoldSummary summary = summarize_folds(fold_metrics);
  std::cout << "frame_accuracy_mean " << fmt6(summary.accuracy_mean) << "\nframe_accuracy_spread "
            << fmt6(summary.accuracy_spread) << "\nsequence_accuracy "
            << fmt6(sequences.empty() ? 0.0
                                      : static_cast<double>(seq_correct) / sequences.size())
            << "\n";
  return kExitOk;
}

int cmd_attention(const std::string& ckpt_path, const std::string& frame_path,
                  const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const RasterFrame frame = read_ppm(frame_path);
  write_ppm(out_path, attention_overlay(frame, ckpt.params, ckpt.config));
  std::cout << "overlay " << out_path << "\n";
  return kExitOk;
}

std::vector<TripObservation> read_trip_values(const std::string& path) {
  const auto table = csv::read_file(path);
  const auto c_trip = table.col("trip_id");
  const auto c_dir = table.col("direction");
  const auto c_ts = table.col("approach_ts");
  const auto c_occ = table.col("occupancy");
  const auto c_tt = table.col("eff_tt_s");
  std::vector<TripObservation> out;
  for (const auto& row : table.rows) {
    TripObservation t;
    t.trip_id = row[c_trip];
    t.direction = std::stoi(row[c_dir]);
    t.approach_ts = std::stoll(row[c_ts]);
    t.occupancy = std::stod(row[c_occ]);
    t.eff_tt_s = std::stod(row[c_tt]);
    out.push_back(std::move(t));
  }
  return out;
}

int cmd_regress(const std::string& trips_path, const std::string& bands_path, bool lookahead,
                const std::string& scope, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto trips = read_trip_values(trips_path);
  const auto bands_table = csv::read_file(bands_path);
  const auto c_trip = bands_table.col("trip_id");
  const auto c_band = bands_table.col("band");
  std::map<std::string, TravelTimeBand> bands;
  for (const auto& row : bands_table.rows) bands[row[c_trip]] = parse_band(row[c_band]);
  for (auto& t : trips) {
    if (auto it = bands.find(t.trip_id); it != bands.end()) t.band = it->second;
  }
  if (lookahead) trips = lookahead_bands(trips);

  const int direction = scope == "inbound" ? 1 : 0;
  const ModelComparison cmp = compare_ols_vs_olsplus(trips, direction);
  for (const auto& [fit, model] :
       {std::pair<const FitResult&, const char*>{cmp.base, "ols"}, {cmp.plus, "ols_plus"}}) {
    csv::Table t;
    t.header = {"variable", "coef", "se", "t", "p", "stars"};
    for (const auto& cs : fit.coefficients) {
      t.rows.push_back({cs.name, fmt6(cs.coef), fmt6(cs.se), fmt6(cs.t), fmt6(cs.p), cs.stars});
    }
    csv::write_file((fs::path(out_dir) / ("fit_" + std::string(model) + ".csv")).string(), t);
  }
  csv::Table scatter;
  scatter.header = {"actual", "predicted", "model"};
  for (const auto& p : cmp.scatter) {
    scatter.rows.push_back({fmt6(p.actual), fmt6(p.predicted), p.model});
  }
  csv::write_file((fs::path(out_dir) / "scatter.csv").string(), scatter);

  std::cout << "r2_ols " << fmt6(cmp.base.r_squared) << "\nr2_ols_plus "
            << fmt6(cmp.plus.r_squared) << "\ndelta_r2 " << fmt6(cmp.delta_r2) << "\nmae_ols "
            << fmt6(cmp.base.mae) << "\nmae_ols_plus " << fmt6(cmp.plus.mae) << "\n";
  return kExitOk;
}

int cmd_pipeline(const std::string& config_path, const std::string& out_override,
                 std::uint64_t seed_override, bool seed_given, int threads_override,
                 bool threads_given) {
  ConfigLoadResult loaded =
      config_path.empty() ? validate_pipeline_config({}) : load_pipeline_config(config_path);
  if (!out_override.empty()) loaded.config.out_dir = out_override;
  if (seed_given) loaded.config.seed = seed_override;
  if (threads_given) loaded.config.threads = threads_override;
  // Revalidate after overrides by round-tripping the mutable knobs.
  if (!out_override.empty() || seed_given || threads_given) {
    auto err = loaded.errors;
    loaded.errors.clear();
    for (const auto& e : err) {
      if (e == "missing required path: out" && !loaded.config.out_dir.empty()) continue;
      loaded.errors.push_back(e);
    }
  }
  loaded.config.train.seed = derive_seed(loaded.config.seed, "train");
  loaded.config.train.threads = loaded.config.threads;
  if (!loaded.errors.empty()) {
    for (const auto& e : loaded.errors) std::cerr << "config error: " << e << "\n";
    return kExitValidation;
  }
  const RunSummary summary = run_pipeline(loaded.config);
  for (const auto& s : summary.stages) {
    std::cout << s.name << " " << s.status << "\n";
  }
  if (!summary.ok) {
    std::cerr << "failed at stage " << summary.failed_stage << ": " << summary.error << "\n";
    return kExitStageFailure;
  }
  std::cout << "summary " << (fs::path(loaded.config.out_dir) / "summary.json").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transit travel-time bands from roadside imagery"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (1 = bit-reproducible)")
      ->capture_default_str();
  app.add_option("--out", out, "output path or directory");
  app.fallthrough();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  SynthParams synth_params;
  synth->add_option("--n-trips", synth_params.n_trips)->capture_default_str();
  synth->add_option("--width", synth_params.frame_width)->capture_default_str();
  synth->add_option("--height", synth_params.frame_height)->capture_default_str();
  bool synth_separable = false;
  synth->add_flag("--separable", synth_separable, "gapped four-cluster travel times");

  // replay
  auto* rep = app.add_subcommand("replay", "replay a feed file to stdout");
  std::string feed_path;
  double speedup = 1.0;
  bool fast = false;
  rep->add_option("--feed", feed_path)->required();
  rep->add_option("--speedup", speedup)->capture_default_str();
  rep->add_flag("--fast", fast, "as fast as possible (no sleeping)");

  // trigger
  auto* trig = app.add_subcommand("trigger", "replay a feed through the session trigger");
  std::string trig_feed, trig_camera = "42.3647,-71.1032", trig_manifest;
  double radius_m = 500;
  int frames = 6, interval_s = 15;
  trig->add_option("--feed", trig_feed)->required();
  trig->add_option("--camera", trig_camera, "lat,lon")->capture_default_str();
  trig->add_option("--radius-m", radius_m)->capture_default_str();
  trig->add_option("--frames", frames)->capture_default_str();
  trig->add_option("--interval-s", interval_s)->capture_default_str();
  trig->add_option("--manifest", trig_manifest, "existing frames to capture from");

  // label
  auto* label = app.add_subcommand("label", "attach travel-time bands to a manifest");
  std::string label_manifest, label_trips, label_avl, label_scope = "per-direction";
  label->add_option("--manifest", label_manifest)->required();
  label->add_option("--trips", label_trips)->required();
  label->add_option("--avl", label_avl)->required();
  label->add_option("--scope", label_scope)->check(CLI::IsMember({"per-direction", "overall"}));

  // augment
  auto* aug = app.add_subcommand("augment", "expand a labeled manifest");
  std::string aug_manifest;
  int passes = 6;
  aug->add_option("--manifest", aug_manifest)->required();
  aug->add_option("--passes", passes)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train the classifier");
  std::string train_manifest, train_config;
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--config", train_config, "key=value model/optimizer settings");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with fold splits");
  std::string eval_ckpt, eval_manifest;
  int eval_folds = 5;
  eval->add_option("--ckpt", eval_ckpt)->required();
  eval->add_option("--manifest", eval_manifest)->required();
  eval->add_option("--folds", eval_folds)->capture_default_str();

  // attention
  auto* att = app.add_subcommand("attention", "export an attention overlay");
  std::string att_ckpt, att_frame;
  att->add_option("--ckpt", att_ckpt)->required();
  att->add_option("--frame", att_frame)->required();

  // regress
  auto* reg = app.add_subcommand("regress", "baseline vs band-augmented travel time models");
  std::string reg_trips, reg_bands, reg_scope = "inbound";
  bool lookahead = false;
  reg->add_option("--trips", reg_trips)->required();
  reg->add_option("--bands", reg_bands)->required();
  reg->add_flag("--lookahead", lookahead, "use the previous same-direction trip's band");
  reg->add_option("--scope", reg_scope)->check(CLI::IsMember({"inbound", "outbound"}));

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run the full desk-scale study");
  std::string pipe_config;
  pipe->add_option("--config", pipe_config, "key=value pipeline config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitValidation : kExitOk;
  }

  try {
    if (*synth) {
      if (out.empty()) throw ArgumentError("synth requires --out");
      synth_params.seed = seed;
      synth_params.separable = synth_separable;
      return cmd_synth(synth_params, out);
    }
    if (*rep) return cmd_replay(feed_path, speedup, fast);
    if (*trig) {
      if (out.empty()) throw ArgumentError("trigger requires --out");
      const auto comma = trig_camera.find(',');
      if (comma == std::string::npos) throw ArgumentError("--camera expects lat,lon");
      const double lat = std::stod(trig_camera.substr(0, comma));
      const double lon = std::stod(trig_camera.substr(comma + 1));
      return cmd_trigger(trig_feed, lat, lon, radius_m, frames, interval_s, trig_manifest, out);
    }
    if (*label) {
      if (out.empty()) throw ArgumentError("label requires --out");
      return cmd_label(label_manifest, label_trips, label_avl, label_scope, out);
    }
    if (*aug) {
      if (out.empty()) throw ArgumentError("augment requires --out");
      return cmd_augment(aug_manifest, passes, seed, out);
    }
    if (*train) {
      if (out.empty()) throw ArgumentError("train requires --out");
      return cmd_train(train_manifest, train_config, seed, threads, out);
    }
    if (*eval) {
      if (out.empty()) throw ArgumentError("eval requires --out");
      return cmd_eval(eval_ckpt, eval_manifest, eval_folds, seed, threads, out);
    }
    if (*att) {
      if (out.empty()) throw ArgumentError("attention requires --out");
      return cmd_attention(att_ckpt, att_frame, out);
    }
    if (*reg) {
      if (out.empty()) throw ArgumentError("regress requires --out");
      return cmd_regress(reg_trips, reg_bands, lookahead, reg_scope, out);
    }
    if (*pipe) {
      return cmd_pipeline(pipe_config, out, seed, app.count("--seed") > 0, threads,
                          app.count("--threads") > 0);
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitValidation;
}
