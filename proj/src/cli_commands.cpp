#include "mrgnn/cli.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mrgnn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  report.write_csv(os);
  return os.str();
}

NodeSet select_nodes(const NodeSet& nodes, const std::vector<std::string>& keep) {
  NodeSet out;
  out.mode = nodes.mode;
  for (std::size_t i : nodes.indices_of(keep)) {
    out.node_ids.push_back(nodes.node_ids[i]);
    out.coordinates.push_back(nodes.coordinates[i]);
  }
  return out;
}

std::string_view rule_name(FilterRule rule) {
  switch (rule) {
    case FilterRule::min_orders_per_hour:
      return "min_orders_per_hour";
    case FilterRule::max_zero_run:
      return "max_zero_run";
    case FilterRule::none:
      break;
  }
  return "none";
}

PreparedData load_prepared(const ExperimentConfig& config) {
  const fs::path path = config.out_dir / kDatasetFile;
  if (!fs::exists(path)) throw DataError("dataset archive '" + path.string() + "' not found; run ingest first");
  PreparedData data = load_dataset(path);
  data.window = config.window;
  return data;
}

/// Dataset restricted to the configured modes plus the stored graph set,
/// checked against each other.
PreparedExperiment load_experiment(const ExperimentConfig& config) {
  PreparedData data = load_prepared(config);
  const fs::path gpath = config.out_dir / kGraphFile;
  if (!fs::exists(gpath)) throw DataError("graph set '" + gpath.string() + "' not found; run build-graphs first");
  PreparedExperiment p;
  p.data = data.subset(config.modes);
  p.graph_set = load_graph_set(gpath);
  if (p.graph_set.target != config.target || p.graph_set.modes() != canonical_modes(config.modes)) {
    throw ConfigError("graph set was built for modes '" + combination_label(p.graph_set.modes()) + "' with target '" +
                      std::string(to_string(p.graph_set.target)) + "'; rerun build-graphs");
  }
  for (const auto& [m, nodes] : p.data.nodes) {
    if (p.graph_set.node_sets.at(m).node_ids != nodes.node_ids) {
      throw DataError("graph set node order for '" + std::string(to_string(m)) + "' does not match the dataset");
    }
  }
  p.graphs = normalize_graphs(p.graph_set);
  p.train = make_windows(p.data.splits, Split::train, p.data.window);
  p.val = make_windows(p.data.splits, Split::val, p.data.window);
  p.test = make_windows(p.data.splits, Split::test, p.data.window);
  return p;
}

ModelConfig model_config(const ExperimentConfig& config, const std::vector<Mode>& modes) {
  ModelConfig m = config.experiment_spec().model;
  m.modes = canonical_modes(modes);
  return m;
}

std::string error_kind(int code) {
  switch (code) {
    case kExitConfig:
      return "config";
    case kExitData:
      return "data";
    case kExitNumeric:
      return "numeric";
    default:
      return "internal";
  }
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

void write_trip_file(const fs::path& path, const DemandTensor& demand, Timestamp span_end) {
  std::ostringstream os;
  os << "pickup_time,pickup_id,dropoff_time,dropoff_id\n";
  const Timestamp span_start = demand.bin_start;
  for (std::size_t b = 0; b < demand.bins(); ++b) {
    std::vector<std::size_t> pickups, dropoffs;
    for (std::size_t n = 0; n < demand.nodes(); ++n) {
      pickups.insert(pickups.end(), static_cast<std::size_t>(demand.at(b, n, kOutflow)), n);
      dropoffs.insert(dropoffs.end(), static_cast<std::size_t>(demand.at(b, n, kInflow)), n);
    }
    const Timestamp t0 = demand.bin_time(b);
    const std::string pickup_in = format_timestamp(t0 + demand.bin_width / 4);
    const std::string dropoff_in = format_timestamp(t0 + demand.bin_width / 2);
    const std::size_t paired = std::min(pickups.size(), dropoffs.size());
    for (std::size_t i = 0; i < paired; ++i) {
      os << pickup_in << ',' << demand.node_ids[pickups[i]] << ',' << dropoff_in << ',' << demand.node_ids[dropoffs[i]]
         << '\n';
    }
    // Unpaired ends get a partner outside the span so binned totals stay exact.
    for (std::size_t i = paired; i < pickups.size(); ++i) {
      os << pickup_in << ',' << demand.node_ids[pickups[i]] << ',' << format_timestamp(span_end + 600) << ','
         << demand.node_ids[pickups[i]] << '\n';
    }
    for (std::size_t i = paired; i < dropoffs.size(); ++i) {
      os << format_timestamp(span_start - 3600) << ',' << demand.node_ids[dropoffs[i]] << ',' << dropoff_in << ','
         << demand.node_ids[dropoffs[i]] << '\n';
    }
  }
  write_text(path, os.str());
}

void write_cumulative_counts(const fs::path& path, const DemandTensor& demand) {
  std::ostringstream os;
  os << "station_id,period_start,entries,exits\n";
  for (std::size_t n = 0; n < demand.nodes(); ++n) {
    long long entries = 1000 * static_cast<long long>(n + 1);
    long long exits = 500 * static_cast<long long>(n + 1);
    for (std::size_t b = 0; b <= demand.bins(); ++b) {
      os << demand.node_ids[n] << ',' << format_timestamp(demand.bin_time(b)) << ',' << entries << ',' << exits << '\n';
      if (b == demand.bins()) break;
      entries += static_cast<long long>(demand.at(b, n, kInflow));
      exits += static_cast<long long>(demand.at(b, n, kOutflow));
    }
  }
  write_text(path, os.str());
}

void write_registry(const fs::path& path, const NodeSet& nodes) {
  constexpr double kOriginLon = -73.97, kOriginLat = 40.75;
  std::ostringstream os;
  os << "node_id,lon,lat\n" << std::setprecision(17);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const RawNode r = unproject(nodes.node_ids[i], nodes.coordinates[i], kOriginLon, kOriginLat);
    os << r.id << ',' << r.lon << ',' << r.lat << '\n';
  }
  write_text(path, os.str());
}

}  // namespace

fs::path run_dir(const fs::path& out, std::uint64_t seed) { return out / ("run_" + std::to_string(seed)); }

ExperimentConfig resolve_config(const Options& options) {
  ExperimentConfig config = options.config ? load_config(*options.config) : config_from_json(json::object());
  if (options.seed) {
    config.train.seeds = {*options.seed};
    config.synth_seed = *options.seed;
  }
  if (options.out) config.out_dir = *options.out;
  if (options.stop_after_epoch && *options.stop_after_epoch < 1) throw ConfigError("stop-after-epoch must be positive");
  config.validate(false);
  return config;
}

void cmd_ingest(const ExperimentConfig& config, std::ostream& log) {
  config.validate(true);
  const Span span{*config.span_start, *config.span_end, config.bin_width};

  std::map<Mode, std::vector<RawNode>> registries;
  for (Mode m : config.modes) registries[m] = load_node_registry(config.sources.at(m).nodes);
  const std::map<Mode, NodeSet> projected = project_registries(registries);

  PreparedData data;
  data.window = config.window;
  json summary;
  summary["span"] = {{"start", format_timestamp(span.start)}, {"end", format_timestamp(span.end)}, {"bins", span.bins()}};
  for (Mode m : canonical_modes(config.modes)) {
    const ModeSource& src = config.sources.at(m);
    const NodeSet& nodes = projected.at(m);
    json s;
    DemandTensor tensor;
    BinCounts counts;
    if (m == Mode::subway) {
      const CountLoad load = load_turnstile_counts(src.records, nodes, src.schema);
      s["rows_read"] = load.rows;
      s["rows_skipped"] = load.skipped;
      s["counter_anomalies"] = load.anomalies;
      tensor = bin_counts(load.counts, nodes, span, &counts);
      s["periods_outside_span"] = counts.pickups_outside;
    } else {
      const TripLoad load =
          load_trip_records(src.records, nodes, m == Mode::bike ? TripSchema::bike : TripSchema::ridehail);
      s["rows_read"] = load.rows;
      s["rows_skipped"] = load.skipped;
      tensor = bin_demand(load.events, nodes, span, &counts);
      s["pickups_outside_span"] = counts.pickups_outside;
      s["dropoffs_outside_span"] = counts.dropoffs_outside;
    }
    s["binned_inflow"] = tensor.values.col(kInflow).sum();
    s["binned_outflow"] = tensor.values.col(kOutflow).sum();

    const FilterRule rule = default_rule(m);
    FilterResult filtered = filter_nodes(tensor, rule, config.filters);
    s["filter_rule"] = rule_name(rule);
    s["nodes_kept"] = filtered.kept.size();
    s["nodes_dropped"] = filtered.dropped.size();
    s["dropped_ids"] = filtered.dropped;
    if (filtered.kept.empty()) throw DataError("every " + std::string(to_string(m)) + " node was removed by filtering");

    data.nodes[m] = select_nodes(nodes, filtered.kept);
    data.splits[m] = split_and_normalize(filtered.tensor, config.splits);
    summary["modes"][std::string(to_string(m))] = s;
    log << to_string(m) << ": " << s["rows_read"] << " rows, " << s["rows_skipped"] << " skipped, "
        << filtered.kept.size() << " nodes kept, " << filtered.dropped.size() << " dropped\n";
  }
  // Fail on a span too short for the window before anything is written.
  for (Split sp : {Split::train, Split::val, Split::test}) make_windows(data.splits, sp, data.window);

  ensure_dir(config.out_dir);
  save_dataset(data, config.out_dir / kDatasetFile);
  write_json(config.out_dir / kIngestSummaryFile, summary);
  log << "wrote " << (config.out_dir / kDatasetFile).string() << '\n';
}

void cmd_build_graphs(const ExperimentConfig& config, std::ostream& log) {
  const PreparedData data = load_prepared(config).subset(config.modes);
  std::map<Mode, DemandTensor> training;
  for (const auto& [m, s] : data.splits) training.emplace(m, s.train);
  const MultiRelationalGraphSet gs = assemble_graph_set(config.target, data.nodes, training, config.graph);

  json census;
  census["target"] = to_string(gs.target);
  census["modes"] = combination_label(gs.modes());
  census["relations"] = gs.relations.size();
  json matrices = json::array();
  for (const auto& [key, rel] : gs.relations) {
    matrices.push_back({{"name", relation_name(key)},
                        {"rows", rel.weights.rows()},
                        {"cols", rel.weights.cols()},
                        {"nonzeros", (rel.weights.array() != 0.0).count()}});
  }
  census["matrices"] = matrices;

  save_graph_set(gs, config.out_dir / kGraphFile);
  write_json(config.out_dir / kGraphCensusFile, census);
  log << "relations: " << gs.relations.size() << '\n';
  for (const auto& m : matrices) log << "  " << m["name"].get<std::string>() << " nonzeros=" << m["nonzeros"] << '\n';
}

void cmd_train(const ExperimentConfig& config, const Options& options, std::ostream& log) {
  const PreparedExperiment p = load_experiment(config);
  const ModelConfig mc = model_config(config, p.data.modes());
  const std::string label = combination_label(mc.modes);

  MetricsReport report;
  bool interrupted = false;
  for (std::uint64_t seed : config.train.seeds) {
    const fs::path dir = run_dir(config.out_dir, seed);
    ensure_dir(dir);
    const fs::path state_path = dir / "state.mrts";
    const fs::path log_path = dir / "train_log.csv";

    // The log is rebuilt from saved state on resume, then appended per epoch.
    {
      std::ofstream out(log_path, std::ios::trunc);
      out << "epoch,train_loss,val_loss\n";
      if (options.resume && fs::exists(state_path)) {
        const TrainingState s = load_training_state(state_path, p.graphs.fingerprint);
        for (const auto& e : s.log.epochs) {
          out << e.epoch << ',' << std::setprecision(17) << e.train_loss << ',' << e.val_loss << '\n';
        }
      }
    }
    std::ofstream epoch_log(log_path, std::ios::app);
    TrainOptions opts;
    opts.state_path = state_path;
    opts.resume = options.resume;
    opts.stop_after_epoch = options.stop_after_epoch;
    opts.on_epoch = [&epoch_log](const EpochRecord& e) {
      epoch_log << e.epoch << ',' << std::setprecision(17) << e.train_loss << ',' << e.val_loss << '\n' << std::flush;
    };

    TrainResult result = train_model(init_model(mc, seed), p.train, p.val, p.graphs, config.train, seed, opts);
    if (result.interrupted) {
      interrupted = true;
      log << "seed " << seed << ": stopped after epoch " << result.log.epochs.size() << "; rerun with --resume\n";
      continue;
    }
    Checkpoint ck;
    ck.model = result.model;
    for (const auto& [m, s] : p.data.splits) ck.stats[m] = s.stats;
    ck.graph_fingerprint = p.graphs.fingerprint;
    ck.epochs = static_cast<int>(result.log.epochs.size());
    save_checkpoint(ck, dir / "checkpoint.mrck");

    RunRecord r;
    r.model = "B-MRGNN";
    r.combination = label;
    r.seed = seed;
    r.metrics = evaluate_split(result.model, p, Split::test);
    r.epochs = ck.epochs;
    report.runs.push_back(r);
    log << "seed " << seed << ": epochs=" << r.epochs << " best_epoch=" << result.log.best_epoch
        << " test_rmse=" << r.metrics.rmse << '\n';
  }
  if (interrupted) return;
  write_text(config.out_dir / kTrainMetricsFile, report_csv(report));
  log << "wrote " << (config.out_dir / kTrainMetricsFile).string() << '\n';
}

void cmd_evaluate(const ExperimentConfig& config, std::ostream& log) {
  const PreparedExperiment p = load_experiment(config);
  MetricsReport report;
  for (std::uint64_t seed : config.train.seeds) {
    const fs::path path = run_dir(config.out_dir, seed) / "checkpoint.mrck";
    if (!fs::exists(path)) throw DataError("checkpoint '" + path.string() + "' not found; run train first");
    const Checkpoint ck = load_checkpoint(path, p.graphs.fingerprint);
    check_compatible(ck.model.config, p.graphs);
    RunRecord r;
    r.model = "B-MRGNN";
    r.combination = combination_label(ck.model.config.modes);
    r.seed = seed;
    r.metrics = evaluate_split(ck.model, p, Split::test);
    r.epochs = ck.epochs;
    report.runs.push_back(r);
  }
  for (const auto& r : run_baselines(p.data, config.target).runs) report.runs.push_back(r);
  write_text(config.out_dir / kEvaluationFile, report_csv(report));
  report.write_csv(log);
}

void cmd_ablate(const ExperimentConfig& config, std::ostream& log) {
  PreparedData data = load_prepared(config);
  if (data.modes().size() != all_modes.size()) {
    throw DataError("ablation needs a dataset covering all three modes, found '" + combination_label(data.modes()) + "'");
  }
  std::vector<std::vector<Mode>> cells{{config.target}};
  std::vector<Mode> aux;
  for (Mode m : all_modes) {
    if (m != config.target) aux.push_back(m);
  }
  for (Mode m : aux) cells.push_back(canonical_modes({config.target, m}));
  cells.push_back(canonical_modes({all_modes.begin(), all_modes.end()}));

  const ExperimentSpec spec = config.experiment_spec();
  MetricsReport runs;
  std::vector<std::pair<std::string, std::string>> status;  // label, status
  for (const auto& cell : cells) status.emplace_back(combination_label(cell), "pending");

  auto flush = [&]() {
    std::ostringstream os;
    os << "combination,rmse,mae,r2,runs,status\n" << std::setprecision(10);
    for (const auto& [label, st] : status) {
      const auto agg = runs.aggregate("B-MRGNN", label);
      int n = 0;
      for (const auto& r : runs.runs) n += r.combination == label && r.status == "ok";
      os << label << ',';
      if (agg) {
        os << agg->metrics.rmse << ',' << agg->metrics.mae << ',';
        if (agg->metrics.r2) {
          os << *agg->metrics.r2;
        } else {
          os << "NA";
        }
      } else {
        os << "NA,NA,NA";
      }
      os << ',' << n << ',' << st << '\n';
    }
    write_text(config.out_dir / kAblationFile, os.str());
    write_text(config.out_dir / kAblationRunsFile, report_csv(runs));
  };

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const std::string label = status[c].first;
    try {
      const PreparedExperiment p = prepare_experiment(data, cells[c], config.target, config.graph);
      const ModelConfig mc = model_config(config, cells[c]);
      for (std::uint64_t seed : config.train.seeds) {
        TrainResult result = train_model(init_model(mc, seed), p.train, p.val, p.graphs, spec.train, seed);
        RunRecord r;
        r.model = "B-MRGNN";
        r.combination = label;
        r.seed = seed;
        r.metrics = evaluate_split(result.model, p, Split::test);
        r.epochs = static_cast<int>(result.log.epochs.size());
        runs.runs.push_back(r);
        log << label << " seed " << seed << ": test_rmse=" << r.metrics.rmse << '\n';
        flush();
      }
      status[c].second = "ok";
    } catch (...) {
      status[c].second = "failed";
      for (std::size_t rest = c + 1; rest < cells.size(); ++rest) status[rest].second = "not_run";
      flush();
      throw;
    }
    flush();
  }
  log << "wrote " << (config.out_dir / kAblationFile).string() << '\n';
}

void cmd_synth(const ExperimentConfig& config, std::ostream& log) {
  const SyntheticData synth = generate_synthetic(config.synth, config.synth_seed);
  ensure_dir(config.out_dir);
  const fs::path& out = config.out_dir;
  const DemandTensor& bike = synth.demand.at(Mode::bike);
  const Timestamp span_start = bike.bin_start;
  const Timestamp span_end = bike.bin_time(bike.bins());

  write_trip_file(out / "bike_trips.csv", bike, span_end);
  write_trip_file(out / "ridehail_trips.csv", synth.demand.at(Mode::ridehail), span_end);
  write_cumulative_counts(out / "subway_counts.csv", synth.demand.at(Mode::subway));
  for (Mode m : all_modes) write_registry(out / (std::string(to_string(m)) + "_nodes.csv"), synth.nodes.at(m));

  std::ostringstream links;
  links << "bike_id,subway_id\n";
  for (const auto& [b, s] : synth.links) {
    links << synth.nodes.at(Mode::bike).node_ids[b] << ',' << synth.nodes.at(Mode::subway).node_ids[s] << '\n';
  }
  write_text(out / kLinkMapFile, links.str());

  json totals;
  totals["alpha"] = synth.alpha;
  totals["seed"] = config.synth_seed;
  for (const auto& [m, d] : synth.demand) {
    totals["modes"][std::string(to_string(m))] = {{"inflow", d.values.col(kInflow).sum()},
                                                  {"outflow", d.values.col(kOutflow).sum()},
                                                  {"nodes", d.nodes()},
                                                  {"bins", d.bins()}};
  }
  write_json(out / kSynthTotalsFile, totals);

  // A ready-to-ingest config describing the generated files.
  ExperimentConfig next = config;
  next.sources = {{Mode::bike, {"bike_trips.csv", "bike_nodes.csv", CountSchema::cumulative}},
                  {Mode::subway, {"subway_counts.csv", "subway_nodes.csv", CountSchema::cumulative}},
                  {Mode::ridehail, {"ridehail_trips.csv", "ridehail_nodes.csv", CountSchema::cumulative}}};
  next.span_start = span_start;
  next.span_end = span_end;
  next.out_dir = ".";
  json j = to_json(next);
  j.erase("synth");
  write_json(out / kSynthConfigFile, j);
  log << "wrote synthetic data for seed " << config.synth_seed << " to " << out.string() << '\n';
}

int run(const std::string& command, const Options& options, std::ostream& out, std::ostream& err) {
  int code = kExitOk;
  std::string message;
  try {
    const ExperimentConfig config = resolve_config(options);
    if (command == "ingest") {
      cmd_ingest(config, out);
    } else if (command == "build-graphs") {
      cmd_build_graphs(config, out);
    } else if (command == "train") {
      cmd_train(config, options, out);
    } else if (command == "evaluate") {
      cmd_evaluate(config, out);
    } else if (command == "ablate") {
      cmd_ablate(config, out);
    } else if (command == "synth") {
      cmd_synth(config, out);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
  } catch (const ConfigError& e) {
    code = kExitConfig;
    message = e.what();
  } catch (const DataError& e) {
    code = kExitData;
    message = e.what();
  } catch (const NumericError& e) {
    code = kExitNumeric;
    message = e.what();
  } catch (const std::exception& e) {
    code = kExitInternal;
    message = e.what();
  }
  if (code != kExitOk) {
    err << "error kind=" << error_kind(code) << " code=" << code << " message=" << one_line(message) << std::endl;
  }
  return code;
}

}  // namespace mrgnn::cli
