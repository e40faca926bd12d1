#pragma once

// Command-line front end: train, eval, forecast, synth, corrupt,
// export-structure. Exit codes: 2 config/usage, 3 data, 4 non-finite loss,
// 5 checkpoint/config hash mismatch, 6 hypergraph ablated, 1 failed --check.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eikf/eikf.hpp"

namespace eikf::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNonFinite = 4,
  kHashMismatch = 5,
  kAblated = 6,
};

class HashMismatch : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class Ablated : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kNA = "NA";

// ---------------------------------------------------------------- reports

inline std::string fmt_opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : kNA; }

inline std::string report_to_csv(const MetricReport& r, bool with_sigma) {
  std::ostringstream os;
  os << "horizon,mae,rmse,mape,count" << (with_sigma ? ",mean_sigma" : "") << '\n';
  auto row = [&](const std::string& label, const HorizonMetrics& m) {
    os << label << ',' << fmt_opt(m.mae) << ',' << fmt_opt(m.rmse) << ',' << fmt_opt(m.mape) << ',' << m.count;
    if (with_sigma) os << ',' << fmt_opt(m.mean_sigma);
    os << '\n';
  };
  for (std::size_t h = 0; h < r.per_horizon.size(); ++h) row(std::to_string(h + 1), r.per_horizon[h]);
  row("all", r.aggregate);
  return os.str();
}

struct ParsedReport {
  MetricReport report;
  bool with_sigma = false;
};

/// Inverse of report_to_csv; throws ParseError on any deviation from the
/// schema.
inline ParsedReport parse_report_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty report");
  const auto header = csv::split_line(line);
  ParsedReport p;
  p.with_sigma = header.size() == 6;
  const std::vector<std::string> expect = {"horizon", "mae", "rmse", "mape", "count", "mean_sigma"};
  if (header.size() < 5 || header.size() > 6 || !std::equal(header.begin(), header.end(), expect.begin()))
    throw ParseError(source + ": unexpected report header");
  auto opt = [&](const std::string& cell, std::size_t row, std::size_t col) -> std::optional<double> {
    if (cell == kNA) return std::nullopt;
    double v = 0.0;
    if (!csv::parse_double(cell, v)) throw ParseError(source + ": bad cell '" + cell + "'", row, col);
    return v;
  };
  std::size_t row = 0;
  bool saw_all = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    if (saw_all) throw ParseError(source + ": rows after the aggregate row", row);
    const auto c = csv::split_line(line);
    if (c.size() != header.size()) throw ParseError(source + ": ragged row", row, c.size());
    HorizonMetrics m;
    m.mae = opt(c[1], row, 2);
    m.rmse = opt(c[2], row, 3);
    m.mape = opt(c[3], row, 4);
    double count = 0.0;
    if (!csv::parse_double(c[4], count) || count < 0) throw ParseError(source + ": bad count", row, 5);
    m.count = static_cast<std::size_t>(count);
    if (p.with_sigma) m.mean_sigma = opt(c[5], row, 6);
    if (c[0] == "all") {
      p.report.aggregate = m;
      saw_all = true;
    } else {
      if (c[0] != std::to_string(p.report.per_horizon.size() + 1))
        throw ParseError(source + ": horizon rows out of order", row, 1);
      p.report.per_horizon.push_back(m);
    }
  }
  if (!saw_all) throw ParseError(source + ": missing aggregate row");
  return p;
}

// ---------------------------------------------------------------- helpers

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

/// Missingness seed resolution: with a scheme the seed defaults to the
/// training seed; without one it is irrelevant and dropped, so both cases
/// hash to a stable value.
inline void resolve_missing_seed(RunConfig& c) {
  if (c.missing.scheme && c.missing.rate > 0.0) {
    if (!c.missing.seed) c.missing.seed = c.train.seed;
  } else {
    c.missing.seed.reset();
  }
}

/// Relative data paths are taken relative to the config file.
inline RunConfig with_resolved_paths(RunConfig c, const std::string& config_path) {
  const fs::path base = fs::path(config_path).parent_path();
  for (std::string* p : {&c.data.series_path, &c.data.distance_path, &c.data.mask_path})
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).string();
  return c;
}

inline void write_labeled(const fs::path& path, const Tensor& t, const std::vector<std::string>& row_ids,
                          const std::string& prefix) {
  std::ostringstream os;
  os << "sensor";
  for (std::size_t j = 0; j < t.cols(); ++j) os << ',' << prefix << j + 1;
  os << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    os << row_ids[i];
    for (std::size_t j = 0; j < t.cols(); ++j) os << ',' << csv::format_double(t(i, j));
    os << '\n';
  }
  write_file(path, os.str());
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

inline RunConfig load_run_config(const Globals& g) {
  if (g.config.empty()) throw FieldError("--config", "required");
  RunConfig c = load_config(g.config);
  if (g.seed) c.train.seed = *g.seed;
  resolve_missing_seed(c);
  return c;
}

inline fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + g.out + "': " + ec.message());
  return p;
}

// ---------------------------------------------------------------- commands

inline int cmd_train(const Globals& g, std::ostream& out) {
  const RunConfig cfg = load_run_config(g);
  const fs::path dir = out_dir(g);
  const PreparedData data = prepare_data(with_resolved_paths(cfg, g.config));
  EIKFNet model(model_config(cfg, data.series.sensors()), data.graph.adjacency, cfg.train.seed);
  TrainConfig tc = train_config(cfg);
  tc.threads = threads_from_env();

  std::ofstream log(dir / "epochs.csv", std::ios::binary);
  if (!log) throw DataError("cannot write '" + (dir / "epochs.csv").string() + "'");
  log << "epoch,train_loss,val_mae,lr\n";
  const TrainResult res = train_loop(model, data.train, data.val, data.scaler, tc, [&](const EpochRecord& r) {
    log << r.epoch << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.val_mae) << ','
        << csv::format_double(r.lr) << '\n';
    log.flush();
  });
  const fs::path ckpt = dir / "checkpoint.json";
  save_checkpoint(ckpt.string(), make_checkpoint(cfg, model, data.series.sensor_ids, data.scaler, res.optimizer,
                                                 res.best_epoch, res.best_val_mae));
  out << "best_val_mae=" << csv::format_double(res.best_val_mae) << " best_epoch=" << res.best_epoch
      << " epochs=" << res.history.size() << " checkpoint=" << ckpt.string() << '\n';
  return kOk;
}

inline Checkpoint load_checked(const std::string& path, const RunConfig& cfg) {
  Checkpoint c = load_checkpoint(path);
  const std::string h = config_hash(cfg);
  if (h != c.config_hash)
    throw HashMismatch("config hash " + h + " does not match checkpoint hash " + c.config_hash);
  return c;
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";
  bool ha = false;
  std::string check;
};

inline int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(g);
  std::optional<Checkpoint> ckpt;
  if (!a.checkpoint.empty()) ckpt = load_checked(a.checkpoint, cfg);
  else if (!a.ha) throw FieldError("--checkpoint", "required unless --ha is given");
  if (a.split != "train" && a.split != "val" && a.split != "test")
    throw FieldError("--split", "expected train, val or test, got '" + a.split + "'");

  const PreparedData data = prepare_data(with_resolved_paths(cfg, g.config));
  const WindowedDataset& ds = data.by_name(a.split);
  MetricReport report;
  if (a.ha) {
    report = evaluate_ha(ds, data.scaler);
  } else {
    const EIKFNet model = restore_model(*ckpt);
    report = evaluate(model, ds, ckpt->scaler);
  }
  const std::string text = report_to_csv(report, cfg.model.uncertainty);

  if (!a.check.empty()) {
    const std::string stored = read_file(a.check);
    std::istringstream is(stored);
    const ParsedReport parsed = parse_report_csv(is, a.check);
    const std::string reserialized = report_to_csv(parsed.report, parsed.with_sigma);
    const bool ok = reserialized == stored && stored == text;
    out << (ok ? "check OK" : "check MISMATCH") << ' ' << a.check << '\n';
    return ok ? kOk : kCheckFailed;
  }
  const fs::path file = out_dir(g) / ("report_" + a.split + (a.ha ? "_ha" : "") + ".csv");
  write_file(file, text);
  out << text << "masked_excluded=" << report.masked_excluded << " report=" << file.string() << '\n';
  return kOk;
}

struct ForecastArgs {
  std::string checkpoint;
  std::string window;
};

inline int cmd_forecast(const Globals& g, const ForecastArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (!g.config.empty()) load_checked(a.checkpoint, load_run_config(g));
  const RawSeries w = load_series(a.window);
  const std::size_t tau = ckpt.config.data.tau, ups = ckpt.config.data.upsilon, n = ckpt.sensor_ids.size();
  if (w.steps() != tau)
    throw FieldError("--window", "expected " + std::to_string(tau) + " rows (tau), got " + std::to_string(w.steps()));
  if (w.sensor_ids != ckpt.sensor_ids) throw DataError(a.window + ": sensor ids do not match the checkpoint");

  const Tensor scaled = apply_scaler(w.values, ckpt.scaler);
  Window win;
  win.history = Tensor({n, tau});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < tau; ++k) win.history(i, k) = scaled(k, i);
  win.history_mask = Tensor({n, tau}, 1.0);
  const EIKFNet model = restore_model(ckpt);
  const Prediction p = predict(model, win);
  const Tensor mean = invert_scaler_nodes(p.mean, ckpt.scaler);
  std::optional<Tensor> sigma;
  if (p.variance) sigma = sigma_original(*p.variance, ckpt.scaler);

  std::ostringstream os;
  os << "sensor,horizon_step,y_pred" << (sigma ? ",sigma" : "") << '\n';
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < ups; ++h) {
      os << ckpt.sensor_ids[i] << ',' << h + 1 << ',' << csv::format_double(mean(i, h));
      if (sigma) os << ',' << csv::format_double((*sigma)(i, h));
      os << '\n';
    }
  const fs::path file = out_dir(g) / "forecast.csv";
  write_file(file, os.str());
  out << "rows=" << n * ups << " forecast=" << file.string() << '\n';
  return kOk;
}

inline int cmd_synth(const Globals& g, SyntheticConfig sc, std::ostream& out) {
  if (g.seed) sc.seed = *g.seed;
  const SyntheticData syn = generate_synthetic(sc);
  const fs::path dir = out_dir(g);
  const auto& ids = syn.series.sensor_ids;
  save_series((dir / "series.csv").string(), syn.series);
  save_distances((dir / "distances.csv").string(), syn.truth.distances, ids);
  write_labeled(dir / "truth_adjacency.csv", syn.truth.adjacency, ids, "s");
  write_labeled(dir / "truth_incidence.csv", syn.truth.incidence, ids, "e");
  RunConfig rc;
  rc.data.series_path = "series.csv";
  rc.data.distance_path = "distances.csv";
  rc.model.kernel_width = sc.kernel_width;
  rc.train.seed = sc.seed;
  write_file(dir / "config.json", config_to_json(rc).dump(2) + "\n");
  out << "sensors=" << sc.sensors << " steps=" << sc.steps << " communities=" << sc.communities
      << " dir=" << dir.string() << '\n';
  return kOk;
}

struct CorruptArgs {
  std::string series;
  std::string scheme;
  double rate = 0.0;
  double p_failure = kDefaultFailureProbability;
};

inline int cmd_corrupt(const Globals& g, const CorruptArgs& a, std::ostream& out) {
  RawSeries s = load_series(a.series);
  MissingScheme scheme;
  try {
    scheme = parse_scheme(a.scheme);
  } catch (const std::exception& e) {
    throw DataError(std::string("--scheme: ") + e.what());
  }
  const std::uint64_t seed = g.seed.value_or(0);
  const MissingnessMask m = scheme == MissingScheme::point
                                ? simulate_point_missing(s.steps(), s.sensors(), a.rate, seed)
                                : simulate_block_missing(s.steps(), s.sensors(), a.rate, seed, a.p_failure);
  for (std::size_t i = 0; i < s.values.size(); ++i)
    if (m.mask[i] == 0.0) s.values[i] = 0.0;
  const fs::path dir = out_dir(g);
  save_series((dir / "series.csv").string(), s);
  save_series((dir / "mask.csv").string(), RawSeries{m.mask, s.sensor_ids});
  out << "scheme=" << scheme_name(scheme) << " target_rate=" << csv::format_double(a.rate)
      << " missing_fraction=" << csv::format_double(m.missing_fraction()) << " dir=" << dir.string() << '\n';
  return kOk;
}

inline int cmd_export_structure(const Globals& g, const std::string& checkpoint, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const EIKFNet model = restore_model(ckpt);
  const auto structure = model.learned_structure();
  if (!structure) throw Ablated("checkpoint has the implicit hypergraph disabled");
  const auto& [incidence, probs] = *structure;
  const fs::path dir = out_dir(g);
  write_labeled(dir / "incidence.csv", incidence, ckpt.sensor_ids, "e");
  write_labeled(dir / "edge_probabilities.csv", probs, ckpt.sensor_ids, "e");
  out << "hyperedge,incident_fraction\n";
  for (std::size_t j = 0; j < incidence.cols(); ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < incidence.rows(); ++i) c += incidence(i, j);
    out << 'e' << j + 1 << ',' << csv::format_double(c / static_cast<double>(incidence.rows())) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- entry

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"eikf: spatio-temporal forecasting with learned hypergraphs"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  app.add_option("--out", g.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint.json and epochs.csv");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (or the HA baseline) on a split");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file");
  eval->add_option("--split", ea.split, "train, val or test");
  eval->add_flag("--ha", ea.ha, "Score the historical-average baseline");
  eval->add_option("--check", ea.check, "Verify a stored report instead of writing one");

  ForecastArgs fa;
  auto* forecast = app.add_subcommand("forecast", "Forecast from one tau-step window");
  forecast->add_option("--checkpoint", fa.checkpoint, "Checkpoint file")->required();
  forecast->add_option("--window", fa.window, "Series file with exactly tau rows")->required();

  SyntheticConfig sc;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted structure");
  synth->add_option("--sensors", sc.sensors);
  synth->add_option("--steps", sc.steps);
  synth->add_option("--communities", sc.communities);
  synth->add_option("--diffusion", sc.diffusion);
  synth->add_option("--noise-std", sc.noise_std);
  synth->add_option("--season-amplitude", sc.season_amplitude);
  synth->add_option("--level", sc.level);

  CorruptArgs ca;
  auto* corrupt = app.add_subcommand("corrupt", "Apply simulated missingness to a series");
  corrupt->add_option("--series", ca.series, "Input series file")->required();
  corrupt->add_option("--scheme", ca.scheme, "point or block")->required();
  corrupt->add_option("--rate", ca.rate, "Target missing rate")->required();
  corrupt->add_option("--p-failure", ca.p_failure, "Block failure probability");

  std::string export_ckpt;
  auto* exp = app.add_subcommand("export-structure", "Write the learned incidence and edge probabilities");
  exp->add_option("--checkpoint", export_ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, out);
    if (*eval) return cmd_eval(g, ea, out);
    if (*forecast) return cmd_forecast(g, fa, out);
    if (*synth) return cmd_synth(g, sc, out);
    if (*corrupt) return cmd_corrupt(g, ca, out);
    if (*exp) return cmd_export_structure(g, export_ckpt, out);
  } catch (const FieldError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NonFiniteLoss& e) {
    err << "non-finite loss: " << e.what() << '\n';
    return kNonFinite;
  } catch (const HashMismatch& e) {
    err << "hash mismatch: " << e.what() << '\n';
    return kHashMismatch;
  } catch (const Ablated& e) {
    err << "error: " << e.what() << '\n';
    return kAblated;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kConfigError;
}

}  // namespace eikf::cli
