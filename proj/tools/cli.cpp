#include "cli.hpp"

#include "gema/baselines.hpp"
#include "gema/data_model.hpp"
#include "gema/error.hpp"
#include "gema/evaluation.hpp"
#include "gema/geometry.hpp"
#include "gema/proman_vae.hpp"
#include "gema/quotient.hpp"
#include "gema/serialize.hpp"
#include "gema/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

namespace gema::cli {

namespace {

using nlohmann::json;

constexpr const char* kPrecedence =
    "Settings resolve as built-in defaults, then the --config JSON file, then command-line flags (flags win).";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json provenance(const std::string& command, const json& config) {
  return {{"tool", "gema"}, {"command", command}, {"config", config}};
}

// CSV outputs carry their provenance in a sidecar next to them.
void write_sidecar(const std::string& artifact, const json& prov) { write_json(artifact + ".provenance.json", prov); }

// ---------------------------------------------------------------------------
// Column roles

struct ColumnFlags {
  std::string schema_file;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string scale;
  std::string entity;
  std::string time;

  void add(CLI::App* app) {
    app->add_option("--schema", schema_file, "JSON sidecar {\"roles\": {column: role}}");
    app->add_option("--input-cols", inputs, "Input columns (comma separated)")->delimiter(',');
    app->add_option("--output-cols", outputs, "Output columns (comma separated)")->delimiter(',');
    app->add_option("--scale-col", scale, "Scale column");
    app->add_option("--entity-col", entity, "Entity id column");
    app->add_option("--time-col", time, "Time id column");
  }

  bool any() const { return !schema_file.empty() || !inputs.empty() || !outputs.empty(); }

  Schema resolve() const {
    Schema s;
    if (!schema_file.empty()) s = load_schema_json(schema_file);
    for (const auto& c : inputs) s[c] = ColumnRole::Input;
    for (const auto& c : outputs) s[c] = ColumnRole::Output;
    if (!scale.empty()) s[scale] = ColumnRole::Scale;
    if (!entity.empty()) s[entity] = ColumnRole::EntityId;
    if (!time.empty()) s[time] = ColumnRole::TimeId;
    return s;
  }

  // Roles a fitted model expects when no flags are given.
  Schema from_model(const ProManModel& m) const {
    if (any()) return resolve();
    Schema s;
    for (const auto& c : m.meta.input_cols) s[c] = ColumnRole::Input;
    for (const auto& c : m.meta.output_cols) s[c] = ColumnRole::Output;
    if (m.meta.entity_col) s[*m.meta.entity_col] = ColumnRole::EntityId;
    if (m.meta.time_col) s[*m.meta.time_col] = ColumnRole::TimeId;
    if (!scale.empty()) s[scale] = ColumnRole::Scale;
    if (!entity.empty()) s[entity] = ColumnRole::EntityId;
    if (!time.empty()) s[time] = ColumnRole::TimeId;
    return s;
  }
};

json schema_json(const Schema& s) {
  json j = json::object();
  for (const auto& [name, role] : s) j[name] = std::string(to_string(role));
  return j;
}

void require_roles(const Schema& s) {
  bool in = false, out = false;
  for (const auto& [name, role] : s) {
    in = in || role == ColumnRole::Input;
    out = out || role == ColumnRole::Output;
  }
  if (!in || !out) throw UsageError("declare input and output columns with --input-cols/--output-cols or --schema");
}

struct QuotientFlags {
  bool on = false;

  void add(CLI::App* app) { app->add_flag("--quotient", on, "Work in the quotient space of --scale-col"); }

  DatasetFrame apply(const DatasetFrame& frame, const ColumnFlags& cols) const {
    if (!on) return frame;
    if (cols.scale.empty()) throw UsageError("--quotient needs --scale-col");
    return quotient_project(frame, cols.scale).frame;
  }
};

// ---------------------------------------------------------------------------
// Training config flags

struct TrainFlags {
  std::string config_file;
  json overrides = json::object();
  std::vector<std::function<void()>> collect;

  template <class T>
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    collect.push_back([this, opt, value, key] {
      if (opt->count() > 0) overrides[key] = *value;
    });
  }

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "Training config JSON");
    flag<int>(app, "--latent-dim", "latent_dim", "Latent technology dimension");
    flag<int>(app, "--hidden-dim", "hidden_dim", "Hidden width");
    flag<int>(app, "--epochs", "epochs", "Training epochs");
    flag<int>(app, "--batch-size", "batch_size", "Minibatch size");
    flag<double>(app, "--learning-rate", "learning_rate", "Adam learning rate");
    flag<double>(app, "--gamma-u", "gamma_u", "Weight on the inefficiency KL");
    flag<double>(app, "--lambda-mono", "lambda_mono", "Monotonicity penalty weight");
    flag<int>(app, "--beta-anneal-epochs", "beta_anneal_epochs", "Epochs of KL annealing");
    flag<int>(app, "--patience", "patience", "Early stopping patience");
    flag<double>(app, "--dropout", "dropout", "Dropout rate");
    flag<double>(app, "--weight-decay", "weight_decay", "Decoupled weight decay");
    flag<double>(app, "--huber-delta", "huber_delta", "Huber threshold");
    flag<std::string>(app, "--activation", "activation", "Hidden activation");
    flag<bool>(app, "--spectral-norm", "spectral_norm", "Spectrally normalise the decoder (true/false)");
    flag<std::string>(app, "--transform", "transform", "Log transform: log1p, log or none");
    flag<std::uint64_t>(app, "--seed", "seed", "Random seed");
  }

  TrainConfig resolve(const TrainConfig& defaults) {
    for (auto& f : collect) f();
    TrainConfig base = defaults;
    if (!config_file.empty()) base = TrainConfig::from_json(read_json_file(config_file), defaults);
    return TrainConfig::from_json(overrides, base);
  }
};

// ---------------------------------------------------------------------------
// Commands

struct SynthCmd {
  std::string scenario;
  std::size_t n = 500;
  std::uint64_t seed = 0;
  std::string out;
  std::string truth;
  std::string config_file;
  CLI::Option* scenario_opt = nullptr;
  CLI::Option* n_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app) {
    scenario_opt = app->add_option("--scenario", scenario, "a, b or c");
    n_opt = app->add_option("--n", n, "Number of DMUs");
    seed_opt = app->add_option("--seed", seed, "Random seed");
    app->add_option("--out", out, "Data CSV")->required();
    app->add_option("--truth", truth, "Ground-truth CSV");
    app->add_option("--config", config_file, "JSON with scenario, n, seed");
  }

  void run(std::ostream& os) {
    json cfg = {{"scenario", "a"}, {"n", 500}, {"seed", 0}};
    if (!config_file.empty()) {
      for (const auto& [k, v] : read_json_file(config_file).items()) {
        if (!cfg.contains(k)) throw Error(ErrorCode::InvalidArgument, "unknown synth config key '" + k + "'");
        cfg[k] = v;
      }
    }
    if (scenario_opt->count()) cfg["scenario"] = scenario;
    if (n_opt->count()) cfg["n"] = n;
    if (seed_opt->count()) cfg["seed"] = seed;
    const Scenario sc = scenario_from_string(cfg["scenario"].get<std::string>());
    const SynthSample s = generate(sc, cfg["n"].get<std::size_t>(), cfg["seed"].get<std::uint64_t>());
    std::vector<std::string> header;
    std::vector<std::vector<double>> cols;
    for (const auto& c : s.frame.columns()) {
      header.push_back(c.name);
      cols.push_back(c.values);
    }
    write_csv(out, header, cols);
    json prov = provenance("synth", cfg);
    prov["params"] = s.params;
    prov["roles"] = json::object();
    for (const auto& c : s.frame.columns()) prov["roles"][c.name] = std::string(to_string(c.role));
    write_sidecar(out, prov);
    if (!truth.empty()) {
      s.write_truth(truth);
      write_sidecar(truth, prov);
    }
    os << "wrote " << s.frame.n_rows() << " rows to " << out << "\n";
  }
};

struct TrainCmd {
  std::string data;
  std::string out;
  std::string report;
  ColumnFlags cols;
  QuotientFlags quotient;
  TrainFlags train;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Input CSV")->required();
    app->add_option("--out", out, "Model file (.json for JSON, otherwise binary)")->required();
    app->add_option("--report", report, "Training report JSON");
    cols.add(app);
    quotient.add(app);
    train.add(app);
  }

  void run(std::ostream& os) {
    const TrainConfig cfg = train.resolve(TrainConfig{});
    const Schema schema = cols.resolve();
    require_roles(schema);
    const DatasetFrame frame = quotient.apply(load_csv(data, schema), cols);
    const TrainResult r = fit(frame, cfg);
    save_model(r.model, out);
    json prov = provenance("train", cfg.to_json());
    prov["data"] = data;
    prov["roles"] = schema_json(schema);
    prov["quotient"] = quotient.on;
    if (quotient.on) prov["scale_col"] = cols.scale;
    write_sidecar(out, prov);
    if (!report.empty()) {
      json rep = r.report.to_json();
      rep["provenance"] = prov;
      write_json(report, rep);
    }
    os << "trained on " << frame.n_rows() << " rows; best epoch " << r.report.best_epoch << "\n";
  }
};

struct ScoreCmd {
  std::string model_path;
  std::string data;
  std::string out;
  ColumnFlags cols;
  QuotientFlags quotient;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "Model file")->required();
    app->add_option("--data", data, "Input CSV")->required();
    app->add_option("--out", out, "Scores CSV")->required();
    cols.add(app);
    quotient.add(app);
  }

  void run(std::ostream& os) {
    const ProManModel model = load_model(model_path);
    const Schema schema = cols.from_model(model);
    const DatasetFrame frame = quotient.apply(load_csv(data, schema), cols);
    const auto eff = efficiency_scores(model, frame);
    const Matrix z = latent_technology(model, frame);
    std::vector<std::string> header{"row", "efficiency", "expected_u", "mu_u", "var_u"};
    std::vector<std::vector<double>> c(5 + static_cast<std::size_t>(z.cols()));
    for (Eigen::Index k = 0; k < z.cols(); ++k) header.push_back("z" + std::to_string(k + 1));
    for (std::size_t i = 0; i < eff.size(); ++i) {
      c[0].push_back(static_cast<double>(frame.row_ids()[i]));
      c[1].push_back(eff[i].efficiency);
      c[2].push_back(eff[i].expected_u);
      c[3].push_back(eff[i].mu_u);
      c[4].push_back(eff[i].var_u);
      for (Eigen::Index k = 0; k < z.cols(); ++k) c[5 + static_cast<std::size_t>(k)].push_back(z(static_cast<Eigen::Index>(i), k));
    }
    write_csv(out, header, c);
    json prov = provenance("score", model.config.to_json());
    prov["model"] = model_path;
    prov["data"] = data;
    prov["roles"] = schema_json(schema);
    prov["quotient"] = quotient.on;
    write_sidecar(out, prov);
    os << "scored " << eff.size() << " rows\n";
  }
};

struct CertifyCmd {
  std::string model_path;
  std::string data;
  std::string out;
  std::string summary;
  double score_q = 0.9;
  double radius_q = 0.25;
  int jobs = 1;
  ColumnFlags cols;
  QuotientFlags quotient;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "Model file")->required();
    app->add_option("--data", data, "Input CSV")->required();
    app->add_option("--out", out, "Per-row certification CSV")->required();
    app->add_option("--summary", summary, "Percentile summary JSON");
    app->add_option("--score-quantile", score_q, "Fragile region: score quantile")->check(CLI::Range(0.0, 1.0));
    app->add_option("--radius-quantile", radius_q, "Fragile region: radius quantile")->check(CLI::Range(0.0, 1.0));
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    cols.add(app);
    quotient.add(app);
  }

  void run(std::ostream& os) {
    const ProManModel model = load_model(model_path);
    const Schema schema = cols.from_model(model);
    const DatasetFrame frame = quotient.apply(load_csv(data, schema), cols);
    const auto eff = efficiency_scores(model, frame);
    const auto rec = certification_radius(model, frame, jobs);
    std::vector<double> scores, radii;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      scores.push_back(eff[i].efficiency);
      radii.push_back(rec[i].r_cert);
    }
    const FragileResult fr = fragile_flags(scores, radii, score_q, radius_q);
    std::vector<std::vector<double>> c(6);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      c[0].push_back(static_cast<double>(rec[i].row));
      c[1].push_back(scores[i]);
      c[2].push_back(rec[i].sigma_min);
      c[3].push_back(rec[i].l_bound);
      c[4].push_back(rec[i].r_cert);
      c[5].push_back(fr.flags[i] ? 1.0 : 0.0);
    }
    write_csv(out, {"row", "score", "sigma_min", "L_bound", "R_cert", "fragile_flag"}, c);
    json cfg = {{"model_config", model.config.to_json()}, {"score_quantile", score_q}, {"radius_quantile", radius_q}};
    json prov = provenance("certify", cfg);
    prov["model"] = model_path;
    prov["data"] = data;
    prov["quotient"] = quotient.on;
    write_sidecar(out, prov);
    if (!summary.empty()) {
      const PercentileTable t = certification_percentiles(rec);
      json s = {{"percentiles", t.to_json()},
                {"fragile",
                 {{"count", fr.count},
                  {"score_threshold", fr.score_threshold},
                  {"radius_threshold", fr.radius_threshold},
                  {"score_quantile", score_q},
                  {"radius_quantile", radius_q}}},
                {"provenance", prov}};
      write_json(summary, s);
    }
    os << "certified " << rec.size() << " rows; " << fr.count << " fragile\n";
  }
};

struct BaselineCmd {
  std::string method;
  std::string data;
  std::string out;
  std::string config_file;
  std::uint64_t seed = 0;
  ColumnFlags cols;

  void add(CLI::App* app) {
    app->add_option("--method", method, "dea, fdh, sfa or rf")->required()->check(CLI::IsMember({"dea", "fdh", "sfa", "rf"}));
    app->add_option("--data", data, "Input CSV")->required();
    app->add_option("--out", out, "Per-DMU scores CSV")->required();
    app->add_option("--config", config_file, "JSON with \"sfa\" and \"forest\" option objects");
    app->add_option("--seed", seed, "Random seed (sfa restarts, forest bagging)");
    cols.add(app);
  }

  void run(std::ostream& os) {
    BenchmarkConfig bc;
    if (!config_file.empty()) {
      json j = read_json_file(config_file);
      json sub = json::object();
      for (const auto& [k, v] : j.items()) {
        if (k != "sfa" && k != "forest") throw Error(ErrorCode::InvalidArgument, "unknown baseline config key '" + k + "'");
        sub[k] = v;
      }
      bc = BenchmarkConfig::from_json(sub, bc);
    }
    bc.sfa.seed = seed;
    bc.forest.seed = seed;
    const Schema schema = cols.resolve();
    require_roles(schema);
    const DatasetFrame frame = load_csv(data, schema);
    std::vector<std::string> header{"row", "efficiency"};
    std::vector<std::vector<double>> c(2);
    for (std::size_t i = 0; i < frame.n_rows(); ++i) c[0].push_back(static_cast<double>(frame.row_ids()[i]));
    json extra = json::object();
    if (method == "dea" || method == "fdh") {
      c[1] = method == "dea" ? dea_vrs_output(frame) : fdh_output(frame);
    } else if (method == "sfa") {
      const SfaModel m = sfa_translog_fit(frame, bc.sfa);
      header.insert(header.end(), {"expected_u", "residual"});
      c.resize(4);
      for (const auto& s : sfa_efficiency(m, frame)) {
        c[1].push_back(s.efficiency);
        c[2].push_back(s.expected_u);
        c[3].push_back(s.residual);
      }
      extra = {{"beta", std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size())},
               {"sigma_u", m.sigma_u},
               {"sigma_v", m.sigma_v},
               {"log_likelihood", m.log_likelihood},
               {"converged", m.converged}};
    } else {
      const ForestModel m = forest_fit(frame, bc.forest);
      header.insert(header.end(), {"u_hat", "residual"});
      c.resize(4);
      for (const auto& s : forest_efficiency(m, frame)) {
        c[1].push_back(s.efficiency);
        c[2].push_back(s.u_hat);
        c[3].push_back(s.residual);
      }
      extra = {{"shift", m.shift}, {"tree_seeds", m.tree_seeds}};
    }
    write_csv(out, header, c);
    json cfg = bc.to_json();
    json prov = provenance("baseline", {{"method", method}, {"seed", seed}, {"sfa", cfg["sfa"]}, {"forest", cfg["forest"]}});
    prov["data"] = data;
    prov["roles"] = schema_json(schema);
    prov["fit"] = extra;
    write_sidecar(out, prov);
    os << method << " scored " << frame.n_rows() << " rows\n";
  }
};

struct BenchmarkCmd {
  std::string scenario;
  int n = 500;
  int reps = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::vector<std::string> methods;
  std::string config_file;
  std::string out;
  std::string table;
  std::string scale_col;
  QuotientFlags quotient;
  CLI::Option* scenario_opt = nullptr;
  CLI::Option* n_opt = nullptr;
  CLI::Option* reps_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* methods_opt = nullptr;
  int epochs = 0;
  CLI::Option* epochs_opt = nullptr;

  void add(CLI::App* app) {
    scenario_opt = app->add_option("--scenario", scenario, "a, b or c");
    n_opt = app->add_option("--n", n, "DMUs per replication");
    reps_opt = app->add_option("--reps", reps, "Monte Carlo replications");
    seed_opt = app->add_option("--seed", seed, "Master seed");
    methods_opt = app->add_option("--methods", methods, "Subset of gema,dea,fdh,sfa,rf")->delimiter(',');
    epochs_opt = app->add_option("--epochs", epochs, "GeMA training epochs");
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--config", config_file, "Benchmark config JSON");
    app->add_option("--out", out, "Result JSON")->required();
    app->add_option("--table", table, "Text table");
    app->add_option("--scale-col", scale_col, "Scale column (scenario c uses s)");
    quotient.add(app);
  }

  void run(std::ostream& os) {
    BenchmarkConfig c;
    if (!config_file.empty()) c = BenchmarkConfig::from_json(read_json_file(config_file), c);
    json flags = json::object();
    if (scenario_opt->count()) flags["scenario"] = scenario;
    if (n_opt->count()) flags["n"] = n;
    if (reps_opt->count()) flags["n_reps"] = reps;
    if (seed_opt->count()) flags["master_seed"] = seed;
    if (methods_opt->count()) flags["methods"] = methods;
    if (epochs_opt->count()) flags["gema"] = {{"epochs", epochs}};
    c = BenchmarkConfig::from_json(flags, c);
    c.jobs = jobs;
    if (quotient.on && scale_col.empty()) throw UsageError("--quotient needs --scale-col");
    if (quotient.on && c.scenario != Scenario::C) throw UsageError("--quotient benchmarking applies to scenario c");
    if (!scale_col.empty() && scale_col != "s") throw UsageError("scenario c data carries its scale in column s");
    const BenchmarkResult r = run_benchmark(c);
    json j = r.to_json();
    j["provenance"] = provenance("benchmark", c.to_json());
    write_json(out, j);
    if (!table.empty()) write_text(table, r.to_text());
    os << r.to_text();
  }
};

// ----- report

struct CertRows {
  std::vector<double> score;
  std::vector<double> radius;
};

CertRows read_certification_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  auto fail = [&](const std::string& why) { return Error(ErrorCode::MalformedResultFile, path + ": " + why); };
  auto split_cells = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw fail("empty file");
  const auto header = split_cells(line);
  const std::vector<std::string> expected{"row", "score", "sigma_min", "L_bound", "R_cert", "fragile_flag"};
  if (header != expected) throw fail("header is not row,score,sigma_min,L_bound,R_cert,fragile_flag");
  CertRows r;
  std::size_t li = 1;
  while (std::getline(in, line)) {
    ++li;
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != expected.size()) throw fail("line " + std::to_string(li) + " has " + std::to_string(cells.size()) + " cells");
    double v[2];
    const std::size_t idx[2] = {1, 4};
    for (int k = 0; k < 2; ++k) {
      char* end = nullptr;
      v[k] = std::strtod(cells[idx[k]].c_str(), &end);
      if (cells[idx[k]].empty() || *end != '\0' || !std::isfinite(v[k])) throw fail("line " + std::to_string(li) + ": bad number");
    }
    r.score.push_back(v[0]);
    r.radius.push_back(v[1]);
  }
  if (r.score.empty()) throw fail("no rows");
  return r;
}

std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string scatter_svg(const CertRows& rows, const FragileResult& fr) {
  constexpr double width = 640, height = 480, left = 70, right = 20, top = 30, bottom = 60;
  auto range = [](const std::vector<double>& v) {
    double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    if (hi - lo <= 0.0) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return std::pair{lo - pad, hi + pad};
  };
  const auto [x0, x1] = range(rows.score);
  const auto [y0, y1] = range(rows.radius);
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (width - left - right); };
  auto py = [&](double y) { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
    << width << " " << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
    << height - bottom << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    s << "<text x=\"" << svg_number(px(xv)) << "\" y=\"" << height - bottom + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << svg_number(xv) << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << svg_number(py(yv) + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << svg_number(yv) << "</text>\n";
  }
  s << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 15
    << "\" font-size=\"13\" text-anchor=\"middle\">efficiency score</text>\n";
  s << "<text x=\"18\" y=\"" << (top + height - bottom) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (top + height - bottom) / 2 << ")\">certification radius</text>\n";
  s << "<g id=\"points\">\n";
  for (std::size_t i = 0; i < rows.score.size(); ++i) {
    s << "<circle cx=\"" << svg_number(px(rows.score[i])) << "\" cy=\"" << svg_number(py(rows.radius[i]))
      << "\" r=\"2.5\" fill=\"" << (fr.flags[i] ? "#c0392b" : "#2c6e9e") << "\" fill-opacity=\"0.7\"/>\n";
  }
  s << "</g>\n";
  s << "<line id=\"score-threshold\" x1=\"" << svg_number(px(fr.score_threshold)) << "\" y1=\"" << top << "\" x2=\""
    << svg_number(px(fr.score_threshold)) << "\" y2=\"" << height - bottom
    << "\" stroke=\"#555\" stroke-dasharray=\"6,4\"/>\n";
  s << "<line id=\"radius-threshold\" x1=\"" << left << "\" y1=\"" << svg_number(py(fr.radius_threshold)) << "\" x2=\""
    << width - right << "\" y2=\"" << svg_number(py(fr.radius_threshold))
    << "\" stroke=\"#555\" stroke-dasharray=\"6,4\"/>\n";
  s << "</svg>\n";
  return s.str();
}

struct ReportCmd {
  std::string benchmark;
  std::string certify;
  std::string text;
  std::string json_out;
  std::string svg;
  double score_q = 0.9;
  double radius_q = 0.25;

  void add(CLI::App* app) {
    app->add_option("--benchmark", benchmark, "Benchmark result JSON");
    app->add_option("--certify", certify, "Certification CSV");
    app->add_option("--text", text, "Text output (default: stdout)");
    app->add_option("--json", json_out, "Percentile JSON (certification input)");
    app->add_option("--svg", svg, "Score versus radius scatter (certification input)");
    app->add_option("--score-quantile", score_q, "Fragile region: score quantile")->check(CLI::Range(0.0, 1.0));
    app->add_option("--radius-quantile", radius_q, "Fragile region: radius quantile")->check(CLI::Range(0.0, 1.0));
  }

  void run(std::ostream& os) {
    if (benchmark.empty() == certify.empty()) throw UsageError("report needs exactly one of --benchmark or --certify");
    std::string body;
    json prov;
    if (!benchmark.empty()) {
      json j;
      try {
        j = read_json_file(benchmark);
      } catch (const Error& e) {
        throw Error(ErrorCode::MalformedResultFile, e.what());
      }
      body = BenchmarkResult::from_json(j).to_text();
    } else {
      const CertRows rows = read_certification_csv(certify);
      std::vector<CertificationRecord> rec(rows.radius.size());
      for (std::size_t i = 0; i < rec.size(); ++i) {
        rec[i].row = i;
        rec[i].r_cert = rows.radius[i];
      }
      const PercentileTable t = certification_percentiles(rec);
      const FragileResult fr = fragile_flags(rows.score, rows.radius, score_q, radius_q);
      body = t.to_text();
      prov = provenance("report", {{"certify", certify}, {"score_quantile", score_q}, {"radius_quantile", radius_q}});
      if (!json_out.empty()) {
        write_json(json_out, {{"percentiles", t.to_json()},
                              {"fragile",
                               {{"count", fr.count},
                                {"score_threshold", fr.score_threshold},
                                {"radius_threshold", fr.radius_threshold}}},
                              {"provenance", prov}});
      }
      if (!svg.empty()) {
        std::string doc = scatter_svg(rows, fr);
        const std::string meta = "<metadata>" + prov.dump() + "</metadata>\n";
        doc.insert(doc.find('\n') + 1, meta);
        write_text(svg, doc);
      }
    }
    if (text.empty()) {
      os << body;
    } else {
      write_text(text, body);
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generative frontier estimation, certification and benchmarking.\n" + std::string(kPrecedence), "gema"};
  app.require_subcommand(1);
  app.fallthrough(false);

  SynthCmd synth;
  TrainCmd train;
  ScoreCmd score;
  CertifyCmd certify;
  BaselineCmd baseline;
  BenchmarkCmd bench;
  ReportCmd report;
  synth.add(app.add_subcommand("synth", "Generate a synthetic scenario"));
  train.add(app.add_subcommand("train", "Fit the frontier model"));
  score.add(app.add_subcommand("score", "Efficiency scores and latent technology"));
  certify.add(app.add_subcommand("certify", "Certification radii and fragile flags"));
  baseline.add(app.add_subcommand("baseline", "DEA, FDH, SFA or random-forest scores"));
  bench.add(app.add_subcommand("benchmark", "Monte Carlo comparison on a scenario"));
  report.add(app.add_subcommand("report", "Render result files"));
  for (auto* sub : app.get_subcommands({})) sub->footer(kPrecedence);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (app.got_subcommand("synth")) synth.run(out);
    else if (app.got_subcommand("train")) train.run(out);
    else if (app.got_subcommand("score")) score.run(out);
    else if (app.got_subcommand("certify")) certify.run(out);
    else if (app.got_subcommand("baseline")) baseline.run(out);
    else if (app.got_subcommand("benchmark")) bench.run(out);
    else if (app.got_subcommand("report")) report.run(out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace gema::cli
