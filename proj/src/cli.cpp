#include "equicaps/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "equicaps/io.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/routing.hpp"
#include "equicaps/training.hpp"
#include "equicaps/verifier.hpp"
#include "json.hpp"

namespace equicaps {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kDefaultSeed = 7;

std::string normalize_key(std::string key) {
  for (char& ch : key) {
    if (ch == '-') ch = '_';
  }
  return key;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed",         "trials",        "tolerance",       "out",          "group",
      "iterations",   "no_align",      "quarter_turns_only", "classes",   "epochs",
      "snapshot",     "samples",       "dataset",         "learning_rate", "batch_size",
      "holdout_samples", "margin_start", "margin_end"};
  return keys;
}

// Merged view of config-file values and command-line flags.
class Settings {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string text(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("--" + key + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || !std::isfinite(v)) {
      throw ConfigError("--" + key + ": expected a number, got '" + s + "'");
    }
    return v;
  }

  bool flag(const std::string& key) const {
    if (!has(key)) return false;
    const std::string& s = values_.at(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("--" + key + ": expected true or false, got '" + s + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

// Registers string-valued options on a subcommand; values are merged with the
// config file after parsing.
struct FlagSet {
  std::map<std::string, std::string> given_values;
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, bool> given_flags;
  std::string config_path;

  void option(CLI::App* app, const std::string& name, const std::string& help) {
    const std::string key = normalize_key(name);
    options[key] = app->add_option("--" + name, given_values[key], help);
  }
  void flag(CLI::App* app, const std::string& name, const std::string& help) {
    app->add_flag("--" + name, given_flags[normalize_key(name)], help);
  }

  Settings resolve() const {
    Settings s;
    if (!config_path.empty()) {
      for (const auto& [k, v] : parse_config_text(read_file(config_path))) s.set(k, v);
    }
    for (const auto& [k, v] : given_values) {
      if (options.at(k)->count() > 0) s.set(k, v);
    }
    for (const auto& [k, v] : given_flags) {
      if (v) s.set(k, "true");
    }
    if (!s.has("seed")) {
      if (const char* env = std::getenv("EQUICAPS_SEED"); env != nullptr && *env != '\0') s.set("seed", env);
    }
    return s;
  }
};

// Creates the directory if needed and checks that files can be written there.
fs::path prepare_out_dir(const std::string& dir) {
  const fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("output directory '" + dir + "' cannot be created");
  const fs::path probe = p / ".equicaps-write-probe";
  {
    std::FILE* f = std::fopen(probe.c_str(), "wb");
    if (f == nullptr) throw IoError("output directory '" + dir + "' is not writable");
    std::fclose(f);
  }
  fs::remove(probe, ec);
  return p;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string describe(const GroupElement& g) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(3);
  if (g.is_rot2()) {
    o << g.rot2().angle() * 180.0 / std::numbers::pi << "deg";
  } else if (g.is_trans()) {
    o << '(';
    for (std::size_t i = 0; i < g.trans().dim(); ++i) o << (i ? ", " : "") << g.trans()[i];
    o << ')';
  } else {
    for (std::size_t i = 0; i < g.parts().size(); ++i) o << (i ? " x " : "") << describe(g.parts()[i]);
  }
  return o.str();
}

GroupElement random_group_element(const GroupDesc& d, Rng& rng) {
  switch (d.kind) {
    case GroupDesc::Kind::kSO2: return GroupElement(rng.rotation());
    case GroupDesc::Kind::kTrans: {
      std::vector<double> v(d.dim);
      for (double& x : v) x = rng.normal();
      return GroupElement(TransN(std::move(v)));
    }
    case GroupDesc::Kind::kProduct: {
      GroupElement::Product parts;
      for (const auto& p : d.parts) parts.push_back(random_group_element(p, rng));
      return GroupElement(std::move(parts));
    }
  }
  return GroupElement();
}

GroupDesc parse_group_flag(const std::string& name) {
  if (name != "so2" && name != "so2xr2") throw ConfigError("--group: expected so2 or so2xr2, got '" + name + "'");
  return GroupDesc::parse(name);
}

void print_config(std::ostream& out, const Json& cfg) { out << "config " << cfg.dump() << "\n"; }

// ---------------------------------------------------------------- verify

int cmd_verify(const Settings& s, const std::string& target, std::ostream& out) {
  const std::uint64_t seed = s.u64("seed", kDefaultSeed);
  const bool trials_given = s.has("trials");
  const std::size_t trials = s.u64("trials", 0);
  if (trials_given && trials == 0) throw ConfigError("--trials must be at least 1");
  const bool tol_given = s.has("tolerance");
  const double tol = s.real("tolerance", 0.0);
  if (tol_given && !(tol >= 0.0)) throw ConfigError("--tolerance must be non-negative");
  const int iterations = static_cast<int>(s.u64("iterations", 3));
  const bool no_align = s.flag("no_align");
  const std::string out_dir = s.text("out", "equicaps-out");
  std::vector<GroupDesc> groups;
  if (s.has("group")) {
    groups.push_back(parse_group_flag(s.text("group", "so2")));
  } else {
    groups = {GroupDesc::so2(), GroupDesc::parse("so2xr2")};
  }

  auto n = [&](std::size_t fallback) { return trials_given ? trials : fallback; };
  auto t = [&](double fallback) { return tol_given ? tol : fallback; };

  Json cfg;
  cfg["command"] = "verify";
  cfg["target"] = target;
  cfg["seed"] = seed;
  cfg["trials"] = trials_given ? Json(trials) : Json("default");
  cfg["tolerance"] = tol_given ? Json(tol) : Json("default");
  cfg["iterations"] = iterations;
  cfg["no_align"] = no_align;
  cfg["groups"] = Json::array();
  for (const auto& g : groups) cfg["groups"].push_back(g.name());
  cfg["out"] = out_dir;
  print_config(out, cfg);
  const fs::path dir = prepare_out_dir(out_dir);

  std::vector<EquivarianceReport> reports;
  const bool all = target == "all";
  if (all || target == "routing") {
    for (const auto& g : groups) {
      reports.push_back(verify_routing(seed, n(1000), t(1e-9), g, false, iterations));
      reports.push_back(verify_routing(seed, n(1000), t(1e-9), g, true, iterations));
    }
  }
  if (all || target == "aggregation") {
    if (!no_align) reports.push_back(verify_aggregation(seed, n(500), t(1e-9), {true, false, true}));
    reports.push_back(verify_aggregation(seed, n(500), t(1e-9), {false, false, true}));
    if (!no_align) reports.push_back(verify_aggregation(seed, n(500), t(1e-9), {false, true, true}));
  }
  if (all || target == "groupconv") reports.push_back(verify_groupconv(seed, n(200), t(1e-9)));
  if (all || target == "network") reports.push_back(verify_network(seed, n(50), 20, t(1e-4)));

  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.as_expected();
    out << (r.as_expected() ? "ok    " : "FAILED") << ' ' << r.theorem << (r.expected_fail ? " (negative control)" : "")
        << " trials=" << r.trials << " pose_dev=" << r.max_pose_dev << " act_dev=" << r.max_act_dev
        << " feature_dev=" << r.max_feature_dev << " shift_dev=" << r.max_shift_dev << " tol=" << r.tolerance
        << " passed=" << (r.passed ? "true" : "false") << "\n";
  }
  write_file_atomic(dir / "verify_report.json", reports_to_json(reports));
  out << "report " << (dir / "verify_report.json").string() << "\n";
  return ok ? exit_code::kOk : exit_code::kCheckFailed;
}

// ---------------------------------------------------------------- train

NetworkConfig training_config(const Settings& s) {
  const std::size_t classes = s.u64("classes", 4);
  if (classes < 2 || classes > kGlyphShapes) {
    throw ConfigError("--classes must be in [2, " + std::to_string(kGlyphShapes) + "]");
  }
  NetworkConfig cfg = NetworkConfig::with_classes(classes);
  cfg.seed = s.u64("seed", kDefaultSeed);
  cfg.epochs = static_cast<int>(s.u64("epochs", static_cast<std::uint64_t>(cfg.epochs)));
  cfg.train_samples = s.u64("samples", cfg.train_samples);
  cfg.holdout_samples = s.u64("holdout_samples", cfg.holdout_samples);
  cfg.batch_size = s.u64("batch_size", cfg.batch_size);
  cfg.learning_rate = s.real("learning_rate", cfg.learning_rate);
  cfg.margin_start = s.real("margin_start", cfg.margin_start);
  cfg.margin_end = s.real("margin_end", cfg.margin_end);
  if (cfg.train_samples == 0) throw ConfigError("--samples must be at least 1");
  if (cfg.holdout_samples == 0) throw ConfigError("holdout_samples must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  cfg.validate();
  return cfg;
}

int cmd_train(const Settings& s, std::ostream& out) {
  const NetworkConfig cfg = training_config(s);
  const std::string out_dir = s.text("out", "equicaps-out");
  Json shown = Json::parse(config_to_json(cfg));
  Json header;
  header["command"] = "train";
  header["out"] = out_dir;
  header["network"] = shown;
  print_config(out, header);
  const fs::path dir = prepare_out_dir(out_dir);

  const ToyDatasets data = make_toy_datasets(cfg);
  std::string csv = "epoch,loss,holdout_accuracy\n";
  const TrainResult res = train_toy(cfg, data.train, data.holdout, [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << " loss " << fmt_double(m.loss) << " holdout_accuracy "
        << fmt_double(m.holdout_accuracy) << "\n";
    out.flush();
  });
  for (const auto& m : res.metrics) {
    csv += std::to_string(m.epoch) + "," + fmt_double(m.loss) + "," + fmt_double(m.holdout_accuracy) + "\n";
  }
  save_snapshot(dir / "snapshot.bin", res.state);
  write_file_atomic(dir / "metrics.csv", csv);
  out << "snapshot " << (dir / "snapshot.bin").string() << "\n";
  out << "metrics " << (dir / "metrics.csv").string() << "\n";
  return exit_code::kOk;
}

// ---------------------------------------------------------------- eval-pose

// "path,label" per line, paths relative to the manifest.
std::vector<GlyphSample> load_manifest(const fs::path& manifest) {
  std::istringstream in(read_file(manifest));
  std::vector<GlyphSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw ConfigError(manifest.string() + ":" + std::to_string(lineno) + ": expected 'path,label'");
    }
    GlyphSample s;
    fs::path img = trim(line.substr(0, comma));
    if (img.is_relative()) img = manifest.parent_path() / img;
    s.image = load_image(img);
    Settings tmp;
    tmp.set("label", trim(line.substr(comma + 1)));
    s.label = tmp.u64("label", 0);
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_eval_pose(const Settings& s, std::ostream& out) {
  if (!s.has("snapshot")) throw ConfigError("--snapshot is required");
  const std::string snap = s.text("snapshot", "");
  PoseErrorOptions opt;
  opt.seed = s.u64("seed", kDefaultSeed);
  opt.rotations = s.flag("quarter_turns_only") ? RotationSampling::kQuarterTurns : RotationSampling::kUniform;
  const std::string out_dir = s.text("out", "equicaps-out");

  Json cfg;
  cfg["command"] = "eval-pose";
  cfg["snapshot"] = snap;
  cfg["seed"] = opt.seed;
  cfg["quarter_turns_only"] = opt.rotations == RotationSampling::kQuarterTurns;
  cfg["dataset"] = s.has("dataset") ? Json(s.text("dataset", "")) : Json("holdout");
  cfg["samples"] = s.has("samples") ? Json(s.u64("samples", 0)) : Json("all");
  cfg["out"] = out_dir;
  print_config(out, cfg);

  if (!fs::is_regular_file(snap)) throw IoError("snapshot '" + snap + "' does not exist");
  const TrainState state = load_snapshot(snap);
  std::vector<GlyphSample> samples =
      s.has("dataset") ? load_manifest(s.text("dataset", "")) : make_toy_datasets(state.config).holdout;
  if (s.has("samples")) samples.resize(std::min<std::size_t>(samples.size(), s.u64("samples", 0)));
  if (samples.empty()) throw ConfigError("eval-pose: the dataset is empty");
  for (const auto& smp : samples) {
    if (smp.label >= state.config.classes) throw ConfigError("eval-pose: label outside the snapshot's classes");
  }
  const fs::path dir = prepare_out_dir(out_dir);

  const PoseErrorReport capsule = pose_error_eval(state, samples, PoseMode::kCapsule, opt);
  const PoseErrorReport naive = pose_error_eval(state, samples, PoseMode::kNaive, opt);
  write_file_atomic(dir / "pose_hist_capsule.csv", histogram_csv(capsule));
  write_file_atomic(dir / "pose_hist_naive.csv", histogram_csv(naive));
  write_file_atomic(dir / "pose_summary.json", pose_summary_json(capsule, naive, opt));
  out << "capsule mean error " << fmt_double(capsule.mean_error_degrees) << " deg\n";
  out << "naive mean error " << fmt_double(naive.mean_error_degrees) << " deg\n";
  out << "summary " << (dir / "pose_summary.json").string() << "\n";
  return exit_code::kOk;
}

// ---------------------------------------------------------------- demo-route

int cmd_demo_route(const Settings& s, std::ostream& out) {
  const std::uint64_t seed = s.u64("seed", kDefaultSeed);
  const GroupDesc group = parse_group_flag(s.text("group", "so2"));
  RoutingConfig rc;
  rc.iterations = static_cast<int>(s.u64("iterations", 2));
  Json cfg;
  cfg["command"] = "demo-route";
  cfg["seed"] = seed;
  cfg["group"] = group.name();
  cfg["iterations"] = rc.iterations;
  print_config(out, cfg);

  Rng rng(seed);
  const std::size_t n = 5;
  const std::size_t m = 2;
  CapsuleInput<GroupElement> in;
  for (std::size_t i = 0; i < n; ++i) {
    in.poses.push_back(random_group_element(group, rng));
    in.activations.push_back(rng.uniform(0.2, 1.0));
  }
  TransformSet<GroupElement> t(n, m, GroupElement::identity(group));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) t.at(i, j) = random_group_element(group, rng);
  }
  RoutingTrace<GroupElement> trace;
  const CapsuleOutput<GroupElement> res = route(in, t, rc, GroupDistance{}, &trace);

  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(4);
  o << "inputs\n";
  for (std::size_t i = 0; i < n; ++i) o << "  p" << i << " = " << describe(in.poses[i]) << "  a = " << in.activations[i] << "\n";
  o << "votes\n";
  for (std::size_t i = 0; i < n; ++i) {
    o << "  i=" << i;
    for (std::size_t j = 0; j < m; ++j) o << "  v[" << j << "] = " << describe(trace.votes.at(i, j));
    o << "\n";
  }
  for (std::size_t step = 0; step < trace.poses.size(); ++step) {
    o << (step == 0 ? "initial estimate" : "iteration " + std::to_string(step)) << "\n";
    for (std::size_t j = 0; j < m; ++j) {
      o << "  j=" << j << "  pose = " << describe(trace.poses[step][j]) << "  weights =";
      for (std::size_t i = 0; i < n; ++i) o << ' ' << trace.weights[step][i * m + j];
      o << "\n";
    }
  }
  o << "outputs\n";
  for (std::size_t j = 0; j < m; ++j) o << "  j=" << j << "  pose = " << describe(res.poses[j]) << "  agreement = " << res.activations[j] << "\n";
  out << o.str();
  return exit_code::kOk;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!known_keys().count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-equivariant capsule toolkit"};
  app.require_subcommand(1);

  FlagSet verify_flags, train_flags, eval_flags, demo_flags;
  std::string target = "all";

  CLI::App* verify = app.add_subcommand("verify", "Run the randomized equivariance suites");
  verify->add_option("target", target, "routing, aggregation, groupconv, network or all")
      ->check(CLI::IsMember({"routing", "aggregation", "groupconv", "network", "all"}));
  for (const char* o : {"seed", "trials", "tolerance", "out", "group", "iterations"}) verify_flags.option(verify, o, "");
  verify_flags.flag(verify, "no-align", "Check only the unaligned aggregation variant");
  verify->add_option("--config", verify_flags.config_path, "key = value config file");

  CLI::App* train = app.add_subcommand("train", "Train the toy network on synthetic glyphs");
  for (const char* o : {"seed", "out", "classes", "epochs", "samples"}) train_flags.option(train, o, "");
  train->add_option("--config", train_flags.config_path, "key = value config file");

  CLI::App* eval = app.add_subcommand("eval-pose", "Pose error of capsule and naive averaging");
  for (const char* o : {"seed", "out", "snapshot", "samples", "dataset"}) eval_flags.option(eval, o, "");
  eval_flags.flag(eval, "quarter-turns-only", "Rotate by multiples of a quarter turn only");
  eval->add_option("--config", eval_flags.config_path, "key = value config file");

  CLI::App* demo = app.add_subcommand("demo-route", "Print one routing-by-agreement trace");
  for (const char* o : {"seed", "group", "iterations"}) demo_flags.option(demo, o, "");
  demo->add_option("--config", demo_flags.config_path, "key = value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kPrecondition;
  }

  try {
    if (verify->parsed()) return cmd_verify(verify_flags.resolve(), target, out);
    if (train->parsed()) return cmd_train(train_flags.resolve(), out);
    if (eval->parsed()) return cmd_eval_pose(eval_flags.resolve(), out);
    if (demo->parsed()) return cmd_demo_route(demo_flags.resolve(), out);
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kNonFinite;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kPrecondition;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kPrecondition;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kPrecondition;
  }
  return exit_code::kPrecondition;
}

}  // namespace equicaps
