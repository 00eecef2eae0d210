#include "rsdh/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "rsdh/gradcheck.hpp"
#include "rsdh/image_io.hpp"
#include "rsdh/metrics.hpp"
#include "rsdh/parallel.hpp"
#include "rsdh/ssm.hpp"

namespace rsdh {

namespace fs = std::filesystem;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "seed for initialization, data synthesis and batch sampling"},
      {"c", "30", "base channel count C"},
      {"blocks", "2,3,3", "blocks per level N1,N2,N3"},
      {"state_dim", "16", "SSM state size N"},
      {"n_dirs", "4", "scan directions per block (1, 2 or 4)"},
      {"dconv", "true", "depth-wise conv in the SSM branch"},
      {"silu", "true", "SiLU activations in the SSM branches"},
      {"hadamard", "true", "multiply the two SSM branches (false: add them)"},
      {"ffn", "true", "feed-forward stage in each block"},
      {"ffn_expand", "2", "FFN hidden width multiplier"},
      {"scan", "seq", "scan algorithm: seq or par"},
      {"steps", "1000", "total training steps"},
      {"batch", "4", "patches per step"},
      {"patch", "64", "patch size (multiple of 4)"},
      {"lr_init", "2e-4", "initial learning rate"},
      {"lr_min", "1e-6", "final learning rate"},
      {"beta1", "0.9", "Adam beta1"},
      {"beta2", "0.999", "Adam beta2"},
      {"eps", "1e-8", "Adam epsilon"},
      {"checkpoint_interval", "0", "steps between periodic checkpoints (0: final only)"},
      {"log_every", "50", "print progress every this many steps (0: quiet)"},
      {"pairs", "8", "synthetic training pairs when no dataset is given"},
      {"size", "64", "synthetic image size / gradcheck input size"},
      {"haze_strength", "0.7", "synthetic haze thickness in [0,1]"},
      {"holdout", "4", "held-out synthetic pairs evaluated after training"},
      {"data", "", "dataset root with input/ and gt/ PNG folders"},
      {"out", "run", "output directory"},
      {"resume", "", "checkpoint to resume training from"},
      {"checkpoint", "", "model checkpoint"},
      {"input", "", "input PNG"},
      {"output", "", "output PNG"},
      {"gt", "", "ground-truth PNG"},
      {"csv", "", "per-image metrics CSV"},
      {"tol", "1e-3", "gradcheck pass threshold on max relative error"},
      {"gc_samples", "0", "gradcheck elements per tensor (0: all)"},
      {"gc_step", "1e-3", "central-difference step for gradcheck"},
      {"len", "256,512,1024,2048", "benchscan sequence lengths"},
      {"dim", "64", "benchscan channel count"},
      {"repeats", "5", "benchscan repetitions (fastest is reported)"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return n;
}

ScanAlgorithm to_scan(const std::string& v) {
  if (v == "seq" || v == "sequential") return ScanAlgorithm::Sequential;
  if (v == "par" || v == "parallel") return ScanAlgorithm::Parallel;
  throw ConfigError("'scan' expects seq or par, got '" + v + "'");
}

}  // namespace

Settings::Settings() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

bool Settings::is_set_explicitly(const std::string& key) const { return explicit_.count(key) != 0; }

std::uint64_t Settings::get_u64(const std::string& key) const { return to_u64(key, get(key)); }

double Settings::get_double(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(d)) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return d;
}

bool Settings::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + get(key) + "'");
}

ModelConfig Settings::model_config() const {
  ModelConfig m;
  m.base_channels = get_u64("c");
  const auto blocks = split_list(get("blocks"));
  if (blocks.size() != 3) throw ConfigError("'blocks' expects three comma-separated counts, got '" + get("blocks") + "'");
  for (std::size_t i = 0; i < 3; ++i) m.block_counts[i] = to_u64("blocks", blocks[i]);
  m.state_dim = get_u64("state_dim");
  m.n_dirs = static_cast<int>(get_u64("n_dirs"));
  m.use_dconv = get_bool("dconv");
  m.use_silu = get_bool("silu");
  m.use_hadamard = get_bool("hadamard");
  m.use_ffn = get_bool("ffn");
  m.ffn_expand = get_double("ffn_expand");
  m.scan = to_scan(get("scan"));
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return m;
}

TrainConfig Settings::train_config() const {
  TrainConfig t;
  t.lr_init = get_double("lr_init");
  t.lr_min = get_double("lr_min");
  t.total_steps = get_u64("steps");
  t.batch = get_u64("batch");
  t.patch = get_u64("patch");
  t.beta1 = get_double("beta1");
  t.beta2 = get_double("beta2");
  t.eps = get_double("eps");
  t.seed = get_u64("seed");
  t.checkpoint_interval = get_u64("checkpoint_interval");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

HazeOptions Settings::haze_options() const {
  HazeOptions h;
  h.strength = get_double("haze_strength");
  if (!(h.strength >= 0.0 && h.strength <= 1.0)) throw ConfigError("'haze_strength' must be in [0,1]");
  return h;
}

std::map<std::string, std::string> parse_config(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> values;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (!find_key(key)) throw ConfigError(where + "unknown key '" + key + "'");
    values[key] = value;
  }
  return values;
}

std::map<std::string, std::string> parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(in, path.string());
}

namespace {

struct Context {
  Settings settings;
  std::ostream& out;
  std::ostream& err;
};

std::vector<ImagePair> training_data(const Settings& s) {
  if (!s.get("data").empty()) return load_dataset(s.get("data"));
  const std::size_t size = s.get_u64("size");
  return make_synthetic_pairs(s.get_u64("pairs"), size, size, s.get_u64("seed"), s.haze_options());
}

struct PairMetrics {
  MetricReport dehazed;
  MetricReport hazy;
};

MetricReport mean_of(const std::vector<MetricReport>& rs) {
  MetricReport m;
  for (const auto& r : rs) {
    m.psnr_db += r.psnr_db;
    m.ssim += r.ssim;
    m.l1 += r.l1;
  }
  const double n = static_cast<double>(rs.size());
  return {m.psnr_db / n, m.ssim / n, m.l1 / n};
}

PairMetrics evaluate_pairs(const Model<float>& model, const std::vector<ImagePair>& pairs, const std::string& csv) {
  std::vector<MetricReport> dehazed, hazy;
  std::ofstream table;
  if (!csv.empty()) {
    table.open(csv);
    if (!table) throw ConfigError("cannot write '" + csv + "'");
    table << "name,psnr_db,ssim,l1,input_psnr_db,input_ssim,input_l1\n";
  }
  for (const auto& p : pairs) {
    const Tensor<float> y = batch_item(forward(model, as_batch(p.hazy)), 0);
    dehazed.push_back(evaluate_metrics(y, p.clear));
    hazy.push_back(evaluate_metrics(p.hazy, p.clear));
    if (table) {
      const auto& d = dehazed.back();
      const auto& h = hazy.back();
      table << p.name << ',' << d.psnr_db << ',' << d.ssim << ',' << d.l1 << ',' << h.psnr_db << ',' << h.ssim << ',' << h.l1 << '\n';
    }
  }
  return {mean_of(dehazed), mean_of(hazy)};
}

Model<float> load_model(const Settings& s) {
  if (s.get("checkpoint").empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(s.get("checkpoint"))) throw ConfigError("checkpoint '" + s.get("checkpoint") + "' does not exist");
  return load_checkpoint(s.get("checkpoint")).model;
}

int cmd_train(Context& ctx) {
  const Settings& s = ctx.settings;
  const ModelConfig mc = s.model_config();
  TrainConfig tc = s.train_config();
  const fs::path out_dir = s.get("out");
  tc.checkpoint_dir = out_dir / "checkpoints";
  tc.log_path = out_dir / "train_log.csv";
  const auto data = training_data(s);

  TrainState state;
  if (!s.get("resume").empty()) {
    if (!fs::exists(s.get("resume"))) throw ConfigError("resume checkpoint '" + s.get("resume") + "' does not exist");
    state = load_checkpoint(s.get("resume"));
    if (!(state.model.config == mc)) ctx.err << "note: using the model configuration stored in the checkpoint\n";
    ctx.out << "resuming at step " << state.optim.step << "\n";
  } else {
    state = fresh_state(mc, s.get_u64("seed"));
    fs::create_directories(out_dir);
    std::ofstream(tc.log_path, std::ios::trunc);
  }
  ctx.out << "model parameters: " << param_count(state.model) << "\n";

  const std::uint64_t every = s.get_u64("log_every");
  train_loop(state, data, tc, [&](const StepRecord& r) {
    if (every > 0 && (r.step % every == 0 || r.step == tc.total_steps)) {
      ctx.out << "step " << r.step << "/" << tc.total_steps << " lr=" << r.lr << " loss=" << r.loss << " t=" << std::fixed
              << std::setprecision(1) << r.wallclock << "s" << std::defaultfloat << std::setprecision(6) << "\n";
    }
  });

  const std::size_t holdout = s.get_u64("holdout");
  if (holdout > 0) {
    const std::size_t size = s.get("data").empty() ? s.get_u64("size") : data.front().clear.dim(1);
    const auto pairs = make_synthetic_pairs(holdout, size, size, derive_seed(s.get_u64("seed"), 0x401d), s.haze_options());
    const PairMetrics m = evaluate_pairs(state.model, pairs, "");
    const std::string dehazed = format_report(m.dehazed), hazy = format_report(m.hazy);
    ctx.out << "holdout dehazed: " << dehazed << "\nholdout input:   " << hazy << "\n";
    std::ofstream(out_dir / "holdout_metrics.txt") << "dehazed " << dehazed << "\ninput " << hazy << "\n";
  }
  ctx.out << "final checkpoint: " << (tc.checkpoint_dir / "final.rsdh").string() << "\n";
  return 0;
}

int cmd_infer(Context& ctx) {
  const Settings& s = ctx.settings;
  if (s.get("input").empty() || s.get("output").empty()) throw ConfigError("--input and --output are required");
  const Model<float> model = load_model(s);
  const Tensor<float> image = read_png(s.get("input"));
  const Tensor<float> batch = as_batch(image);
  validate_input_shape(batch.shape());
  const Tensor<float> result = batch_item(forward(model, batch), 0);
  write_png(s.get("output"), result);
  if (!s.get("gt").empty()) {
    const Tensor<float> gt = read_png(s.get("gt"));
    const Tensor<float> written = read_png(s.get("output"));
    ctx.out << "output: " << format_report(evaluate_metrics(written, gt)) << "\n";
    ctx.out << "input:  " << format_report(evaluate_metrics(image, gt)) << "\n";
  }
  return 0;
}

int cmd_eval(Context& ctx) {
  const Settings& s = ctx.settings;
  const Model<float> model = load_model(s);
  const auto pairs = training_data(s);
  const PairMetrics m = evaluate_pairs(model, pairs, s.get("csv"));
  ctx.out << "pairs: " << pairs.size() << "\n";
  ctx.out << "dehazed: " << format_report(m.dehazed) << "\n";
  ctx.out << "input:   " << format_report(m.hazy) << "\n";
  return 0;
}

int cmd_params(Context& ctx) {
  const ModelConfig mc = ctx.settings.model_config();
  ctx.out << param_count(build_model(mc, 0)) << "\n";
  return 0;
}

int cmd_gradcheck(Context& ctx) {
  const Settings& s = ctx.settings;
  const ModelConfig mc = s.model_config();
  const std::uint64_t seed = s.get_u64("seed");
  const std::size_t size = s.get_u64("size");
  const ParamSet<double> params = build_model(mc, seed).params.cast<double>();

  std::mt19937_64 rng(derive_seed(seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor<double> input({1, 3, size, size});
  for (auto& v : input.data()) v = unit(rng);
  validate_input_shape(input.shape());
  // Targets sit at least 0.5 away from the initial prediction so that no
  // finite-difference probe crosses a kink of the L1 loss.
  const Tensor<double> pred0 = forward(Model<double>{mc, params}, input);
  Tensor<double> target(pred0.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = pred0[i] + (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * unit(rng));

  GradCheckOptions opts;
  opts.max_per_tensor = s.get_u64("gc_samples");
  opts.step = s.get_double("gc_step");
  opts.refine_step = opts.step;
  if (!(opts.step > 0.0)) throw ConfigError("'gc_step' must be positive");
  opts.seed = seed;
  opts.refine_above = s.get_double("tol") / 10.0;
  const auto loss = [&](const BoundParams<double>& p) {
    return l1_loss(forward(ParamScope<double>(p), mc, Var<double>(input)), Var<double>(target));
  };
  const auto start = std::chrono::steady_clock::now();
  const GradCheckReport r = grad_check(loss, params, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double tol = s.get_double("tol");
  ctx.out << "checked=" << r.checked << " refined=" << r.refined << " max_rel_error=" << r.max_rel_error << " worst=" << r.worst_param << "[" << r.worst_index
          << "] analytic=" << r.worst_analytic << " numeric=" << r.worst_numeric << " seconds=" << secs << "\n";
  const bool ok = r.max_rel_error < tol;
  ctx.out << (ok ? "PASS" : "FAIL") << " (tolerance " << tol << ")\n";
  return ok ? 0 : 2;
}

int cmd_benchscan(Context& ctx) {
  const Settings& s = ctx.settings;
  std::vector<std::size_t> lengths;
  for (const auto& item : split_list(s.get("len"))) {
    const std::size_t L = to_u64("len", item);
    if (L == 0) throw ConfigError("'len' entries must be positive");
    lengths.push_back(L);
  }
  const std::size_t D = s.get_u64("dim"), N = s.get_u64("state_dim");
  const std::size_t repeats = std::max<std::uint64_t>(1, s.get_u64("repeats"));
  if (D == 0 || N == 0) throw ConfigError("'dim' and 'state_dim' must be positive");
  ctx.out << "len,dim,state,seq_ms,par_ms,max_abs_dev\n";
  for (std::size_t L : lengths) {
    std::mt19937_64 rng(derive_seed(s.get_u64("seed"), L));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::uniform_real_distribution<float> dt(1e-3f, 1e-1f);
    ScanInputs<float> in{Tensor<float>({1, L, D}), Tensor<float>({1, L, D}), Tensor<float>({D, N}),
                         Tensor<float>({1, L, N}), Tensor<float>({1, L, N}), Tensor<float>({D})};
    for (auto& v : in.x.data()) v = normal(rng);
    for (auto& v : in.delta.data()) v = dt(rng);
    for (std::size_t i = 0; i < in.a.numel(); ++i) in.a[i] = -static_cast<float>(i % N + 1);
    for (auto& v : in.b.data()) v = normal(rng);
    for (auto& v : in.c.data()) v = normal(rng);
    for (auto& v : in.d.data()) v = 1.0f;
    auto time_ms = [&](auto&& fn, Tensor<float>& result) {
      double best = 1e300;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        result = fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      return best;
    };
    Tensor<float> ys, yp;
    const double seq_ms = time_ms([&] { return selective_scan_seq(in); }, ys);
    const double par_ms = time_ms([&] { return selective_scan_par(in); }, yp);
    ctx.out << L << ',' << D << ',' << N << ',' << seq_ms << ',' << par_ms << ',' << max_abs_diff(ys, yp) << "\n";
  }
  return 0;
}

int cmd_synth(Context& ctx) {
  const Settings& s = ctx.settings;
  const std::size_t size = s.get_u64("size");
  const auto pairs = make_synthetic_pairs(s.get_u64("pairs"), size, size, s.get_u64("seed"), s.haze_options());
  write_dataset(s.get("out"), pairs);
  ctx.out << "wrote " << pairs.size() << " pairs to " << s.get("out") << "\n";
  return 0;
}

struct Command {
  const char* name;
  const char* help;
  std::vector<std::string> keys;
  std::map<std::string, std::string> defaults;
  int (*run)(Context&);
};

const std::vector<std::string> kModelKeys = {"c", "blocks", "state_dim", "n_dirs", "dconv", "silu", "hadamard", "ffn", "ffn_expand", "scan"};

std::vector<std::string> with_model_keys(std::vector<std::string> keys) {
  keys.insert(keys.begin(), kModelKeys.begin(), kModelKeys.end());
  return keys;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"train", "train on a dataset directory or synthetic pairs",
       with_model_keys({"seed", "steps", "batch", "patch", "lr_init", "lr_min", "beta1", "beta2", "eps", "checkpoint_interval", "log_every",
                        "pairs", "size", "haze_strength", "holdout", "data", "out", "resume"}),
       {},
       cmd_train},
      {"infer", "dehaze one PNG", {"checkpoint", "input", "output", "gt"}, {}, cmd_infer},
      {"eval", "report PSNR/SSIM/L1 of a checkpoint on a dataset or synthetic pairs",
       {"checkpoint", "data", "pairs", "size", "seed", "haze_strength", "csv"},
       {},
       cmd_eval},
      {"gradcheck", "compare autodiff gradients with finite differences (64-bit)",
       with_model_keys({"seed", "size", "tol", "gc_samples", "gc_step"}),
       {{"c", "4"}, {"blocks", "1,1,1"}, {"size", "16"}},
       cmd_gradcheck},
      {"params", "print the parameter count", with_model_keys({}), {}, cmd_params},
      {"benchscan", "time sequential vs parallel scans (CSV)", {"len", "dim", "state_dim", "repeats", "seed"}, {}, cmd_benchscan},
      {"synth", "write a synthetic dataset directory", {"out", "pairs", "size", "seed", "haze_strength"}, {{"out", "synthetic"}}, cmd_synth},
  };
  return cmds;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rsdh: remote-sensing image dehazing with direction-aware state space blocks"};
  app.name("rsdh");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");

  std::map<std::string, std::string> flags;
  std::string config_path;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "key = value config file; flags override it");
    for (const auto& key : cmd.keys) {
      const ConfigKey* spec = find_key(key);
      std::string help = spec->help;
      const auto d = cmd.defaults.find(key);
      const std::string def = d != cmd.defaults.end() ? d->second : spec->default_value;
      if (!def.empty()) help += " [" + def + "]";
      sub->add_option_function<std::string>("--" + key, [&flags, key](const std::string& v) { flags[key] = v; }, help)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    subs[cmd.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    configure_threads_from_env();
    for (const auto& cmd : commands()) {
      if (!subs[cmd.name]->parsed()) continue;
      Context ctx{Settings(), out, err};
      for (const auto& [k, v] : cmd.defaults) ctx.settings.set(k, v);
      if (!config_path.empty()) {
        for (const auto& [k, v] : parse_config_file(config_path)) ctx.settings.set(k, v);
      }
      for (const auto& [k, v] : flags) ctx.settings.set(k, v);
      return cmd.run(ctx);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("rsdh");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace rsdh
