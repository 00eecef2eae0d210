// Acceptance gate: runs criteria 1-10 and prints one PASS/FAIL line for each.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "rsdh/cli.hpp"
#include "rsdh/metrics.hpp"
#include "rsdh/parallel.hpp"
#include "test_util.hpp"

using namespace rsdh;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

double field(const std::string& text, const std::string& key) {
  const auto at = text.find(key + "=");
  if (at == std::string::npos) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(text.substr(at + key.size() + 1));
}

ModelConfig tiny() {
  ModelConfig c;
  c.base_channels = 4;
  c.block_counts = {1, 1, 1};
  return c;
}

// ---------------------------------------------------------------------------

Outcome scan_equivalence() {
  const auto t0 = Clock::now();
  double worst_f = 0.0, worst_d = 0.0;
  for (std::size_t L : {1, 2, 3, 7, 64, 1024})
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ParamSet<float> ps;
      std::mt19937_64 rng(seed);
      ParamBuilder b(ps, rng);
      declare_ssm_params(b, 8, 16);
      const auto xf = rsdh::test::random_tensor<float>({2, L, 8}, rng);
      const auto inf = project_tokens(xf, SsmParams<float>::from(ps, ""));
      worst_f = std::max<double>(worst_f, max_abs_diff(selective_scan_par(inf), selective_scan_seq(inf)));
      const auto psd = ps.cast<double>();
      const auto ind = project_tokens(xf.cast<double>(), SsmParams<double>::from(psd, ""));
      worst_d = std::max(worst_d, max_abs_diff(selective_scan_par(ind), selective_scan_seq(ind)));
    }
  const double secs = seconds_since(t0);
  return {worst_f < 1e-5 && worst_d < 1e-12 && secs < 60.0,
          fmt("max|par-seq| float=%.3g (<1e-5) double=%.3g (<1e-12), 6 lengths x 20 seeds, N=16, %.1fs (<60s)", worst_f, worst_d, secs)};
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto r = cli({"gradcheck", "--c", "4", "--blocks", "1,1,1", "--size", "16"});
  const double secs = seconds_since(t0);
  const double err = field(r.out, "max_rel_error");
  return {r.code == 0 && err < 1e-3 && secs < 300.0,
          fmt("C=4 [1,1,1] 16x16 float64, %.0f elements (%.0f refined), max rel error %.3g (<1e-3), %.0fs (<300s)", field(r.out, "checked"),
              field(r.out, "refined"), err, secs)};
}

template <std::floating_point T>
bool merge_is_multiple(int n_dirs) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n_dirs));
  const T k = static_cast<T>(n_dirs);
  for (std::size_t H = 1; H <= 16; ++H)
    for (std::size_t W = 1; W <= 16; ++W) {
      const auto m = rsdh::test::random_tensor<T>({2, 3, H, W}, rng);
      Tensor<T> merged;
      if (n_dirs == 4) {
        merged = scan_merge(scan_expand(m));
      } else {
        std::vector<Var<T>> seqs;
        std::vector<Permutation> perms;
        for (Direction d : active_directions(n_dirs)) {
          perms.push_back(direction_permutation(d, H, W));
          seqs.push_back(expand_direction(Var<T>(m), perms.back()));
        }
        merged = merge_directions(seqs, perms, H, W).value();
      }
      for (std::size_t i = 0; i < m.numel(); ++i)
        if (merged[i] != k * m[i]) return false;
    }
  return true;
}

Outcome dsm_roundtrip() {
  const bool ok = merge_is_multiple<float>(4) && merge_is_multiple<double>(4);
  return {ok, fmt("scan_merge(scan_expand(P)) == 4P bit-exact for all H,W in [1,16] (float and double): %s", ok ? "yes" : "no")};
}

bool identity_when_output_zeroed(const ModelConfig& cfg, std::uint64_t seed) {
  auto model = build_model(cfg, seed);
  model.params.at("output.weight").fill(0.0f);
  model.params.at("output.bias").fill(0.0f);
  std::mt19937_64 rng(seed);
  for (auto [B, H, W] : {std::array<std::size_t, 3>{1, 4, 4}, {2, 8, 12}, {1, 16, 16}, {1, 64, 64}}) {
    const auto x = rsdh::test::random_tensor<float>({B, 3, H, W}, rng, 0.0, 1.0);
    if (!forward(model, x).bit_equal(x)) return false;
  }
  Tensor<float> extremes({1, 3, 8, 8});
  for (std::size_t i = 0; i < extremes.numel(); ++i) extremes[i] = (i % 3 == 0) ? 0.0f : (i % 3 == 1 ? 1.0f : -3.5e3f);
  return forward(model, extremes).bit_equal(extremes);
}

Outcome residual_identity() {
  const bool ok = identity_when_output_zeroed(ModelConfig{}, 1) && identity_when_output_zeroed(tiny(), 2);
  return {ok, fmt("zeroed output conv gives forward(x) == x bit-exact (default and tiny configs, 5 inputs each): %s", ok ? "yes" : "no")};
}

Outcome parameter_budget() {
  const std::size_t n = param_count(build_model(ModelConfig{}, 0));
  const std::size_t analytic = rsdh::test::analytic_model_count(30, 2, 3, 3, 16, 4, true, true);
  return {n >= 1'600'000 && n <= 2'000'000 && n == analytic,
          fmt("default param_count=%zu in [1.6e6, 2.0e6] (reference 1.80M), analytic formula=%zu", n, analytic)};
}

Outcome toy_overfit() {
  const auto t0 = Clock::now();
  ModelConfig mc;
  mc.base_channels = 8;
  mc.block_counts = {1, 1, 1};
  TrainConfig tc;
  tc.total_steps = 500;
  tc.batch = 4;
  tc.patch = 64;
  tc.seed = 7;
  const auto data = make_synthetic_pairs(8, 64, 64, 7);
  auto state = fresh_state(mc, 7);

  auto measure = [&](double& l1, double& psnr_out, double& psnr_in) {
    l1 = psnr_out = psnr_in = 0.0;
    for (const auto& p : data) {
      const auto y = batch_item(forward(state.model, as_batch(p.hazy)), 0);
      l1 += l1_loss(y, p.clear) / 8.0;
      psnr_out += psnr(y, p.clear) / 8.0;
      psnr_in += psnr(p.hazy, p.clear) / 8.0;
    }
  };
  double l1_0, psnr_0, hazy;
  measure(l1_0, psnr_0, hazy);
  train_loop(state, data, tc);
  double l1_1, psnr_1, hazy_1;
  measure(l1_1, psnr_1, hazy_1);
  const double secs = seconds_since(t0);
  const double ratio = l1_1 / l1_0, gain = psnr_1 - hazy;
  return {ratio <= 0.2 && gain >= 3.0 && secs < 1800.0,
          fmt("8 pairs 64x64, C=8 [1,1,1], 500 steps: L1 %.4f -> %.4f (ratio %.3f <= 0.2), PSNR hazy %.2f dB -> dehazed %.2f dB "
              "(gain %.2f >= 3), %.0fs (<1800s)",
              l1_0, l1_1, ratio, hazy, psnr_1, gain, secs)};
}

Outcome ablations() {
  struct Variant {
    const char* name;
    std::function<void(ModelConfig&)> apply;
    std::vector<std::string> flags;
  };
  const std::vector<Variant> variants = {
      {"V1 no-FFN", [](ModelConfig& c) { c.use_ffn = false; }, {"--ffn", "false"}},
      {"V2 no-DConv", [](ModelConfig& c) { c.use_dconv = false; }, {"--dconv", "false"}},
      {"V3 no-SiLU", [](ModelConfig& c) { c.use_silu = false; }, {"--silu", "false"}},
      {"V4 sum-merge", [](ModelConfig& c) { c.use_hadamard = false; }, {"--hadamard", "false"}},
      {"1-path", [](ModelConfig& c) { c.n_dirs = 1; }, {"--n_dirs", "1"}},
      {"2-path", [](ModelConfig& c) { c.n_dirs = 2; }, {"--n_dirs", "2"}},
      {"4-path", [](ModelConfig& c) { c.n_dirs = 4; }, {"--n_dirs", "4"}},
  };
  bool all = true;
  std::string detail;
  for (const auto& v : variants) {
    ModelConfig cfg = tiny();
    v.apply(cfg);
    ModelConfig full;
    v.apply(full);
    std::mt19937_64 rng(3);
    const auto y = forward(build_model(full, 3), rsdh::test::random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0));
    const bool runs = y.shape() == Shape{1, 3, 32, 32} && all_finite(y);
    std::vector<std::string> args = {"gradcheck", "--c", "4", "--blocks", "1,1,1", "--size", "16", "--gc_samples", "4"};
    args.insert(args.end(), v.flags.begin(), v.flags.end());
    const auto gc = cli(args);
    const double err = field(gc.out, "max_rel_error");
    const bool grad_ok = gc.code == 0 && err < 1e-3;
    const bool dsm_ok = merge_is_multiple<float>(cfg.n_dirs);
    const bool id_ok = identity_when_output_zeroed(cfg, 4);
    const bool ok = runs && grad_ok && dsm_ok && id_ok;
    all = all && ok;
    detail += fmt("%s%s[fwd %s, grad %.2g, dsm %s, id %s]", detail.empty() ? "" : "; ", v.name, runs ? "ok" : "BAD", err,
                  dsm_ok ? "ok" : "BAD", id_ok ? "ok" : "BAD");
  }
  return {all, detail};
}

Outcome schedule_endpoints() {
  TrainConfig cfg;
  bool ok = true;
  for (std::uint64_t total : {1000, 500, 300000}) {
    cfg.total_steps = total;
    ok = ok && cosine_lr(0, cfg) == 2e-4 && cosine_lr(total, cfg) == 1e-6;
  }
  cfg.total_steps = 1000;
  return {ok, fmt("cosine_lr(0)=%.17g cosine_lr(total)=%.17g (exact equality for totals 1000, 500, 300000)", cosine_lr(0, cfg),
                  cosine_lr(1000, cfg))};
}

Outcome persistence() {
  const auto dir = rsdh::test::scratch_dir("acceptance_persist");
  const auto data = make_synthetic_pairs(4, 16, 16, 5);
  TrainConfig cfg;
  cfg.total_steps = 6;
  cfg.batch = 2;
  cfg.patch = 16;
  cfg.seed = 9;

  auto full = fresh_state(tiny(), 9);
  train_loop(full, data, cfg);

  auto first = fresh_state(tiny(), 9);
  auto with_ckpt = cfg;
  with_ckpt.checkpoint_dir = dir;
  with_ckpt.checkpoint_interval = 3;
  train_loop(first, data, with_ckpt);
  auto resumed = load_checkpoint(dir / "step_3.rsdh");
  train_loop(resumed, data, cfg);
  const bool resume_ok = to_archive(resumed).to_bytes() == to_archive(full).to_bytes() && resumed.optim.step == 6;

  save_checkpoint(dir / "a.rsdh", full);
  save_checkpoint(dir / "b.rsdh", load_checkpoint(dir / "a.rsdh"));
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const auto a = bytes(dir / "a.rsdh");
  const bool roundtrip_ok = !a.empty() && a == bytes(dir / "b.rsdh");
  return {resume_ok && roundtrip_ok, fmt("save->load->save byte-identical (%zu bytes): %s; resume from step 3 of 6 equals uninterrupted run: %s",
                                         a.size(), roundtrip_ok ? "yes" : "no", resume_ok ? "yes" : "no")};
}

Outcome scaling_sanity() {
  const auto r = cli({"benchscan", "--len", "256,512,1024,2048", "--repeats", "5"});
  if (r.code != 0) return {false, "benchscan failed: " + r.err};
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    rows.emplace_back(std::stod(cols[0]), std::stod(cols[3]));
  }
  if (rows.size() != 4) return {false, "unexpected benchscan output"};
  bool ok = true;
  std::string detail = "seq_ms:";
  for (const auto& [L, ms] : rows) {
    const double factor = (ms / rows[0].second) / (L / rows[0].first);
    ok = ok && factor <= 1.3;
    detail += fmt(" L=%.0f %.3fms (x%.2f of linear)", L, ms, factor);
  }
  return {ok, detail + " (each <= 1.3)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, scan_equivalence}, {2, gradient_fidelity}, {3, dsm_roundtrip}, {4, residual_identity}, {5, parameter_budget},
      {6, toy_overfit},      {7, ablations},         {8, schedule_endpoints}, {9, persistence}, {10, scaling_sanity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  configure_threads_from_env();
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
