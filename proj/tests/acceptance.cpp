// Acceptance suite: runs every release criterion end to end on the shipped
// seed and prints one pass/fail line per criterion. Exit code is the number
// of failed criteria.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "grad_battery.hpp"
#include "pipeline/pipeline.hpp"

using namespace tcaq;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void note(const std::string& what, bool pass, const std::string& detail) {
  std::printf("[%s] fixture: %s (%s)\n", pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

Tensor stack_timestep(const CalibrationSet& set, int t) {
  std::vector<const Tensor*> rows;
  for (const auto& s : set.samples)
    if (s.t == t) rows.push_back(&s.x_t);
  Shape shape = rows[0]->shape();
  const int64_t per = numel(shape);
  shape[0] = static_cast<int>(rows.size());
  std::vector<float> data(static_cast<size_t>(per) * rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i]->data().data(), per, &data[i * static_cast<size_t>(per)]);
  return Tensor(std::move(shape), std::move(data));
}

// sampling-based oracles for criterion 5
std::vector<float> power_law_samples(double alpha, double x_min, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(static_cast<size_t>(n));
  for (auto& v : out) {
    const double u = 1.0 - static_cast<double>(rng.uniform());
    v = static_cast<float>(x_min * std::pow(u, -1.0 / (alpha - 1.0)));
  }
  return out;
}

std::vector<float> truncated_normal_samples(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out;
  out.reserve(static_cast<size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    const float v = 0.5f + 0.15f * rng.normal();
    if (v > 0.0f) out.push_back(v);
  }
  return out;
}

std::vector<float> uniform_samples(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(static_cast<size_t>(n));
  for (auto& v : out) v = rng.uniform(1e-4f, 1.0f);
  return out;
}

double arm_fmd(const ToyUNet& model, const QuantContext* qc, const RunConfig& cfg,
               const NoiseSchedule& sched, const Tensor& dataset_images) {
  Tensor samples = sample(model, cfg.eval_samples, cfg.inference_steps, cfg.seed + 2, sched, qc);
  return fmd(samples, dataset_images);
}

}  // namespace

int main() {
  const auto t_all = std::chrono::steady_clock::now();
  RunConfig cfg;  // shipped defaults: seed 7, W4A4 S8
  cfg.out_dir = "/tmp/tcaq_acceptance";
  std::filesystem::remove_all(cfg.out_dir);
  std::filesystem::create_directories(cfg.out_dir);
  const NoiseSchedule sched = schedule_from(cfg);

  // ---- fixture: trained model -------------------------------------------
  std::printf("== acceptance fixture: training the toy model (seed %llu) ==\n",
              static_cast<unsigned long long>(cfg.seed));
  std::fflush(stdout);
  ToyDataset dataset = generate_dataset(cfg.seed, cfg.dataset_size);
  ToyUNet model(unet_config_from(cfg), cfg.seed);
  const char* cached = std::getenv("TCAQ_ACCEPT_MODEL");
  TrainStats tstats;
  if (cached && std::filesystem::exists(cached)) {
    ModelBundle b = load_bundle(cached);
    for (const auto& name : b.model->param_names())
      model.mutable_param(name).raw_data() = b.model->param(name).data();
    tstats.initial_avg = 1.0f;
    tstats.final_avg = 0.0f;
    std::printf("  (loaded cached model from %s)\n", cached);
  } else {
    TrainConfig tc;
    tc.steps = cfg.train_steps;
    tc.lr = cfg.train_lr;
    tc.batch = cfg.train_batch;
    tc.seed = cfg.seed;
    tstats = train_toy(model, dataset, sched, tc);
    note("training loss halves",
         tstats.final_avg < 0.5f * tstats.initial_avg,
         fmt("%.4f -> %.4f", tstats.initial_avg, tstats.final_avg));
  }

  ToyDataset fresh = generate_dataset(cfg.seed + 1, 2048);
  const double fmd_fp = arm_fmd(model, nullptr, cfg, sched, fresh.images);
  {
    Rng nr(123);
    Tensor noise({512, 1, 8, 8}, 0.0f);
    for (auto& v : noise.raw_data()) v = nr.normal();
    const double fmd_noise = fmd(noise, fresh.images);
    note("FP sample quality beats noise by 10x", fmd_noise / fmd_fp >= 10.0,
         fmt("fp %.3f vs noise %.3f, ratio %.1f", fmd_fp, fmd_noise, fmd_noise / fmd_fp));
  }

  CalibrationSet calib =
      sample_calibration_fp(model, cfg.calib_chains, cfg.inference_steps, cfg.seed, sched);
  {
    double best = 0.0;
    std::string where;
    for (const auto& li : model.layers()) {
      if (!li.quantizable() || li.kind != LayerKind::kConv) continue;
      ChannelStats st = collect_channel_maxima(calib, model, li.id);
      float hi = 0.0f, lo = 1e30f;
      for (int d = 0; d < st.channels; ++d) {
        float m = 0.0f;
        for (const auto& row : st.maxima) m = std::max(m, row[static_cast<size_t>(d)]);
        hi = std::max(hi, m);
        lo = std::min(lo, m);
      }
      const double ratio = hi / std::max(lo, 1e-8f);
      if (ratio > best) {
        best = ratio;
        where = li.id;
      }
    }
    note("per-channel maxima fluctuate >= 4x in some conv layer", best >= 4.0,
         fmt("%.1fx at %s", best, where.c_str()));
  }

  // ---- criterion 1: reparameterization exactness -------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed, 0x61);
    double worst = 0.0;
    for (const auto& li : model.layers()) {
      if (!li.quantizable()) continue;
      ChannelStats st = collect_channel_maxima(calib, model, li.id);
      ScalingVector sv = compute_scaling_vector(st);
      QuantContext qc;
      qc.quantize_acts = false;
      apply_reparam(model, qc, sv);
      const Tensor& w_orig = model.param(li.id + ".weight");
      const Tensor& w_re = qc.weights.at(li.id + ".weight");
      const Tensor& b = model.param(li.id + ".bias");
      const Tensor& recip = qc.input_recip.at(li.id);
      for (int trial = 0; trial < 100; ++trial) {
        Tensor x = li.kind == LayerKind::kConv
                       ? Tensor::randn({1, li.in_channels, 8, 8}, rng)
                       : (li.id.find("temb") != std::string::npos
                              ? Tensor::randn({2, li.in_channels}, rng)
                              : Tensor::randn({1, li.in_channels, 64}, rng));
        Tensor ref = li.kind == LayerKind::kConv ? conv2d(x, w_orig, b) : linear(x, w_orig, b);
        Tensor got = li.kind == LayerKind::kConv ? conv2d(mul(x, recip), w_re, b)
                                                 : linear(mul(x, recip), w_re, b);
        float scale_den = 1e-12f, diff = 0.0f;
        for (int64_t i = 0; i < ref.size(); ++i) {
          scale_den = std::max(scale_den, std::abs(ref.at(i)));
          diff = std::max(diff, std::abs(got.at(i) - ref.at(i)));
        }
        worst = std::max(worst, static_cast<double>(diff / scale_den));
      }
    }
    report(1, "reparameterization exactness", worst < 1e-5,
           fmt("max scale-relative deviation %.2e, %.0fs", worst, elapsed(t0)));
  }

  // ---- criterion 2: range balancing ---------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (const auto& li : model.layers()) {
      if (!li.quantizable()) continue;
      ChannelStats st = collect_channel_maxima(calib, model, li.id);
      ScalingVector sv = compute_scaling_vector(st);
      const double pre = mean_channel_spread(st);
      const double post = mean_channel_spread(reparamed_stats(st, sv));
      const bool layer_ok = post <= pre + 1e-9 && (pre <= 1.01 || post < pre);
      if (!layer_ok && ok) {
        ok = false;
        detail = fmt("first violation at %s: pre %.3f post %.3f", li.id.c_str(), pre, post);
      }
    }
    report(2, "range balancing", ok,
           ok ? fmt("all layers tightened, %.0fs", elapsed(t0)) : detail);
  }

  // ---- criterion 3: gradient integrity ------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op;
    for (const auto& c : gradtest::build_battery()) {
      for (uint64_t inst = 0; inst < 20; ++inst) {
        const double e = c.worst_error(1000 + inst * 17);
        if (e > worst) {
          worst = e;
          worst_op = c.name;
        }
      }
    }
    report(3, "gradient integrity", worst < 1e-3,
           fmt("max rel err %.2e (%s), %.0fs", worst, worst_op.c_str(), elapsed(t0)));
  }

  // ---- criterion 4: quantizer bounds --------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed, 0x62);
    QuantParams uq;
    uq.kind = QuantKind::kUniform;
    uq.bits = 8;
    uq.scale = {0.013f};
    uq.zero_point = {117};
    const float lo = 0.013f * (0 - 117), hi = 0.013f * (255 - 117);
    bool uniform_ok = true;
    for (int i = 0; i < 1000000; ++i) {
      const float x = rng.uniform(lo, hi);
      const float y = fake_quant(Tensor::scalar(x), uq).item();
      if (std::abs(y - x) > 0.013f / 2 + 1e-6f) {
        uniform_ok = false;
        break;
      }
    }
    QuantParams lq;
    lq.kind = QuantKind::kLog2;
    lq.bits = 4;
    lq.scale = {1.0f};
    lq.zero_point = {0};
    bool log2_ok = true;
    for (int i = 0; i < 200000; ++i) {
      const float e = rng.uniform(0.0f, static_cast<float>(lq.qmax()));
      const float x = std::pow(2.0f, -e);
      const float y = fake_quant(Tensor::scalar(x), lq).item();
      if (std::abs(y - x) / x > 0.415f) {
        log2_ok = false;
        break;
      }
    }
    bool argmax_ok = true;
    for (int trial = 0; trial < 10000 && argmax_ok; ++trial) {
      std::vector<float> logits(16);
      for (auto& v : logits) v = rng.uniform(-4.0f, 4.0f);
      Tensor row = softmax(Tensor({1, 16}, logits));
      int arg = 0;
      for (int i = 1; i < 16; ++i)
        if (row.at(i) > row.at(arg)) arg = i;
      for (auto kind : {QuantKind::kUniform, QuantKind::kLog2}) {
        QuantParams qp = search_params_minmax(row, 4, kind, Granularity::kPerTensor);
        Tensor fq = fake_quant(row, qp);
        float mx = fq.at(0);
        for (int i = 1; i < 16; ++i) mx = std::max(mx, fq.at(i));
        if (fq.at(arg) != mx) argmax_ok = false;
      }
    }
    report(4, "quantizer bounds", uniform_ok && log2_ok && argmax_ok,
           fmt("uniform %s, log2 %s, argmax %s, %.0fs", uniform_ok ? "ok" : "FAIL",
               log2_ok ? "ok" : "FAIL", argmax_ok ? "ok" : "FAIL", elapsed(t0)));
  }

  // ---- criterion 5: power-law machinery ------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    int alpha_hits = 0, pl_pos = 0, tn_neg = 0, un_neg = 0;
    for (int k = 0; k < 100; ++k) {
      {
        auto s = power_law_samples(2.5, 0.01, 10000, 9000 + static_cast<uint64_t>(k));
        PowerLawFit fit = fit_power_law(s);
        if (std::abs(fit.alpha - 2.5) <= 0.1) ++alpha_hits;
        std::vector<double> alts = {fit_alternative(s, AltFamily::kExponential, fit.x_min),
                                    fit_alternative(s, AltFamily::kLogNormal, fit.x_min)};
        if (likelihood_ratio(fit, alts) > 0.0) ++pl_pos;
      }
      {
        auto s = truncated_normal_samples(10000, 9600 + static_cast<uint64_t>(k));
        PowerLawFit fit = fit_power_law(s);
        std::vector<double> alts = {fit_alternative(s, AltFamily::kExponential, fit.x_min),
                                    fit_alternative(s, AltFamily::kLogNormal, fit.x_min)};
        if (likelihood_ratio(fit, alts) < 0.0) ++tn_neg;
      }
      {
        auto s = uniform_samples(10000, 9900 + static_cast<uint64_t>(k));
        PowerLawFit fit = fit_power_law(s);
        std::vector<double> alts = {fit_alternative(s, AltFamily::kExponential, fit.x_min),
                                    fit_alternative(s, AltFamily::kLogNormal, fit.x_min)};
        if (likelihood_ratio(fit, alts) < 0.0) ++un_neg;
      }
    }
    const bool ok = alpha_hits >= 95 && pl_pos >= 95 && tn_neg >= 95 && un_neg >= 95;
    report(5, "power-law machinery", ok,
           fmt("alpha %d/100, R_g>0 on pl %d/100, R_g<0 on tnorm %d/100, on uniform %d/100, "
               "%.0fs",
               alpha_hits, pl_pos, tn_neg, un_neg, elapsed(t0)));
  }

  // ---- criterion 9: adaround efficacy (also feeds 10 and 11) --------------
  RunConfig w4a8 = cfg;
  w4a8.bits_w = 4;
  w4a8.bits_a = 8;
  w4a8.bits_s = 8;
  w4a8.par_rounds = 0;
  QuantizeArtifacts art_w4a8 = quantize_model(model, w4a8);
  {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = !art_w4a8.recon_logs.empty();
    std::string detail;
    if (ok) {
      for (const auto& b : art_w4a8.recon_logs[0].blocks) {
        detail += fmt("%s %.2f%% ", b.stage.c_str(), 100.0 * b.final_mse / b.rtn_mse);
        if (!(b.final_mse <= 0.8 * b.rtn_mse)) ok = false;
      }
    }
    report(9, "adaround efficacy (final <= 0.8x RTN per block)", ok,
           detail + fmt("%.0fs", elapsed(t0)));
  }

  // ---- criterion 11: DAQ overhead ------------------------------------------
  {
    const double cal_s = art_w4a8.timings.at("calibration_s");
    const double daq_s = art_w4a8.timings.at("daq_s");
    report(11, "DAQ overhead <= 5% of calibration sampling", daq_s <= 0.05 * cal_s,
           fmt("daq %.3fs vs calibration %.3fs (%.1f%%)", daq_s, cal_s, 100.0 * daq_s / cal_s));
  }

  // ---- criterion 10: clamp trend -------------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    const double fmd_clamp5 = arm_fmd(model, &art_w4a8.qc, w4a8, sched, fresh.images);
    RunConfig wide = w4a8;
    wide.tcr_clamp = 100.0f;
    QuantizeArtifacts art_wide = quantize_model(model, wide);
    const double fmd_clamp100 = arm_fmd(model, &art_wide.qc, wide, sched, fresh.images);
    report(10, "clamp trend at W4A8 (fmd clamp5 <= clamp100)", fmd_clamp5 <= fmd_clamp100,
           fmt("clamp5 %.4f vs clamp100 %.4f, %.0fs", fmd_clamp5, fmd_clamp100, elapsed(t0)));
  }

  // ---- criterion 6: DAQ dominance at S4 ------------------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig s4 = cfg;
    s4.bits_w = 6;
    s4.bits_a = 6;
    s4.bits_s = 4;
    s4.par_rounds = 0;
    s4.recon_init_iters = 400;
    s4.recon_par_iters = 400;
    double fmd_by_mode[3] = {0, 0, 0};
    const char* modes[3] = {"uniform", "log2", "auto"};
    for (int m = 0; m < 3; ++m) {
      RunConfig arm = s4;
      arm.daq_force = modes[m];
      QuantizeArtifacts art = quantize_model(model, arm);
      fmd_by_mode[m] = arm_fmd(model, &art.qc, arm, sched, fresh.images);
    }
    const double best_single = std::min(fmd_by_mode[0], fmd_by_mode[1]);
    const bool ok = fmd_by_mode[2] <= best_single + 0.05 * fmd_fp;
    report(6, "DAQ dominance at S4", ok,
           fmt("uniform %.4f, log2 %.4f, daq %.4f (slack %.4f), %.0fs", fmd_by_mode[0],
               fmd_by_mode[1], fmd_by_mode[2], 0.05 * fmd_fp, elapsed(t0)));
  }

  // ---- criteria 7 and 8: W4A4 ablation + PAR alignment ---------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    auto arm = [&](bool tcr, bool daq, int rounds) {
      RunConfig a = cfg;  // W4A4 S8 defaults
      a.tcr_enabled = tcr;
      a.daq_enabled = daq;
      a.daq_force = daq ? "auto" : "uniform";
      a.par_rounds = rounds;
      return quantize_model(model, a);
    };
    QuantizeArtifacts base = arm(false, false, 0);
    const double fmd_base = arm_fmd(model, &base.qc, cfg, sched, fresh.images);
    QuantizeArtifacts tcr_arm = arm(true, false, 0);
    const double fmd_tcr = arm_fmd(model, &tcr_arm.qc, cfg, sched, fresh.images);
    QuantizeArtifacts td_arm = arm(true, true, 0);  // this is also m_q0 for criterion 8
    const double fmd_td = arm_fmd(model, &td_arm.qc, cfg, sched, fresh.images);
    QuantizeArtifacts full_arm = arm(true, true, cfg.par_rounds);
    const double fmd_full = arm_fmd(model, &full_arm.qc, cfg, sched, fresh.images);

    const double gap1 = fmd_base - fmd_tcr;
    const double gap2 = fmd_tcr - fmd_full;
    const bool ordered = fmd_base > fmd_tcr && fmd_tcr >= fmd_td && fmd_td >= fmd_full;
    const bool collapse = gap1 >= 2.0 * gap2;
    report(7, "ablation monotonicity at W4A4", ordered && collapse,
           fmt("base %.3f > +tcr %.3f >= +daq %.3f >= full %.3f; gaps %.3f vs %.3f, %.0fs",
               fmd_base, fmd_tcr, fmd_td, fmd_full, gap1, gap2, elapsed(t0)));

    // criterion 8: round-1 resampled calibration aligns better with the
    // final model's inference marginals than FP-sampled calibration
    const auto t8 = std::chrono::steady_clock::now();
    CalibrationSet round1 =
        resample_calibration_quant(model, td_arm.qc, cfg.calib_chains, cfg.inference_steps,
                                   cfg.seed + 0x7a11 + 1, 1, sched, CaptureOptions{false, false});
    CalibrationSet fp_cal = sample_calibration_fp(model, cfg.calib_chains, cfg.inference_steps,
                                                  cfg.seed, sched, CaptureOptions{false, false});
    CalibrationSet final_run =
        resample_calibration_quant(model, full_arm.qc, 64, cfg.inference_steps, cfg.seed + 500,
                                   99, sched, CaptureOptions{false, false});
    bool aligned_everywhere = true;
    std::string detail;
    for (int t : final_run.timesteps) {
      if (t == final_run.timesteps.front()) continue;  // x_T is pure noise on every path
      Tensor ref = stack_timestep(final_run, t);
      const double d_round1 = diagonal_moment_distance(stack_timestep(round1, t), ref);
      const double d_fp = diagonal_moment_distance(stack_timestep(fp_cal, t), ref);
      if (d_round1 > d_fp) {
        aligned_everywhere = false;
        detail += fmt("t=%d: %.4f > %.4f; ", t, d_round1, d_fp);
      }
    }
    report(8, "PAR alignment per timestep at W4A4", aligned_everywhere,
           aligned_everywhere ? fmt("aligned at every timestep, %.0fs", elapsed(t8)) : detail);
  }

  // ---- criterion 12: byte-identical ablation reruns -------------------------
  {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig tiny = cfg;
    tiny.out_dir = cfg.out_dir + "/ablate";
    tiny.dataset_size = 96;
    tiny.train_steps = 30;
    tiny.train_batch = 8;
    tiny.inference_steps = 5;
    tiny.calib_chains = 3;
    tiny.eval_samples = 66;
    tiny.recon_init_iters = 4;
    tiny.recon_par_iters = 2;
    tiny.recon_batch = 2;
    tiny.par_rounds = 1;
    const std::string fp_path = cmd_train(tiny);
    auto read_file = [](const std::string& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
    };
    cmd_ablate(tiny, fp_path);
    const std::string first = read_file(tiny.out_dir + "/ablation.csv");
    cmd_ablate(tiny, fp_path);
    const std::string second = read_file(tiny.out_dir + "/ablation.csv");
    report(12, "byte-identical ablation CSV across reruns", !first.empty() && first == second,
           fmt("%zu bytes, %.0fs", first.size(), elapsed(t0)));
  }

  std::printf("== acceptance finished: %d failure(s), %.0fs total ==\n", g_failures,
              elapsed(t_all));
  return g_failures;
}
