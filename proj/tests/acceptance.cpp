// End-to-end acceptance checks, one PASS/FAIL line per criterion.
// Usage: acceptance WORK_DIR

#include "avedit/adaptation.hpp"
#include "avedit/commands.hpp"
#include "avedit/diffusion.hpp"
#include "avedit/metrics.hpp"
#include "avedit/synth.hpp"

#include "gradcheck.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <utility>

using namespace avedit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : "; ") + s;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

constexpr int kHeldOut = 2;  // bells
constexpr int kSeeds = 5;

// Shared by the training, fidelity, enhancement and reproducibility checks.
struct Study {
  JointModel base;
  std::vector<TrainingPair> pairs;
  std::vector<AdaptedCheckpoint> before, after;
};

std::unique_ptr<Study> g_study;

Study& study() {
  if (g_study) return *g_study;
  g_study = std::make_unique<Study>();
  Study& s = *g_study;
  const auto t0 = std::chrono::steady_clock::now();
  s.base = JointModel(ModelConfig::defaults(1));
  std::vector<TrainingPair> corpus;
  for (int c = 0; c < static_cast<int>(sound_classes().size()); ++c) {
    if (c == kHeldOut) continue;
    for (int i = 0; i < 3; ++i) corpus.push_back(testing::synth_pair(c, static_cast<std::uint64_t>(100 + i * 7 + c)));
  }
  PretrainConfig pc;
  pc.seed = 3;
  pretrain(s.base, corpus, pc);
  const auto t1 = std::chrono::steady_clock::now();
  std::printf("  base model: %d pretraining steps on %zu pairs in %.0f s\n", pc.steps, corpus.size(),
              std::chrono::duration<double>(t1 - t0).count());
  for (int k = 0; k < kSeeds; ++k) {
    AdaptationConfig ac;
    ac.seed = static_cast<std::uint64_t>(k);
    s.pairs.push_back(testing::synth_pair(kHeldOut, static_cast<std::uint64_t>(9000 + k)));
    s.before.push_back(initial_checkpoint(s.base, s.pairs.back(), ac));
    s.after.push_back(adapt(s.base, s.pairs.back(), ac));
  }
  std::printf("  adapted %d seeds in %.0f s\n", kSeeds,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count());
  std::fflush(stdout);
  return s;
}

// ---------------------------------------------------------------------------

Outcome schedule_and_forward() {
  Outcome o;
  const NoiseSchedule s = default_schedule();
  const double oracle = 4.035829765375683314817635161554144e-5;  // mpmath, 40 digits
  const double rel = std::abs(s.alpha_bar(1000) / oracle - 1.0);
  o.require(rel <= 1e-12, fmt("alpha_bar(T) relative error %.2e", rel));
  bool exact = s.alpha_bar(1) == s.alpha(1);
  for (int t = 2; t <= s.steps(); ++t) exact = exact && s.alpha_bar(t) == s.alpha_bar(t - 1) * s.alpha(t);
  o.require(exact, "alpha_bar recurrence not exact");
  const int trials = 10000;
  Rng rng(11);
  double worst = 0.0;
  for (int target : {1, 500, 1000}) {
    MatrixXd x = MatrixXd::Zero(1, trials);
    for (int t = 1; t <= target; ++t) x = q_step(x, t, rng.normal_matrix<double>(1, trials), s);
    const double want = 1.0 - s.alpha_bar(target);
    const double z = std::abs(x.squaredNorm() / trials - want) / (want * std::sqrt(2.0 / trials));
    worst = std::max(worst, z);
  }
  o.require(worst <= 3.0, fmt("chained variance off by %.2f SE", worst));
  o.note(fmt("alpha_bar(T) rel err %.1e, chained variance within %.2f SE", rel, worst));
  return o;
}

Outcome sampler_identities() {
  Outcome o;
  const NoiseSchedule s = default_schedule();
  Rng rng(7);
  double rt = 0.0, ddim = 0.0;
  for (int t : {1, 10, 250, 500, 999, 1000}) {
    const MatrixXd x0 = rng.normal_matrix<double>(4, 64), e = rng.normal_matrix<double>(4, 64);
    rt = std::max(rt, (predict_x0(q_sample(x0, t, e, s), t, e, s) - x0).cwiseAbs().maxCoeff());
  }
  for (auto [t, tp] : ddim_timesteps(1000, 50)) {
    const MatrixXd x0 = rng.normal_matrix<double>(4, 16), e = rng.normal_matrix<double>(4, 16);
    const MatrixXd want = tp == 0 ? x0 : q_sample(x0, tp, e, s);
    ddim = std::max(ddim, (ddim_step(q_sample(x0, t, e, s), t, tp, e, s) - want).cwiseAbs().maxCoeff());
  }
  const MatrixXd x0 = rng.normal_matrix<double>(4, 64);
  MatrixXd x = q_sample(x0, s.steps(), rng.normal_matrix<double>(4, 64), s);
  for (int t = s.steps(); t >= 1; --t) {
    const MatrixXd eps = (x - std::sqrt(s.alpha_bar(t)) * x0) / std::sqrt(1.0 - s.alpha_bar(t));
    x = ddpm_step(x, t, eps, rng.normal_matrix<double>(4, 64), s);
  }
  const double rms = std::sqrt((x - x0).array().square().mean());
  o.require(rt <= 1e-10, fmt("predict_x0 round trip %.2e", rt));
  o.require(ddim <= 1e-9, fmt("DDIM exact-noise error %.2e", ddim));
  o.require(rms <= 1e-3, fmt("DDPM chain RMS %.2e", rms));
  o.note(fmt("round trip %.1e, DDIM %.1e, DDPM chain RMS %.1e", rt, ddim, rms));
  return o;
}

Outcome gradients() {
  Outcome o;
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testing::GradPath path(seed);
    params = path.parameter_count();
    worst = std::max(worst, path.relative_error());
  }
  o.require(params <= 2000, "micro-config has " + std::to_string(params) + " parameters");
  o.require(worst <= 1e-4, fmt("finite-difference relative error %.2e", worst));
  o.note(fmt("%.0f parameters, worst relative error %.1e over 5 seeds", static_cast<double>(params), worst));
  return o;
}

Outcome training_reduces_loss() {
  Outcome o;
  Study& s = study();
  int good = 0;
  std::string ratios;
  for (const auto& ck : s.after) {
    const std::size_t n = ck.trace.size();
    const double r = mean_loss(ck.trace, n - 50, n) / mean_loss(ck.trace, 0, 50);
    if (r <= 0.5) ++good;
    ratios += fmt(ratios.empty() ? "%.3f" : " %.3f", r);
  }
  o.require(good >= 4, std::to_string(good) + "/5 seeds halve the loss (ratios " + ratios + ")");
  o.note(std::to_string(good) + "/5 seeds, final/initial ratios " + ratios);
  return o;
}

Outcome fidelity_improves() {
  Outcome o;
  Study& s = study();
  const Embedders& emb = Embedders::standard();
  int good = 0;
  std::string lines;
  for (int k = 0; k < kSeeds; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const TrainingPair& p = s.pairs[uk];
    GenerationOptions opts;
    opts.seed = static_cast<std::uint64_t>(100 + k);
    const Generation g0 = generate(s.before[uk], p.prompt, opts);
    const Generation g1 = generate(s.after[uk], p.prompt, opts);
    const RowVector<double> ri = emb.image(p.image).values, ra = emb.audio(p.audio).values;
    const double i0 = cosine(ri, emb.image(g0.image).values), i1 = cosine(ri, emb.image(g1.image).values);
    const double a0 = cosine(ra, emb.audio(g0.audio).values), a1 = cosine(ra, emb.audio(g1.audio).values);
    if (i1 > i0 && a1 > a0) ++good;
    lines += fmt(" [clip-i %.3f->%.3f", i0, i1) + fmt(" clap-a %.3f->%.3f]", a0, a1);
  }
  o.require(good >= 4, std::to_string(good) + "/5 seeds improve both:" + lines);
  o.note(std::to_string(good) + "/5 seeds improve both:" + lines);
  return o;
}

Outcome enhancement() {
  Outcome o;
  const TokenClassMap cls{{TokenClass::kSot, TokenClass::kEdit, TokenClass::kOther}};
  const EnhancementConfig dflt;
  AttentionMap<double> m;
  m.weights.resize(2, 3);
  m.weights << 0.70, 0.10, 0.20, 0.5, 0.3, 0.2;
  const MatrixXd r = rescale_attention(std::as_const(m), cls, dflt).weights;
  MatrixXd want(2, 3);
  want << 0.42, 0.30, 0.20, 0.30, 0.90, 0.20;
  o.require((r - want).cwiseAbs().maxCoeff() <= 1e-12, "rescale examples");

  Study& s = study();
  AdaptedCheckpoint& ck = s.after[0];
  const std::string prompt = "church bells are ringing beside a crackling fireplace";
  auto run = [&](std::optional<EnhancementConfig> e) {
    GenerationOptions opts;
    opts.seed = 42;
    opts.keep_attention = true;
    opts.enhancement = e;
    return generate(ck, prompt, opts);
  };
  const Generation low = run(EnhancementConfig{0.6, 1.0, {}, {}});
  const Generation high = run(EnhancementConfig{0.6, 3.0, {}, {}});
  const double m1 = edit_attention_mass(low.vision_attention, low.classes);
  const double m3 = edit_attention_mass(high.vision_attention, high.classes);
  o.require(m3 > m1, fmt("edit mass %.4f (beta 1) vs %.4f (beta 3)", m1, m3));
  const Generation unit = run(EnhancementConfig{1.0, 1.0, {}, {}});
  const Generation none = run(std::nullopt);
  o.require(unit.audio == none.audio && unit.image.data == none.image.data, "unit gains differ from no enhancement");
  o.note(fmt("edit attention mass %.2f -> %.2f, unit gains bitwise identical", m1, m3));
  return o;
}

Outcome fusion_contract() {
  Outcome o;
  FusionConfig fc;
  double uni = 0.0, multi = 1e300;
  Rng rng(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (AdaptationMode mode : {AdaptationMode::kUnimodal, AdaptationMode::kMultimodal}) {
      fc.mode = mode;
      FusionAdapter<double> f(fc, seed);
      for (auto& [name, p] : f.parameters()) p->value = rng.normal_matrix<double>(p->value.rows(), p->value.cols(), 0.1);
      ad::Tape<double> tape;
      ad::Var<double> fa = tape.variable(rng.normal_matrix<double>(1, fc.feature_dim));
      ad::Var<double> fv = tape.variable(rng.normal_matrix<double>(1, fc.feature_dim));
      auto [e1, e2] = f.fuse(tape, fa, fv);
      tape.backward(ad::sum_squares(e2));
      const double g = tape.grad(fa).norm();
      if (mode == AdaptationMode::kUnimodal) uni = std::max(uni, g);
      else multi = std::min(multi, g);
    }
  o.require(uni == 0.0, fmt("unimodal cross gradient %.2e", uni));
  o.require(multi > 0.0, "multimodal cross gradient vanishes");

  JointModel model(ModelConfig::defaults(4));
  const Vocabulary& v = model.vocab();
  bool identical = true;
  for (Branch b : {Branch::kAudio, Branch::kVision}) {
    TextEncoder<float>& enc = model.text_encoder(b);
    const TokenSequence with_c = insert_placeholder(tokenize("bells are ringing", v), 1);
    const TokenSequence with_word = tokenize("church bells are ringing", v);
    identical = identical && enc.encode(with_c, enc.token_embedding(v.id("church")), FusionPoint::kEarly) ==
                                 enc.encode(with_word, std::nullopt, FusionPoint::kEarly);
  }
  o.require(identical, "early-fusion substitution not bitwise");
  o.note(fmt("unimodal cross gradient %.0f, multimodal min %.2e, substitution bitwise", uni, multi));
  return o;
}

Outcome metrics() {
  Outcome o;
  const GaussianStats<double> n0{Eigen::VectorXd::Zero(1), MatrixXd::Identity(1, 1)};
  const GaussianStats<double> n3{Eigen::VectorXd::Constant(1, 3.0), MatrixXd::Identity(1, 1)};
  o.require(frechet_distance(n0, n0) == 0.0, "FAD of identical stats nonzero");
  o.require(std::abs(frechet_distance(n0, n3) - 9.0) <= 1e-9, "N(0,1) vs N(3,1) is not 9");
  Rng rng(3);
  double asym = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 16;
    auto psd = [&] {
      const MatrixXd a = rng.normal_matrix<double>(d, d + 2);
      return MatrixXd(a * a.transpose() / d);
    };
    const GaussianStats<double> a{rng.normal_matrix<double>(d, 1), psd()}, b{rng.normal_matrix<double>(d, 1), psd()};
    asym = std::max(asym, std::abs(frechet_distance(a, b) - frechet_distance(b, a)));
    const Eigen::VectorXd dir = rng.normal_matrix<double>(d, 1);
    double prev = 0.0;
    for (double delta : {0.25, 0.5, 1.0, 2.0}) {
      const double f = frechet_distance(a, GaussianStats<double>{a.mean + delta * dir, a.covariance});
      monotone = monotone && f > prev;
      prev = f;
    }
  }
  o.require(asym <= 1e-8, fmt("FAD asymmetry %.2e", asym));
  o.require(monotone, "FAD not monotone under mean shift");

  auto set = [](std::initializer_list<double> v, int cols) {
    EmbeddingSet s;
    s.embedder = "toy";
    s.vectors = Eigen::Map<const MatrixXd>(v.begin(), cols, static_cast<Eigen::Index>(v.size()) / cols).transpose();
    return s;
  };
  const bool cos_ok = pairwise_cosine(set({0.3, 0.4}, 2), set({0.3, 0.4}, 2)) == 1.0 &&
                      pairwise_cosine(set({1, 0}, 2), set({0, 1}, 2)) == 0.0 &&
                      pairwise_cosine(set({1, 0, 0, 1}, 2), set({1, 0}, 2)) == 0.5;
  o.require(cos_ok, "cosine examples");

  const fs::path root = testing::scratch_dir("acceptance_avss");
  const auto records = synth_dataset(root, 21, 10);
  const Embedders& emb = Embedders::standard();
  double same = 0.0, cross = 0.0;
  int ns = 0, nc = 0;
  std::vector<TrainingPair> pairs;
  for (const auto& r : records) pairs.push_back(load_pair(r));
  for (const auto& pa : pairs)
    for (const auto& pi : pairs) {
      const double c = avss(EmbeddingSet::from({emb.joint_audio(pa.audio)}, SetSource::kGenerated),
                            EmbeddingSet::from({emb.joint_image(pi.image)}, SetSource::kGenerated));
      if (pa.prompt == pi.prompt) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  o.require(same / ns > cross / nc, fmt("AVSS same-class %.3f vs cross-class %.3f", same / ns, cross / nc));
  fs::remove_all(root);
  o.note(fmt("FAD 9 case exact, asymmetry %.1e, AVSS same %.3f > cross %.3f", asym, same / ns, cross / nc));
  return o;
}

Outcome codecs() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const bool vision = seed % 2 == 1;
    const PatchCodec c(vision ? 3 : 1, vision ? 2 : 4, vision ? 2 : 4, seed, vision ? Modality::kVision : Modality::kAudio);
    const Planes x(rng.normal_matrix<double>(c.channels_in(), 32 * 32), 32, 32);
    const Planes back = decode_latent(encode_latent(x, c), c);
    worst = std::max(worst, (back.data - x.data).norm() / x.data.norm());
  }
  o.require(worst <= 1e-5, fmt("patch codec relative error %.2e", worst));
  const StftConfig cfg;
  std::vector<double> tone(16384);
  for (std::size_t i = 0; i < tone.size(); ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    tone[i] = 0.4 * std::sin(2 * M_PI * 440.0 * t) + 0.2 * std::sin(2 * M_PI * 1250.0 * t);
  }
  const Planes mel = wav_to_mel(tone, cfg);
  const MatrixXd target = mel_to_linear(mel, cfg);
  std::vector<double> errs;
  for (int it : {1, 8, 32}) errs.push_back(spectral_convergence(mel_to_wav(mel, cfg, it), target, cfg));
  o.require(errs[1] <= errs[0] && errs[2] <= errs[1],
            fmt("Griffin-Lim errors %.4f %.4f %.4f", errs[0], errs[1], errs[2]));
  o.note(fmt("codec error %.1e", worst) + fmt("; Griffin-Lim %.3f >= %.3f >= %.3f", errs[0], errs[1], errs[2]));
  return o;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testing::file_bytes(e.path());
  return out;
}

Outcome reproducibility(const fs::path& work) {
  Outcome o;
  const fs::path root = work / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  synth_dataset(root / "data", 17, 5);
  save_model(study().base, (root / "base.aved").string());
  auto cli = [&](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) o.require(false, args[0] + " exited " + std::to_string(code) + ": " + err.str());
  };
  const std::string run = (root / "run").string();
  auto pass = [&] {
    fs::remove_all(run);
    cli({"adapt", "--data", (root / "data").string(), "--sample", "0002-bells", "--base", (root / "base.aved").string(),
         "--seed", "7", "--steps", "60", "--out", run + "/adapt"});
    cli({"edit", "--checkpoint", run + "/adapt/checkpoint.aved", "--seed", "7", "--prompt",
         "church bells are ringing beside a crackling fireplace", "--prompt", "church bells are ringing in the rain",
         "--out", run + "/edit"});
    cli({"eval", "--reference", (root / "data/0002-bells").string(), "--generated", run + "/edit", "--out",
         run + "/eval/report.json"});
    return tree(run);
  };
  const auto first = pass();
  const auto second = pass();
  o.require(first == second, "artifacts differ between runs");

  AdaptedCheckpoint ck = load_checkpoint(run + "/adapt/checkpoint.aved");
  save_checkpoint(ck, (root / "resaved.aved").string());
  o.require(testing::file_bytes(root / "resaved.aved") == testing::file_bytes(run + "/adapt/checkpoint.aved"),
            "checkpoint save/load/save not byte-identical");
  o.note(std::to_string(first.size()) + " artifacts byte-identical across runs, checkpoint resave identical");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "avedit_acceptance";
  fs::create_directories(work);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"noise schedule and forward process", schedule_and_forward},
      {"sampler identities", sampler_identities},
      {"end-to-end gradients", gradients},
      {"adaptation halves the loss", training_reduces_loss},
      {"adaptation improves fidelity", fidelity_improves},
      {"attention enhancement", enhancement},
      {"fusion modes and early fusion", fusion_contract},
      {"metrics", metrics},
      {"codecs", codecs},
      {"reproducibility", [&] { return reproducibility(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2zu %s: %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
