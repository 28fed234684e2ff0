// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Tolerances and budgets are fixed below; single-threaded throughout.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hsm/bench.hpp"
#include "hsm/experiment.hpp"
#include "hsm/gradcheck_suite.hpp"
#include "hsm/mixers.hpp"
#include "hsm/model.hpp"
#include "hsm/runtime.hpp"
#include "hsm/stats.hpp"
#include "hsm/tokenizer.hpp"
#include "hsm/toy_corpus.hpp"
#include "hsm/training.hpp"

#ifndef HSM_SOURCE_DIR
#define HSM_SOURCE_DIR "."
#endif

using namespace hsm;
namespace fs = std::filesystem;

namespace {

using Real = float;

constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr int kCausalCases = 100;
constexpr double kCausalBudgetSeconds = 60.0;
constexpr double kConvTolerance = 1e-12;
constexpr double kParamTolerance = 0.005;
constexpr double kLinearSlopeMin = 0.7, kLinearSlopeMax = 1.4;
constexpr double kQuadSlopeMin = 1.6, kQuadSlopeMax = 2.4;
constexpr double kBenchBudgetSeconds = 300.0;
constexpr int kToyStories = 1000;
constexpr int kToyVocab = 512;
constexpr int kToyBatch = 16;
constexpr int kToyEpochs = 5;
constexpr double kToyLossRatio = 0.7;
constexpr int kToyMinRises = 4;
constexpr double kToyBudgetSeconds = 900.0;
constexpr double kSpearmanMax = -0.8;
constexpr int kDeterminismStories = 60;
constexpr int kDeterminismEpochs = 2;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& id, const Verdict& v) {
  std::printf("%s %-26s %s\n", v.pass ? "PASS" : "FAIL", id.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

void run_criterion(const std::string& id, const std::function<Verdict()>& body) {
  try {
    report(id, body());
  } catch (const std::exception& e) {
    report(id, {false, std::string("exception: ") + e.what()});
  }
}

void info(const std::string& line) {
  std::printf("     %s\n", line.c_str());
  std::fflush(stdout);
}

template <typename S>
void randomize(std::span<Parameter<S>* const> params, double stddev, Rng& rng) {
  for (auto* p : params) p->value = init_normal<S>(p->value.rows(), p->value.cols(), stddev, rng);
}

// ---- gradient correctness ----------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck("all", {.tolerance = kGradTolerance});
  const double secs = seconds_since(t0);
  bool ok = !entries.empty();
  const GradCheckEntry* worst = nullptr;
  for (const auto& e : entries) {
    ok = ok && e.pass;
    if (!worst || e.max_rel_error > worst->max_rel_error) worst = &e;
    if (!e.pass) info("failed " + e.name + fmt(" %.3e", e.max_rel_error));
  }
  return {ok && secs < kGradBudgetSeconds,
          fmt("%zu entries, max rel error %.2e (%s) < %.0e; %.1f s < %.0f s", entries.size(),
              worst ? worst->max_rel_error : 0.0, worst ? worst->name.c_str() : "-", kGradTolerance, secs,
              kGradBudgetSeconds)};
}

// ---- causality ---------------------------------------------------------------

std::string spec_label(const MixerSpec& s) {
  std::string out = to_string(s.kind);
  if (s.heads > 1) out += "/h" + std::to_string(s.heads);
  for (size_t i = 0; i < s.shifts.size(); ++i) out += (i ? ":" : "/s") + std::to_string(s.shifts[i]);
  return out;
}

// Perturbs one row of one sequence; rows before it and every other sequence
// must come out bit-identical, and the perturbed row itself must move.
bool mixer_causality(const MixerSpec& spec, int dim, Rng& rng, std::string& why) {
  auto mixer = make_mixer<Real>(spec, dim, "m.", rng);
  auto params = mixer->parameters();
  randomize<Real>(params, 0.5, rng);
  constexpr Index kBatch = 2;
  for (int c = 0; c < kCausalCases; ++c) {
    const Index time = std::uniform_int_distribution<Index>(2, 16)(rng);
    const Index seq = std::uniform_int_distribution<Index>(0, kBatch - 1)(rng);
    const Index j = std::uniform_int_distribution<Index>(0, time - 1)(rng);
    const Matrix<Real> x = init_normal<Real>(kBatch * time, dim, 1.0, rng);
    Matrix<Real> x2 = x;
    x2.row(seq * time + j) = init_normal<Real>(1, dim, 1.0, rng);
    Tape<Real> t1(false), t2(false);
    const Matrix<Real> y1 = mixer->forward(t1, t1.constant(x), time).value();
    const Matrix<Real> y2 = mixer->forward(t2, t2.constant(x2), time).value();
    for (Index b = 0; b < kBatch; ++b) {
      for (Index t = 0; t < time; ++t) {
        const Index r = b * time + t;
        const bool same = (y1.row(r).array() == y2.row(r).array()).all();
        if ((b != seq || t < j) && !same) {
          why = fmt("case %d: T=%lld j=%lld changed row %lld of sequence %lld", c, static_cast<long long>(time),
                    static_cast<long long>(j), static_cast<long long>(t), static_cast<long long>(b));
          return false;
        }
        if (b == seq && t == j && same) {
          why = fmt("case %d: perturbing row %lld had no effect on it", c, static_cast<long long>(j));
          return false;
        }
      }
    }
  }
  return true;
}

bool model_causality(const ModelConfig& cfg, Rng& rng, std::string& why) {
  Model<Real> model(cfg, 11);
  randomize<Real>(std::span<Parameter<Real>* const>(model.parameters()), 0.3, rng);
  for (int c = 0; c < kCausalCases; ++c) {
    const int time = std::uniform_int_distribution<int>(2, cfg.context)(rng);
    const int j = std::uniform_int_distribution<int>(0, time - 1)(rng);
    std::vector<int> tokens(static_cast<size_t>(time));
    for (int& t : tokens) t = std::uniform_int_distribution<int>(0, cfg.vocab - 1)(rng);
    auto other = tokens;
    other[static_cast<size_t>(j)] = (tokens[static_cast<size_t>(j)] +
                                     std::uniform_int_distribution<int>(1, cfg.vocab - 1)(rng)) % cfg.vocab;
    const Matrix<Real> a = model.logits(tokens);
    const Matrix<Real> b = model.logits(other);
    for (int t = 0; t < j; ++t) {
      if (!(a.row(t).array() == b.row(t).array()).all()) {
        why = fmt("case %d: T=%d j=%d changed logits at %d", c, time, j, t);
        return false;
      }
    }
    if ((a.row(j).array() == b.row(j).array()).all()) {
      why = fmt("case %d: changing token %d left its own logits unchanged", c, j);
      return false;
    }
  }
  return true;
}

Verdict causality() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<MixerSpec> mixers{
      {MixerKind::DenseAttention, 4, {}},          {MixerKind::ScalarAB, 1, {1}},
      {MixerKind::ScalarAB, 1, {4}},               {MixerKind::ScalarAB, 4, {1, 2, 4, 8}},
      {MixerKind::VectorAB, 1, {2}},               {MixerKind::MatrixAB, 1, {1}},
      {MixerKind::GatedSingle, 1, {3}},            {MixerKind::GatedDouble, 1, {1}},
      {MixerKind::GatedDouble, 4, {1, 2, 4, 8}},   {MixerKind::Fusion, 1, {2}},
      {MixerKind::Fusion, 4, {1, 2, 4, 8}},
  };
  Rng rng(2024);
  std::string why;
  for (const auto& spec : mixers) {
    if (!mixer_causality(spec, 16, rng, why)) return {false, spec_label(spec) + ": " + why};
  }
  for (const auto& name : preset_names()) {
    ModelConfig cfg = make_preset(name).model;
    cfg.dim = 32;
    cfg.context = 64;
    cfg.vocab = 64;
    cfg.ffn_hidden = 48;
    if (!model_causality(cfg, rng, why)) return {false, "model " + name + ": " + why};
  }
  const double secs = seconds_since(t0);
  return {secs < kCausalBudgetSeconds,
          fmt("%zu mixer configs + %zu preset models, %d cases each, exact equality; %.1f s < %.0f s",
              mixers.size(), preset_names().size(), kCausalCases, secs, kCausalBudgetSeconds)};
}

// ---- receptive field ---------------------------------------------------------

// Jacobian of a stack of ScalarAB layers with a = b = 1 and no residual or
// normalisation: the map is linear, so column j is the response to e_j.
Matrix<double> linear_stack_jacobian(const std::vector<int>& shifts, Index time) {
  Rng rng(1);
  std::vector<std::unique_ptr<Mixer<double>>> stack;
  for (int s : shifts) {
    stack.push_back(make_mixer<double>({MixerKind::ScalarAB, 1, {s}}, 1, "l.", rng));
    auto& m = dynamic_cast<ScalarABMixer<double>&>(*stack.back());
    m.a().value(0, 0) = 1.0;
    m.b().value(0, 0) = 1.0;
  }
  Matrix<double> jac(time, time);
  for (Index j = 0; j < time; ++j) {
    Matrix<double> x = Matrix<double>::Zero(time, 1);
    x(j, 0) = 1.0;
    Tape<double> tape(false);
    auto h = tape.constant(x);
    for (auto& m : stack) h = m->forward(tape, h, time);
    jac.col(j) = h.value().col(0);
  }
  return jac;
}

bool full_lower_triangular(const Matrix<double>& jac) {
  for (Index i = 0; i < jac.rows(); ++i) {
    for (Index j = 0; j < jac.cols(); ++j) {
      if ((jac(i, j) != 0.0) != (j <= i)) return false;
    }
  }
  return true;
}

Verdict receptive_field() {
  constexpr Index kTime = 16;
  const auto jac = linear_stack_jacobian({1, 2, 4, 8}, kTime);
  const bool full = full_lower_triangular(jac);
  // Each offset 0..15 has exactly one binary decomposition, so every entry is 1.
  bool unit = true;
  for (Index i = 0; i < kTime; ++i) {
    for (Index j = 0; j <= i; ++j) unit = unit && jac(i, j) == 1.0;
  }
  const auto control = linear_stack_jacobian({1, 1, 1, 1}, kTime);
  const bool control_full = full_lower_triangular(control);
  return {full && unit && !control_full,
          fmt("shifts [1,2,4,8], T=16: influence mask %s, nonzero entries all 1: %s; control [1,1,1,1] %s",
              full ? "full lower-triangular" : "NOT full", unit ? "yes" : "no",
              control_full ? "unexpectedly full" : "misses offsets > 4")};
}

// ---- convolution equivalence -------------------------------------------------

// y[b,t,c] = sum_k w[k][c] * x[b, t - k*dilation[c], c] with zero padding.
std::vector<double> depthwise_causal_conv(const std::vector<double>& x, int batch, int time, int channels,
                                          const std::vector<std::vector<double>>& taps,
                                          const std::vector<int>& dilation) {
  std::vector<double> y(x.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < time; ++t) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (size_t k = 0; k < taps.size(); ++k) {
          const int src = t - static_cast<int>(k) * dilation[static_cast<size_t>(c)];
          if (src >= 0) acc += taps[k][static_cast<size_t>(c)] * x[static_cast<size_t>((b * time + src) * channels + c)];
        }
        y[static_cast<size_t>((b * time + t) * channels + c)] = acc;
      }
    }
  }
  return y;
}

double conv_case(const MixerSpec& spec, int channels, Rng& rng) {
  constexpr int kBatch = 3, kTime = 20;
  auto mixer = make_mixer<double>(spec, channels, "m.", rng);
  auto params = mixer->parameters();
  randomize<double>(params, 1.0, rng);
  std::vector<std::vector<double>> taps(2, std::vector<double>(static_cast<size_t>(channels)));
  std::vector<int> dilation(static_cast<size_t>(channels));
  const int hd = channels / spec.heads;
  for (int c = 0; c < channels; ++c) {
    const auto cu = static_cast<size_t>(c);
    const int head = c / hd;
    dilation[cu] = spec.shift_for_head(head);
    if (spec.kind == MixerKind::ScalarAB) {
      taps[0][cu] = params[static_cast<size_t>(2 * head)]->value(0, 0);
      taps[1][cu] = params[static_cast<size_t>(2 * head + 1)]->value(0, 0);
    } else {
      taps[0][cu] = params[0]->value(0, c);
      taps[1][cu] = params[1]->value(0, c);
    }
  }
  const Matrix<double> x = init_normal<double>(kBatch * kTime, channels, 1.0, rng);
  std::vector<double> flat(x.data(), x.data() + x.size());
  const auto want = depthwise_causal_conv(flat, kBatch, kTime, channels, taps, dilation);
  Tape<double> tape(false);
  const Matrix<double> got = mixer->forward(tape, tape.constant(x), kTime).value();
  double err = 0.0;
  for (Index i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got.data()[i] - want[static_cast<size_t>(i)]));
  return err;
}

Verdict convolution_equivalence() {
  const std::vector<MixerSpec> specs{
      {MixerKind::ScalarAB, 1, {1}}, {MixerKind::ScalarAB, 1, {3}},        {MixerKind::ScalarAB, 1, {7}},
      {MixerKind::VectorAB, 1, {1}}, {MixerKind::VectorAB, 1, {5}},        {MixerKind::ScalarAB, 3, {1, 2, 4}},
  };
  Rng rng(77);
  double worst = 0.0;
  for (const auto& s : specs) {
    const double err = conv_case(s, 6, rng);
    info(fmt("%-22s max |diff| %.3e", spec_label(s).c_str(), err));
    worst = std::max(worst, err);
  }
  return {worst <= kConvTolerance,
          fmt("%zu layers vs 2-tap causal depthwise convolution at 64-bit: max |diff| %.2e <= %.0e", specs.size(),
              worst, kConvTolerance)};
}

// ---- parameter parity --------------------------------------------------------

Verdict parameter_parity() {
  bool ok = true;
  double worst = 0.0;
  for (const auto& name : preset_names()) {
    const auto e = make_preset(name);
    const Model<Real> m(e.model, 1);
    const long long n = m.count_params();
    const double rel = std::abs(static_cast<double>(n - kReferenceParamTarget)) / kReferenceParamTarget;
    ok = ok && rel <= kParamTolerance && n == census(e.model);
    worst = std::max(worst, rel);
    info(fmt("%-22s ffn_hidden %4d  params %lld  (%+.4f%%)", name.c_str(), e.model.ffn_hidden, n,
             100.0 * static_cast<double>(n - kReferenceParamTarget) / kReferenceParamTarget));
  }
  return {ok, fmt("%zu presets, worst deviation %.4f%% <= %.1f%% of %lld", preset_names().size(), 100.0 * worst,
                  100.0 * kParamTolerance, kReferenceParamTarget)};
}

// ---- complexity scaling ------------------------------------------------------

Verdict complexity_scaling() {
  const auto t0 = std::chrono::steady_clock::now();
  BenchOptions opt;
  opt.lengths = {32, 64, 128, 256, 512};
  opt.min_sample_seconds = 0.05;
  std::vector<std::pair<std::string, BenchCase>> cases;
  // First layer of every HSM preset: one case per (kind, heads) layout.
  std::vector<std::string> hsm_labels;
  for (const auto& name : preset_names()) {
    const MixerSpec spec = make_preset(name).model.layers.front();
    const std::string label = spec_label(spec);
    if (!is_hsm(spec.kind) || std::find(hsm_labels.begin(), hsm_labels.end(), label) != hsm_labels.end()) continue;
    hsm_labels.push_back(label);
    cases.emplace_back(label, mixer_bench_case<Real>(spec, opt));
  }
  cases.emplace_back("attention_scores", attention_scores_case<Real>(opt));
  const auto report = run_bench(cases, opt);
  const double secs = seconds_since(t0);
  bool ok = true;
  double lo = 1e9, hi = -1e9;
  for (const auto& label : hsm_labels) {
    const double s = report.slopes.at(label);
    info(fmt("%-26s slope %.3f", label.c_str(), s));
    ok = ok && s >= kLinearSlopeMin && s <= kLinearSlopeMax;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double quad = report.slopes.at("attention_scores");
  info(fmt("%-26s slope %.3f", "attention_scores", quad));
  ok = ok && quad >= kQuadSlopeMin && quad <= kQuadSlopeMax && secs < kBenchBudgetSeconds;
  return {ok, fmt("T 32..512: HSM slopes %.2f..%.2f in [%.1f,%.1f], dense scores %.2f in [%.1f,%.1f]; %.0f s < %.0f s",
                  lo, hi, kLinearSlopeMin, kLinearSlopeMax, quad, kQuadSlopeMin, kQuadSlopeMax, secs,
                  kBenchBudgetSeconds)};
}

// ---- toy training ------------------------------------------------------------

struct ToyRun {
  std::string name;
  TrainResult result;
  double wall_seconds = 0.0;
};

struct ToyData {
  Vocab vocab;
  std::vector<TokenizedStory> stories;
};

ToyData make_toy_data(int stories) {
  const auto text = make_toy_stories({.stories = stories});
  ToyData d;
  d.vocab = train_bpe(text, kToyVocab).vocab;
  for (const auto& s : text) d.stories.push_back(encode(s, d.vocab));
  return d;
}

ExperimentConfig toy_experiment(const std::string& name, int vocab, int epochs) {
  auto e = make_preset(name);
  e.model.vocab = vocab;
  e.train.batch_size = kToyBatch;
  e.train.micro_batch = kToyBatch;
  e.train.epochs = epochs;
  return e;
}

// Trains the runs one epoch at a time in turn so slow phases of the machine
// fall on both runs alike; each step resumes from the run's last checkpoint.
std::vector<ToyRun> train_interleaved(const std::vector<std::string>& names, const DataSplit& split, int vocab,
                                      const fs::path& dir) {
  std::vector<ToyRun> runs;
  std::vector<std::unique_ptr<Model<Real>>> models;
  std::vector<ExperimentConfig> exps;
  for (const auto& n : names) {
    exps.push_back(toy_experiment(n, vocab, kToyEpochs));
    models.push_back(std::make_unique<Model<Real>>(exps.back().model, exps.back().train.seed));
    fs::remove_all(dir / n);
    runs.push_back({n, {}, 0.0});
  }
  for (int epoch = 1; epoch <= kToyEpochs; ++epoch) {
    for (size_t i = 0; i < names.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      TrainOptions opt;
      opt.out_dir = dir / names[i];
      opt.resume = true;
      opt.max_epochs_this_call = 1;
      runs[i].result = train(*models[i], split, exps[i].train, opt);
      runs[i].wall_seconds += seconds_since(t0);
      const auto& r = runs[i].result.history.back();
      info(fmt("%-14s epoch %d  train_loss %.4f  val_loss %.4f  val_accuracy %.4f  %.1f s", names[i].c_str(),
               r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.seconds));
    }
  }
  return runs;
}

Verdict toy_sanity(const std::vector<ToyRun>& runs, int vocab) {
  bool ok = true;
  std::string detail;
  double wall = 0.0;
  for (const auto& run : runs) {
    const auto& h = run.result.history;
    const double initial = run.result.initial.loss;
    const double final_loss = h.back().val_loss;
    int rises = 0;
    double prev = run.result.initial.accuracy;
    for (const auto& r : h) {
      rises += r.val_accuracy > prev ? 1 : 0;
      prev = r.val_accuracy;
    }
    const bool good = static_cast<int>(h.size()) == kToyEpochs && final_loss <= kToyLossRatio * initial &&
                      rises >= kToyMinRises;
    ok = ok && good;
    wall += run.wall_seconds;
    detail += fmt("%s %.3f->%.3f (x%.3f), accuracy rose %d/%d; ", run.name.c_str(), initial, final_loss,
                  final_loss / initial, rises, kToyEpochs);
  }
  ok = ok && wall < kToyBudgetSeconds;
  return {ok, detail + fmt("ln(V)=%.3f, limit x%.1f and %d/%d; %.0f s < %.0f s", std::log(vocab), kToyLossRatio,
                           kToyMinRises, kToyEpochs, wall, kToyBudgetSeconds)};
}

Verdict accuracy_loss_anticorrelation(const std::vector<ToyRun>& runs) {
  std::vector<double> loss, acc;
  for (const auto& run : runs) {
    loss.push_back(run.result.initial.loss);
    acc.push_back(run.result.initial.accuracy);
    for (const auto& r : run.result.history) {
      loss.push_back(r.val_loss);
      acc.push_back(r.val_accuracy);
    }
  }
  const double rho = spearman(loss, acc);
  return {rho < kSpearmanMax, fmt("%zu pooled (val_loss, val_accuracy) pairs: Spearman %.4f < %.1f (Pearson %.4f)",
                                  loss.size(), rho, kSpearmanMax, pearson(loss, acc))};
}

double median_epoch_seconds(const ToyRun& run) {
  std::vector<double> s;
  for (const auto& r : run.result.history) s.push_back(r.seconds);
  return median(s);
}

Verdict relative_speed(const ToyRun& gpt, const ToyRun& hsm) {
  const double g = median_epoch_seconds(gpt);
  const double h = median_epoch_seconds(hsm);
  return {h < g, fmt("median epoch %s %.1f s < %s %.1f s (%.1f%% faster here; magnitude reported, not asserted)",
                     hsm.name.c_str(), h, gpt.name.c_str(), g, 100.0 * (1.0 - h / g))};
}

// ---- not desk-reproducible ---------------------------------------------------

Verdict not_desk_reproducible() {
  const fs::path src(HSM_SOURCE_DIR);
  int matched = 0;
  for (const auto& name : preset_names()) {
    const auto file = src / "presets" / (name + ".json");
    if (fs::exists(file) && nlohmann::json(load_experiment(file)) == nlohmann::json(make_preset(name))) ++matched;
  }
  std::ifstream readme(src / "README.md");
  std::stringstream text;
  text << readme.rdbuf();
  const bool procedure = text.str().find("## Long runs") != std::string::npos;
  const int n = static_cast<int>(preset_names().size());
  return {matched == n && procedure,
          fmt("not reproduced here: full-corpus validation losses, learned blend weights and the hybrid-vs-reference "
              "ordering need multi-hour runs on the full corpus; %d/%d shipped preset files match, long-run "
              "procedure %s in README",
              matched, n, procedure ? "documented" : "MISSING")};
}

// ---- determinism -------------------------------------------------------------

std::string without_seconds(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read " + csv.string());
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Verdict determinism(const ToyData& data, const fs::path& dir) {
  std::vector<TokenizedStory> stories(data.stories.begin(), data.stories.begin() + kDeterminismStories);
  int identical = 0;
  std::string bad;
  for (const auto& name : preset_names()) {
    const auto e = toy_experiment(name, data.vocab.size(), kDeterminismEpochs);
    const auto split = filter_and_split(stories, e.model.context, e.train.val_fraction, e.train.seed);
    std::vector<std::unique_ptr<Model<Real>>> models;
    std::vector<std::string> csvs;
    for (const char* run : {"a", "b"}) {
      models.push_back(std::make_unique<Model<Real>>(e.model, e.train.seed));
      TrainOptions opt;
      opt.out_dir = dir / name / run;
      fs::remove_all(opt.out_dir);
      train(*models.back(), split, e.train, opt);
      csvs.push_back(without_seconds(opt.out_dir / "metrics.csv"));
    }
    bool same = csvs[0] == csvs[1];
    const auto& pa = models[0]->parameters();
    const auto& pb = models[1]->parameters();
    for (size_t i = 0; i < pa.size(); ++i) same = same && (pa[i]->value.array() == pb[i]->value.array()).all();
    if (same) {
      ++identical;
    } else {
      bad += " " + name;
    }
  }
  const int n = static_cast<int>(preset_names().size());
  return {identical == n, fmt("%d/%d presets rerun with the same seed give identical metrics.csv (seconds column "
                              "excluded) and bit-identical final parameters, 1 thread%s",
                              identical, n, bad.empty() ? "" : ("; differ:" + bad).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string work_dir = "acceptance_work";
  app.add_option("--work-dir", work_dir, "Directory for training outputs");
  CLI11_PARSE(app, argc, argv);
  Eigen::setNbThreads(1);
  tune_allocator();
  const fs::path work(work_dir);
  fs::create_directories(work);
  const auto t0 = std::chrono::steady_clock::now();

  run_criterion("gradient_correctness", gradient_correctness);
  run_criterion("causality", causality);
  run_criterion("receptive_field", receptive_field);
  run_criterion("convolution_equivalence", convolution_equivalence);
  run_criterion("parameter_parity", parameter_parity);
  run_criterion("complexity_scaling", complexity_scaling);

  ToyData data;
  std::vector<ToyRun> runs;
  std::string toy_error;
  try {
    data = make_toy_data(kToyStories);
    const auto e = toy_experiment("gpt_reference", data.vocab.size(), kToyEpochs);
    const auto split = filter_and_split(data.stories, e.model.context, e.train.val_fraction, e.train.seed);
    info(fmt("toy corpus: %d stories, vocab %d, %lld train / %lld val stories after filtering", kToyStories,
             data.vocab.size(), split.stats.train_stories, split.stats.val_stories));
    runs = train_interleaved({"gpt_reference", "hsm_ab"}, split, data.vocab.size(), work / "toy");
  } catch (const std::exception& ex) {
    toy_error = ex.what();
  }
  const auto toy = [&](auto fn) {
    return [&, fn]() -> Verdict {
      if (!toy_error.empty()) return {false, "toy training failed: " + toy_error};
      return fn();
    };
  };
  run_criterion("training_sanity", toy([&] { return toy_sanity(runs, data.vocab.size()); }));
  run_criterion("accuracy_loss_spearman", toy([&] { return accuracy_loss_anticorrelation(runs); }));
  run_criterion("relative_epoch_speed", toy([&] { return relative_speed(runs[0], runs[1]); }));
  run_criterion("not_desk_reproducible", not_desk_reproducible);
  run_criterion("determinism", toy([&] { return determinism(data, work / "determinism"); }));

  std::printf("%d failure(s), %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
