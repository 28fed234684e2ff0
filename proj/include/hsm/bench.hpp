#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hsm/errors.hpp"
#include "hsm/mixers.hpp"
#include "hsm/ops.hpp"
#include "hsm/stats.hpp"

namespace hsm {

struct BenchOptions {
  std::vector<int> lengths{32, 64, 128, 256, 512};
  int repeats = 5;
  int batch = 8;
  int dim = 256;
  int heads = 8;
  bool backward = false;
  std::uint64_t seed = 1;
  // Each timing sample loops until at least this much time has passed.
  double min_sample_seconds = 0.01;
  int max_length = 4096;
};

struct BenchRow {
  std::string label;
  int time = 0;
  double median_seconds = 0.0;
  int iterations = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::map<std::string, double> slopes;   // log-log slope of median time vs T
};

inline constexpr const char* kBenchCsvHeader = "case,T,median_seconds,iterations";

std::string bench_csv(const BenchReport& report);

// Builds the timed body for one sequence length; setup cost stays outside.
using BenchCase = std::function<std::function<void()>(int time)>;

namespace detail {

template <typename Fn>
double time_iterations(Fn& fn, int iterations) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iterations; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline BenchReport run_bench(const std::vector<std::pair<std::string, BenchCase>>& cases, const BenchOptions& opt) {
  if (opt.lengths.size() < 2) throw ParameterError("bench needs at least two sequence lengths");
  if (opt.repeats < 1) throw ParameterError("repeats must be >= 1");
  for (int t : opt.lengths) {
    if (t < 1 || t > opt.max_length) {
      throw ParameterError("length " + std::to_string(t) + " outside [1, " + std::to_string(opt.max_length) + "]");
    }
  }
  BenchReport report;
  for (const auto& [label, make] : cases) {
    std::vector<double> xs, ys;
    for (int t : opt.lengths) {
      auto body = make(t);
      body();  // warm-up
      int iters = 1;
      while (detail::time_iterations(body, iters) < opt.min_sample_seconds && iters < (1 << 20)) iters *= 2;
      std::vector<double> samples;
      for (int r = 0; r < opt.repeats; ++r) samples.push_back(detail::time_iterations(body, iters) / iters);
      const double med = median(samples);
      report.rows.push_back({label, t, med, iters});
      xs.push_back(t);
      ys.push_back(med);
    }
    report.slopes[label] = loglog_slope(xs, ys);
  }
  return report;
}

// Forward (and optionally backward) of one mixer on [batch*T x dim] input.
template <typename S>
BenchCase mixer_bench_case(const MixerSpec& spec, const BenchOptions& opt) {
  return [spec, opt](int time) -> std::function<void()> {
    Rng rng(opt.seed);
    auto mixer = std::shared_ptr<Mixer<S>>(make_mixer<S>(spec, opt.dim, "bench.", rng));
    auto x = std::make_shared<Matrix<S>>(init_normal<S>(static_cast<Index>(opt.batch) * time, opt.dim, 1.0, rng));
    const bool backward = opt.backward;
    return [mixer, x, time, backward]() {
      Tape<S> tape(backward);
      const auto in = backward ? tape.variable(*x) : tape.constant(*x);
      const auto y = mixer->forward(tape, in, time);
      if (backward) {
        tape.backward(sum(y));
        for (auto* p : mixer->parameters()) p->zero_grad();
      }
    };
  };
}

// The O(T^2) core of dense attention: scores, causal softmax and the
// probability-weighted sum, without the linear projections.
template <typename S>
BenchCase attention_scores_case(const BenchOptions& opt) {
  return [opt](int time) -> std::function<void()> {
    Rng rng(opt.seed);
    const Index rows = static_cast<Index>(opt.batch) * time;
    auto q = std::make_shared<Matrix<S>>(init_normal<S>(rows, opt.dim, 1.0, rng));
    auto k = std::make_shared<Matrix<S>>(init_normal<S>(rows, opt.dim, 1.0, rng));
    auto v = std::make_shared<Matrix<S>>(init_normal<S>(rows, opt.dim, 1.0, rng));
    const bool backward = opt.backward;
    const int heads = opt.heads;
    return [q, k, v, time, heads, backward]() {
      Tape<S> tape(backward);
      const auto qv = backward ? tape.variable(*q) : tape.constant(*q);
      const auto y = causal_attention(qv, tape.constant(*k), tape.constant(*v), time, heads);
      if (backward) tape.backward(sum(y));
    };
  };
}

}  // namespace hsm
