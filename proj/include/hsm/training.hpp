#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsm/checkpoint.hpp"
#include "hsm/data.hpp"
#include "hsm/errors.hpp"
#include "hsm/experiment.hpp"
#include "hsm/metrics.hpp"
#include "hsm/model.hpp"
#include "hsm/ops.hpp"
#include "hsm/optimizer.hpp"

namespace hsm {

struct EvalResult {
  double loss = 0.0;       // mean cross-entropy over scored positions
  double accuracy = 0.0;   // fraction of scored positions whose argmax is the target
  long long positions = 0;
};

// Index of the largest entry; the lowest index wins ties.
template <typename Derived>
Index argmax_row(const Eigen::DenseBase<Derived>& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

// Adds per-position loss and hits for one block of logits into the sums.
template <typename S>
void score_logits(const Matrix<S>& logits, std::span<const int> targets, double& loss_sum, long long& hits,
                  long long& positions) {
  for (Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= logits.cols()) {
      throw IndexError("target " + std::to_string(t) + " outside vocabulary of " + std::to_string(logits.cols()));
    }
    const auto row = logits.row(i).template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss_sum += lse - row(t);
    hits += argmax_row(logits.row(i)) == t ? 1 : 0;
    ++positions;
  }
}

// Eval-mode pass (no dropout, no tape) over every position of every batch.
template <typename S>
EvalResult validate(Model<S>& model, std::span<const Batch> batches, int micro_batch = 16) {
  if (batches.empty()) throw EmptyDatasetError("validation set is empty");
  double loss_sum = 0.0;
  long long hits = 0, positions = 0;
  for (const auto& b : batches) {
    for (int start = 0; start < b.rows; start += micro_batch) {
      const int rows = std::min(micro_batch, b.rows - start);
      const auto off = static_cast<size_t>(start) * static_cast<size_t>(b.cols);
      const auto n = static_cast<size_t>(rows) * static_cast<size_t>(b.cols);
      Tape<S> tape(false);
      const auto logits = model.forward(tape, std::span<const int>(b.inputs).subspan(off, n), b.cols, false);
      score_logits(logits.value(), std::span<const int>(b.targets).subspan(off, n), loss_sum, hits, positions);
    }
  }
  if (positions == 0) throw EmptyDatasetError("validation set has no scored positions");
  return {loss_sum / static_cast<double>(positions), static_cast<double>(hits) / static_cast<double>(positions),
          positions};
}

struct TrainOptions {
  // Empty: keep everything in memory. Otherwise metrics.csv, metrics.jsonl,
  // last.ckpt, best.ckpt and run.json are written here every epoch.
  std::filesystem::path out_dir;
  // Continue from out_dir/last.ckpt when it exists.
  bool resume = false;
  // Stop after this many epochs in this call (0 = run to cfg.epochs).
  int max_epochs_this_call = 0;
  std::ostream* log = nullptr;
  std::function<void(const MetricsRecord&)> on_epoch;
  // Extra fields stored in run.json and every checkpoint's meta.
  nlohmann::json extra_meta = nlohmann::json::object();
};

struct TrainResult {
  EvalResult initial;   // validation before the first update
  std::vector<MetricsRecord> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

inline constexpr std::uint64_t kStreamDropout = 0x4450;

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline nlohmann::json eval_json(const EvalResult& e) {
  return {{"val_loss", e.loss}, {"val_accuracy", e.accuracy}, {"positions", e.positions}};
}

}  // namespace detail

template <typename S>
TrainResult train(Model<S>& model, const DataSplit& data, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw EmptyDatasetError("training needs non-empty train and val splits");
  const int context = model.config().context;
  const auto params = std::span<Parameter<S>* const>(model.parameters());
  const AdamWConfig adamw{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
  const auto val_batches = validation_batches(data.val, context, cfg.batch_size);
  const bool files = !opt.out_dir.empty();
  const auto ckpt_last = opt.out_dir / "last.ckpt";
  const auto ckpt_best = opt.out_dir / "best.ckpt";

  TrainResult result;
  AdamWState<S> state = make_adamw_state(params);
  int first_epoch = 1;

  if (files) std::filesystem::create_directories(opt.out_dir);
  if (files && opt.resume && std::filesystem::exists(ckpt_last)) {
    const nlohmann::json meta = load_checkpoint_into(model, ckpt_last, &state);
    first_epoch = meta.at("epoch").get<int>() + 1;
    result.initial = {meta.at("initial").at("val_loss").get<double>(), meta.at("initial").at("val_accuracy").get<double>(),
                      meta.at("initial").at("positions").get<long long>()};
    result.history = meta.at("history").get<std::vector<MetricsRecord>>();
    result.best_epoch = meta.at("best_epoch").get<int>();
    result.best_val_loss = meta.at("best_val_loss").get<double>();
    if (opt.log) *opt.log << "resuming after epoch " << first_epoch - 1 << "\n";
  } else {
    result.initial = validate(model, std::span<const Batch>(val_batches), cfg.micro_batch);
    if (opt.log) {
      *opt.log << "epoch 0 val_loss " << result.initial.loss << " val_accuracy " << result.initial.accuracy << "\n";
    }
  }

  const auto meta_for = [&](int epoch) {
    nlohmann::json m = opt.extra_meta;
    m["epoch"] = epoch;
    m["train"] = cfg;
    m["initial"] = detail::eval_json(result.initial);
    m["history"] = result.history;
    m["best_epoch"] = result.best_epoch;
    m["best_val_loss"] = result.best_val_loss;
    return m;
  };

  int last_epoch = cfg.epochs;
  if (opt.max_epochs_this_call > 0) last_epoch = std::min(last_epoch, first_epoch + opt.max_epochs_this_call - 1);

  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    const auto batches = epoch_batches(data.train, context, cfg.batch_size, cfg.seed, epoch);
    Rng dropout_rng = derive_rng(cfg.seed, {detail::kStreamDropout, static_cast<std::uint64_t>(epoch)});
    double loss_sum = 0.0;
    long long loss_tokens = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& b : batches) {
      long long scored = 0;
      for (int t : b.targets) scored += t != kIgnoreTarget ? 1 : 0;
      model.zero_grad();
      for (int start = 0; start < b.rows; start += cfg.micro_batch) {
        const int rows = std::min(cfg.micro_batch, b.rows - start);
        const auto off = static_cast<size_t>(start) * static_cast<size_t>(b.cols);
        const auto n = static_cast<size_t>(rows) * static_cast<size_t>(b.cols);
        const auto targets = std::span<const int>(b.targets).subspan(off, n);
        long long chunk_scored = 0;
        for (int t : targets) chunk_scored += t != kIgnoreTarget ? 1 : 0;
        if (chunk_scored == 0) continue;
        Tape<S> tape;
        const auto logits =
            model.forward(tape, std::span<const int>(b.inputs).subspan(off, n), b.cols, true, &dropout_rng);
        const auto chunk_loss = cross_entropy(logits, targets);
        const double value = static_cast<double>(chunk_loss.value()(0, 0));
        if (!std::isfinite(value)) {
          throw DivergenceError("training loss became " + std::to_string(value) + " in epoch " +
                                std::to_string(epoch) + (files ? "; last good checkpoint: " + ckpt_last.string() : ""));
        }
        loss_sum += value * static_cast<double>(chunk_scored);
        loss_tokens += chunk_scored;
        // Weight each micro-batch by its share of the batch's scored tokens.
        tape.backward(scale(chunk_loss, static_cast<S>(static_cast<double>(chunk_scored) / static_cast<double>(scored))));
      }
      if (cfg.grad_clip) clip_grad_norm(params, *cfg.grad_clip);
      try {
        adamw_step(params, state, adamw);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(epoch));
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto val = validate(model, std::span<const Batch>(val_batches), cfg.micro_batch);
    if (!std::isfinite(val.loss)) throw DivergenceError("validation loss is not finite in epoch " + std::to_string(epoch));
    MetricsRecord rec{epoch, loss_sum / static_cast<double>(std::max<long long>(loss_tokens, 1)), val.loss,
                      val.accuracy, seconds};
    result.history.push_back(rec);
    const bool improved = val.loss < result.best_val_loss;
    if (improved) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
    }
    if (opt.log) {
      *opt.log << "epoch " << epoch << " train_loss " << rec.train_loss << " val_loss " << rec.val_loss
               << " val_accuracy " << rec.val_accuracy << " seconds " << rec.seconds << "\n";
    }
    if (files) {
      const auto meta = meta_for(epoch);
      save_checkpoint(model, ckpt_last, meta, &state);
      if (improved) save_checkpoint(model, ckpt_best, meta);
      write_metrics_csv(opt.out_dir / "metrics.csv", result.history);
      write_metrics_jsonl(opt.out_dir / "metrics.jsonl", result.history);
      nlohmann::json run = meta;
      run.erase("history");
      run["model"] = model.config();
      run["data"] = data.stats;
      detail::write_text(opt.out_dir / "run.json", run.dump(2) + "\n");
    }
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  return result;
}

}  // namespace hsm
